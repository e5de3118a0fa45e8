//------------------------------------------------------------------------------
//
//   Copyright 2026 The attnorm Authors
//
//   Licensed under the Apache License, Version 2.0 (the "License");
//   you may not use this file except in compliance with the License.
//   You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
//   Unless required by applicable law or agreed to in writing, software
//   distributed under the License is distributed on an "AS IS" BASIS,
//   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//   See the License for the specific language governing permissions and
//   limitations under the License.
//
//------------------------------------------------------------------------------
#pragma once

// Everything except the command-line front end (attnorm/cli.hpp).

#include "attnorm/attentive_norm.hpp"
#include "attnorm/autograd.hpp"
#include "attnorm/bench.hpp"
#include "attnorm/gan/model.hpp"
#include "attnorm/gan/synth.hpp"
#include "attnorm/gan/trainer.hpp"
#include "attnorm/gradcheck.hpp"
#include "attnorm/gradcheck_suite.hpp"
#include "attnorm/io.hpp"
#include "attnorm/kernels.hpp"
#include "attnorm/rng.hpp"
#include "attnorm/run_config.hpp"
#include "attnorm/self_attention.hpp"
#include "attnorm/tensor.hpp"
