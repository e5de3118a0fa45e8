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
#include "attnorm/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include <unistd.h>

using namespace attnorm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(std::string const &name)
{
  fs::path dir = fs::temp_directory_path() / ("attnorm_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  return dir;
}

struct Result
{
  int         code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args)
{
  args.insert(args.begin(), "attnorm");
  std::vector<char const *> argv;
  for (auto const &a : args)
  {
    argv.push_back(a.c_str());
  }
  std::ostringstream out, err;
  int const code = cli::cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// file name -> bytes for every regular file under dir, run_config.txt excluded.
std::map<std::string, std::string> snapshot(fs::path const &dir)
{
  std::map<std::string, std::string> files;
  for (auto const &e : fs::directory_iterator(dir))
  {
    if (e.is_regular_file() && e.path().filename() != "run_config.txt")
    {
      files[e.path().filename().string()] = io::read_file(e.path());
    }
  }
  return files;
}

/// metrics.csv with the trailing ms column removed.
std::string metrics_without_time(fs::path const &csv)
{
  std::istringstream in(io::read_file(csv));
  std::string        line, out;
  while (std::getline(in, line))
  {
    out += line.substr(0, line.rfind(',')) + "\n";
  }
  return out;
}

}  // namespace

TEST(Cli, GradcheckSeedZeroExitsZero)
{
  auto const r = run({"gradcheck", "--seed", "0"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("pass"), std::string::npos);
}

TEST(Cli, FixturesAreByteIdenticalAcrossRuns)
{
  fs::path const a = scratch("fixtures_a"), b = scratch("fixtures_b");
  ASSERT_EQ(run({"fixtures", "--seed", "7", "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"fixtures", "--seed", "7", "--out", b.string()}).code, 0);
  auto const sa = snapshot(a);
  EXPECT_GE(sa.size(), 9u);
  EXPECT_EQ(sa, snapshot(b));
  fs::path const c = scratch("fixtures_c");
  ASSERT_EQ(run({"fixtures", "--seed", "8", "--out", c.string()}).code, 0);
  EXPECT_NE(sa, snapshot(c));
}

TEST(Cli, BenchWritesOneRowPerModuleAndSide)
{
  fs::path const dir = scratch("bench");
  auto const     r   = run({"bench", "--sides", "4,8,12,16", "--reps", "10", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(io::read_file(dir / "bench.csv"));
  std::string        line;
  std::getline(csv, line);
  EXPECT_EQ(line, "module,side,channels,n,reps,median_ns,mad_ns,flops");
  std::size_t rows = 0;
  while (std::getline(csv, line))
  {
    rows += line.empty() ? 0 : 1;
  }
  EXPECT_EQ(rows, 8u);
  EXPECT_TRUE(fs::exists(dir / "run_config.txt"));
}

TEST(Cli, BenchRejectsTooFewReps)
{
  EXPECT_EQ(run({"bench", "--sides", "4,8,12", "--reps", "3", "--out", scratch("bench_bad").string()}).code, 1);
}

TEST(Cli, ValidationFailuresExitOne)
{
  EXPECT_EQ(run({"gradcheck", "--bogus"}).code, 1);
  EXPECT_EQ(run({"nonsense"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"layout-dump", "--mode", "sideways"}).code, 1);
  EXPECT_EQ(run({"gradcheck", "--stat", "group"}).code, 1);
  EXPECT_EQ(run({"gradcheck", "--tau", "0"}).code, 1);
}

TEST(Cli, UnreadableInputExitsTwo)
{
  fs::path const dir = scratch("layout_missing");
  auto const     r   = run({"layout-dump", "--input", (dir / "nope.ant").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("I/O"), std::string::npos);
  EXPECT_EQ(run({"replay", (dir / "no_config.txt").string()}).code, 2);
}

TEST(Cli, LayoutDumpWritesMapsAndStatistics)
{
  fs::path const dir = scratch("layout");
  auto const     r   = run({"layout-dump", "--n", "4", "--mode", "eval", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t pgms = 0;
  for (auto const &e : fs::directory_iterator(dir))
  {
    pgms += e.path().extension() == ".pgm" ? 1 : 0;
  }
  EXPECT_GE(pgms, 4u);
}

TEST(RunConfig, RenderParseRoundTrip)
{
  RngStream rng(12);
  for (int trial = 0; trial < 50; ++trial)
  {
    RunConfig c;
    c.command  = trial % 2 ? "bench" : "demo-train";
    c.seed     = rng.next();
    c.n        = 1 + rng.uniform_int(32);
    c.tau      = rng.uniform(1e-3, 5.0);
    c.sides    = {1 + rng.uniform_int(300), 1 + rng.uniform_int(300)};
    c.mode     = trial % 3 ? "train" : "eval";
    c.stat     = trial % 5 ? "instance" : "batch";
    c.mean     = trial % 7 ? "weighted" : "literal";
    c.out      = "dir " + std::to_string(trial);
    c.channels = 1 + rng.uniform_int(64);
    c.steps    = rng.uniform_int(5000);
    c.ssr      = trial % 2 == 0;
    c.an       = trial % 3 == 0;
    c.d_an     = trial % 4 == 0;
    c.input    = trial % 2 ? "" : "in.ant";
    EXPECT_EQ(RunConfig::parse(c.render()), c);
  }
  EXPECT_THROW(RunConfig::parse("seed=abc\n"), DomainError);
  EXPECT_THROW(RunConfig::parse("colour=blue\n"), DomainError);
  EXPECT_THROW(RunConfig::parse("no equals sign\n"), DomainError);
}

TEST(Cli, ReplayReproducesFixtures)
{
  fs::path const dir = scratch("replay_fixtures");
  ASSERT_EQ(run({"fixtures", "--seed", "3", "--out", dir.string()}).code, 0);
  auto const first = snapshot(dir);
  ASSERT_EQ(run({"replay", (dir / "run_config.txt").string()}).code, 0);
  EXPECT_EQ(snapshot(dir), first);
}

TEST(Cli, ReplayReproducesTraining)
{
  fs::path const dir = scratch("replay_train");
  ASSERT_EQ(run({"demo-train", "--steps", "3", "--every", "2", "--batch", "4", "--out", dir.string()}).code, 0);
  auto const csv  = metrics_without_time(dir / "metrics.csv");
  auto const ckpt = io::read_file(dir / "ckpt_3.ant");
  auto const grid = io::read_file(dir / "samples_3.pgm");
  EXPECT_TRUE(fs::exists(dir / "ckpt_2.manifest"));
  ASSERT_EQ(run({"replay", (dir / "run_config.txt").string()}).code, 0);
  EXPECT_EQ(metrics_without_time(dir / "metrics.csv"), csv);
  EXPECT_EQ(io::read_file(dir / "ckpt_3.ant"), ckpt);
  EXPECT_EQ(io::read_file(dir / "samples_3.pgm"), grid);

  // a layout dump from the trained checkpoint
  fs::path const dump = scratch("replay_train_dump");
  auto const     r    = run({"layout-dump", "--checkpoint", (dir / "ckpt_3").string(), "--out", dump.string()});
  EXPECT_EQ(r.code, 0) << r.err;
}
