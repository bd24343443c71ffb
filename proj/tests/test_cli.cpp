// Copyright 2026 The dmlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <sstream>

#include "dmlab/cli.hpp"
#include "dmlab/sweep.hpp"
#include "dmlab/tuning.hpp"
#include "support.hpp"

using namespace dmlab;
using dmlab::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) m[e.path().string()] = testing::slurp(e.path());
  return m;
}

}  // namespace

TEST_CASE("command list and usage") {
  const std::vector<std::string> expected{
      "calc bdp",   "calc ceiling", "calc ber",     "calc loss",  "calc volume", "dataset gen", "dataset verify",
      "dataset series", "serve",    "transfer",     "stream",     "stage",       "emu apply",   "emu clear",
      "emu rtt",    "tune audit",   "tune apply",   "sweep run",  "report stats", "report plots", "report tables"};
  CHECK(cli::command_paths() == expected);
  auto text = cli::usage();
  for (const auto& p : expected) CHECK_MESSAGE(text.find("dmlab " + p) != std::string::npos, p);

  auto none = run({});
  CHECK(none.code == cli::kExitUsage);
  CHECK(none.err.find("Commands:") != std::string::npos);
  auto help = run({"--help"});
  CHECK(help.code == cli::kExitOk);
  auto nested = run({"calc", "bdp", "--help"});
  CHECK(nested.code == cli::kExitOk);
  CHECK(nested.out.find("dmlab calc bdp") != std::string::npos);
  CHECK(run({"--version"}).out.find("dmlab ") == 0);
}

TEST_CASE("calculators") {
  auto bdp = run({"calc", "bdp", "--bw", "1Gbps", "--rtt", "100ms"});
  CHECK(bdp.code == 0);
  CHECK(bdp.out == "12500000 bytes\n");
  CHECK(run({"calc", "ceiling", "--window", "64KiB", "--rtt", "100ms"}).out == "5242880 bps\n");
  auto vol = run({"calc", "volume", "--bw", "100Gbps"});
  CHECK(vol.out.find("1080000000000000 bytes/day") != std::string::npos);
  CHECK(vol.out.find("1000 TB/day rounded") != std::string::npos);
  CHECK(run({"calc", "ber", "--loss", "4.6e-5"}).out.find("e-09") != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(run({"calc", "bdp", "--bw", "1000", "--rtt", "100ms"}).code == cli::kExitUsage);
  CHECK(run({"calc", "bdp", "--bw", "1Gbps"}).code == cli::kExitUsage);
  CHECK(run({"calc", "nope"}).code == cli::kExitUsage);
  CHECK(run({"frobnicate"}).code == cli::kExitUsage);
  TempDir tmp("cli");
  auto missing = run({"dataset", "verify", "--root", (tmp / "absent").string()});
  CHECK(missing.code == cli::kExitFailure);
  CHECK(missing.err.find("dmlab: error:") == 0);
}

TEST_CASE("transfer without a peer names every way to provide one") {
  TempDir tmp("cli");
  ::unsetenv("DMLAB_PEER");
  testing::spit(tmp / "lab.yaml", "schema_version: 1\n");
  auto r = run({"--config", (tmp / "lab.yaml").string(), "transfer", "--synthetic", "1KiB", "--count", "1"});
  CHECK(r.code == cli::kExitFailure);
  CHECK(r.err.find("--peer") != std::string::npos);
  CHECK(r.err.find("DMLAB_PEER") != std::string::npos);
  CHECK(r.err.find("peer:") != std::string::npos);
}

TEST_CASE("dry runs change nothing") {
  TempDir tmp("cli");
  SUBCASE("tune apply") {
    tuning::SysctlTree tree(tmp / "sys");
    for (const auto& p : tuning::TuningTarget::defaults().kernel_params) testing::spit(tree.path_of(p.key), "0\n");
    auto before = tree_contents(tmp / "sys");
    auto r = run({"tune", "apply", "--dry-run", "--sysctl-root", (tmp / "sys").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("sysctl -w") != std::string::npos);
    CHECK(tree_contents(tmp / "sys") == before);
    auto audit = run({"tune", "audit", "--check", "--sysctl-root", (tmp / "sys").string()});
    CHECK(audit.code == cli::kExitFailure);
    CHECK(audit.out.find("overall: untuned (0/8 match)") != std::string::npos);
  }
  SUBCASE("dataset gen") {
    auto r = run({"dataset", "gen", "--size", "1MiB", "--count", "4", "--root", (tmp / "ds").string(), "--dry-run"});
    CHECK(r.code == 0);
    CHECK_FALSE(fs::exists(tmp / "ds"));
  }
  SUBCASE("emu apply") {
    auto state = tmp / "state.json";
    auto r = run({"emu", "apply", "--delay", "25ms", "--backend", "tc", "--interface", "lo", "--state-file",
                  state.string(), "--dry-run"});
    CHECK(r.code == 0);
    CHECK(r.out.find("tc qdisc replace dev lo root netem limit 100000 delay 25ms") != std::string::npos);
    CHECK_FALSE(fs::exists(state));
    auto dl = run({"emu", "apply", "--delay", "25ms", "--backend", "delay-line", "--dry-run"});
    CHECK(dl.code == 0);
    CHECK(dl.out.find("would create TUN device") == 0);
  }
  SUBCASE("emu clear with nothing applied") {
    auto r = run({"emu", "clear", "--state-file", (tmp / "none.json").string(), "--dry-run"});
    CHECK(r.code == 0);
  }
}

TEST_CASE("report commands on a small log") {
  TempDir tmp("cli");
  auto log = (tmp / "r.jsonl").string();
  auto dry = run({"sweep", "run", "--log", log, "--latencies", "10ms", "--min", "1KiB", "--max", "4KiB",
                  "--budget", "16KiB", "--iterations", "1", "--dry-run"});
  CHECK(dry.code == 0);
  CHECK_FALSE(fs::exists(log));
  testing::spit(log, sweep::header_line() + "\n");
  auto empty = run({"report", "stats", "--log", log});
  CHECK(empty.code == cli::kExitOk);
  CHECK(empty.out == "mode\tcca\tlatency\tsize_bytes\tn\tmean_bps\tmedian_bps\tstddev_bps\n");
}
