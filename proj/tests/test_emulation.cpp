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

#include <cstdlib>
#include <sstream>

#include "dmlab/emulation.hpp"
#include "dmlab/mover.hpp"
#include "support.hpp"

using namespace dmlab;
using namespace dmlab::emulation;
using dmlab::testing::TempDir;
using namespace std::chrono_literals;

namespace {

/// Puts an inert `tc` on PATH so preflight's availability check passes
/// while every command goes to the injected executor.
class FakeTcOnPath {
 public:
  FakeTcOnPath() : dir_("fake-tc") {
    testing::spit(dir_ / "tc", "#!/bin/sh\nexit 0\n");
    fs::permissions(dir_ / "tc", fs::perms::owner_all);
    const char* old = std::getenv("PATH");
    old_ = old ? old : "";
    ::setenv("PATH", (dir_.path().string() + ":" + old_).c_str(), 1);
  }
  ~FakeTcOnPath() { ::setenv("PATH", old_.c_str(), 1); }

 private:
  TempDir dir_;
  std::string old_;
};

struct Recorder {
  std::vector<std::vector<std::string>> calls;
  CommandRunner runner() {
    return CommandRunner([this](const std::vector<std::string>& argv) {
      calls.push_back(argv);
      return CommandResult{};
    });
  }
};

}  // namespace

TEST_CASE("profile basics") {
  auto p = LatencyProfile::one_way(50ms);
  CHECK(p.expected_rtt() == Rtt::ms(100));
  CHECK(p.describe() == "lo delay 50ms");
  CHECK_NOTHROW(p.validate());
  p.jitter = 60ms;
  CHECK_THROWS_AS(p.validate(), EmulationError);
  p.jitter = 5ms;
  p.loss = 1.5;
  CHECK_THROWS_AS(p.validate(), EmulationError);
  p.loss = 0.01;
  p.interface = "not/valid";
  CHECK_THROWS_AS(p.validate(), EmulationError);
}

TEST_CASE("netem command lines") {
  auto p = LatencyProfile::one_way(50ms);
  CHECK(render_command(netem_apply_command(p)) == "tc qdisc replace dev lo root netem limit 100000 delay 50ms");
  p.jitter = 2ms;
  p.loss = 0.001;
  p.rate_cap = Bandwidth::gbps(10);
  CHECK(render_command(netem_apply_command(p)) ==
        "tc qdisc replace dev lo root netem limit 100000 delay 50ms 2ms loss 0.1% rate 10000000000bit");
  CHECK(render_command(netem_clear_command("eth0")) == "tc qdisc del dev eth0 root");
}

TEST_CASE("judge and median") {
  CHECK(judge(Rtt::ms(21), Rtt::ms(20)).pass);
  CHECK(judge(Rtt::ms(24), Rtt::ms(20)).pass);
  CHECK_FALSE(judge(Rtt::ms(25), Rtt::ms(20)).pass);
  CHECK(judge(Rtt::ms(219), Rtt::ms(200)).pass);
  CHECK_FALSE(judge(Rtt::ms(170), Rtt::ms(200)).pass);
  CHECK(judge(Rtt(300us), Rtt{}).pass);
  CHECK(median_rtt({Rtt::ms(3), Rtt::ms(1), Rtt::ms(2)}) == Rtt::ms(2));
  CHECK(median_rtt({Rtt::ms(4), Rtt::ms(1), Rtt::ms(2), Rtt::ms(3)}) == Rtt(2500us));
  CHECK_THROWS_AS(median_rtt({}), EmulationError);
}

TEST_CASE("dry run prints commands and touches nothing") {
  TempDir tmp("emu");
  std::ostringstream out;
  auto runner = CommandRunner::dry_run(out);
  {
    TcBackend tc(runner, tmp / "state.json");
    tc.apply(LatencyProfile::one_way(10ms));
    CHECK_FALSE(fs::exists(tmp / "state.json"));
    tc.clear();
  }
  CHECK(out.str() ==
        "tc qdisc replace dev lo root netem limit 100000 delay 10ms\n"
        "tc qdisc del dev lo root\n");
  CHECK(runner.history().size() == 2);
  CHECK(make_backend(BackendKind::automatic, runner, tmp / "s.json")->name() == "tc");
}

TEST_CASE("tc backend lifecycle through the command runner") {
  if (!has_net_admin()) {
    MESSAGE("skipped: tc preflight needs CAP_NET_ADMIN");
    return;
  }
  FakeTcOnPath fake;
  TempDir tmp("emu");
  Recorder rec;
  auto runner = rec.runner();
  auto state = tmp / "state.json";
  {
    TcBackend tc(runner, state);
    tc.apply(LatencyProfile::one_way(10ms));
    auto s = read_state(state);
    REQUIRE(s);
    CHECK(s->backend == "tc");
    CHECK(s->profile.one_way_delay == 10ms);
    CHECK(s->pid == ::getpid());

    tc.apply(LatencyProfile::one_way(50ms));
    CHECK(tc.active()->one_way_delay == 50ms);
    CHECK(read_state(state)->profile.one_way_delay == 50ms);

    tc.clear();
    CHECK_FALSE(fs::exists(state));
    CHECK_NOTHROW(tc.clear());
  }
  REQUIRE(rec.calls.size() == 3);
  CHECK(render_command(rec.calls[0]) == "tc qdisc replace dev lo root netem limit 100000 delay 10ms");
  CHECK(render_command(rec.calls[1]) == "tc qdisc replace dev lo root netem limit 100000 delay 50ms");
  CHECK(render_command(rec.calls[2]) == "tc qdisc del dev lo root");
}

TEST_CASE("state survives a restart and recover undoes it") {
  TempDir tmp("emu");
  auto state = tmp / "state.json";
  StateRecord r{"tc", "lo", LatencyProfile::one_way(100ms), 4242};
  r.profile.rate_cap = Bandwidth::gbps(1);
  write_state(state, r);
  auto back = read_state(state);
  REQUIRE(back);
  CHECK(back->profile == r.profile);
  CHECK(back->pid == 4242);

  Recorder rec;
  auto runner = rec.runner();
  CHECK(recover(state, runner));
  CHECK_FALSE(fs::exists(state));
  REQUIRE(rec.calls.size() == 1);
  CHECK(render_command(rec.calls[0]) == "tc qdisc del dev lo root");
  CHECK_FALSE(recover(state, runner));
  CHECK_FALSE(read_state(tmp / "absent.json"));
}

TEST_CASE("emulator handles") {
  if (!has_net_admin()) {
    MESSAGE("skipped: needs CAP_NET_ADMIN");
    return;
  }
  FakeTcOnPath fake;
  Recorder rec;
  auto runner = rec.runner();
  Emulator emu(std::make_unique<TcBackend>(runner, fs::path{}));
  {
    auto first = emu.apply(LatencyProfile::one_way(10ms));
    auto second = emu.apply(LatencyProfile::one_way(20ms));
    CHECK_FALSE(first.active());
    CHECK(second.active());
    first.clear();
    CHECK(emu.active()->one_way_delay == 20ms);
  }
  CHECK_FALSE(emu.active());
  {
    auto kept = emu.apply(LatencyProfile::one_way(30ms));
    kept.release();
  }
  CHECK(emu.active()->one_way_delay == 30ms);
  emu.clear();
  CHECK_FALSE(emu.active());
}

TEST_CASE("delay line shapes the local path") {
  if (!testing::can_emulate()) {
    MESSAGE("skipped: the delay line needs CAP_NET_ADMIN and /dev/net/tun");
    return;
  }
  TempDir tmp("emu");
  auto rx = mover::serve({"0.0.0.0", 0}, {tmp / "sink"});
  DelayLineBackend dl({}, tmp / "state.json");
  auto peer = dl.route({"0.0.0.0", rx.port()});
  CHECK(peer.host == dl.config().mirror_address);

  auto base = measure_rtt(peer, 5, Rtt{});
  CHECK(base.pass);
  CHECK(base.measured_rtt.round_trip() < 2ms);

  dl.apply(LatencyProfile::one_way(10ms));
  CHECK(fs::exists(tmp / "state.json"));
  auto ten = measure_rtt(peer, 5, Rtt::ms(20));
  CHECK(ten.pass);

  dl.apply(LatencyProfile::one_way(30ms));
  auto thirty = measure_rtt(peer, 5, Rtt::ms(60));
  CHECK(thirty.pass);

  dl.clear();
  CHECK_NOTHROW(dl.clear());
  CHECK_FALSE(dl.active());
  auto after = measure_rtt(peer, 5, Rtt{});
  CHECK(after.pass);
  CHECK(dl.stats().packets > 0);
}
