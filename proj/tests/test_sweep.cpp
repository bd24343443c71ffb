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

#include <fstream>
#include <set>

#include "dmlab/sweep.hpp"
#include "support.hpp"

using namespace dmlab;
using namespace dmlab::sweep;
using dmlab::testing::TempDir;
using namespace std::chrono_literals;

namespace {

struct Abort {};

/// Records what the driver asks for; throughput is a function of the cell.
class FakeEnvironment : public Environment {
 public:
  std::vector<std::string> events;
  std::optional<std::size_t> abort_after;  // throw a non-std exception on this run
  std::set<ByteCount> failing_sizes;
  std::size_t runs = 0;
  bool deny = false;

  void preflight(const SweepPlan&) override {
    events.push_back("preflight");
    if (deny) throw emulation::PrivilegeError("no privilege");
  }
  void apply_latency(const emulation::LatencyProfile& p) override {
    events.push_back("apply " + format_duration(p.one_way_delay));
  }
  void clear_latency() override { events.push_back("clear"); }
  mover::TransferResult run_cell(const SweepPlan&, const CellKey& cell) override {
    if (abort_after && runs == *abort_after) throw Abort{};
    ++runs;
    if (failing_sizes.count(cell.size)) throw mover::TransferError("simulated failure");
    mover::TransferResult r;
    r.bytes_moved = cell.size;
    r.wall_time = std::chrono::nanoseconds(1'000'000 + cell.iteration);
    r.throughput_bps = mover::throughput_bps(r.bytes_moved, r.wall_time);
    r.files_ok = 1;
    r.integrity = mover::Integrity::verified;
    r.per_stream_bytes = {cell.size};
    return r;
  }
  std::string host_fingerprint() override { return "tuned"; }
};

SweepPlan make_plan(std::vector<ByteCount> sizes, std::vector<int> lat_ms, std::vector<std::string> ccas,
                    unsigned iterations, std::vector<protocol::SessionMode> modes = {protocol::SessionMode::bulk}) {
  SweepPlan plan;
  plan.series.kind = dataset::SeriesKind::bulk;
  for (auto s : sizes) {
    plan.series.sizes.push_back(s);
    dataset::DatasetSpec d;
    d.file_size = s;
    plan.series.per_size_spec[s] = d;
  }
  for (int ms : lat_ms) plan.latencies.push_back(emulation::LatencyProfile::one_way(std::chrono::milliseconds(ms)));
  plan.ccas = std::move(ccas);
  plan.modes = std::move(modes);
  plan.iterations = iterations;
  return plan;
}

std::string fixed_clock() { return "2024-01-01T00:00:00Z"; }

}  // namespace

TEST_CASE("plan validation") {
  auto plan = make_plan({KiB}, {10}, {"cubic"}, 1);
  CHECK_NOTHROW(plan.validate());
  plan.iterations = 0;
  CHECK_THROWS_AS(plan.validate(), SweepError);
  plan.iterations = 1;
  plan.ccas.clear();
  CHECK_THROWS_AS(plan.validate(), SweepError);
  auto unsorted = make_plan({2 * KiB, KiB}, {10}, {"cubic"}, 1);
  CHECK_THROWS_AS(unsorted.validate(), SweepError);
}

TEST_CASE("one cell, one record") {
  TempDir tmp("sw");
  auto plan = make_plan({KiB}, {10}, {"cubic"}, 1);
  FakeEnvironment env;
  RecordLog log(tmp / "r.jsonl");
  auto recs = run_sweep(plan, env, log, {nullptr, fixed_clock});
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].status == CellStatus::ok);
  CHECK(recs[0].timestamp == "2024-01-01T00:00:00Z");
  CHECK(recs[0].host_fingerprint == "tuned");
  CHECK(env.events == std::vector<std::string>{"preflight", "apply 10ms", "clear"});
}

TEST_CASE("loop order: latency, cca, mode, iteration, ascending size") {
  TempDir tmp("sw");
  auto plan = make_plan({KiB, 4 * KiB, 16 * KiB}, {10, 50, 100}, {"cubic"}, 2);
  CHECK(plan.cell_count() == 18);
  FakeEnvironment env;
  RecordLog log(tmp / "r.jsonl");
  auto recs = run_sweep(plan, env, log);
  REQUIRE(recs.size() == 18);
  CHECK(recs == read_records(tmp / "r.jsonl"));
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(recs[i].cell.latency == std::chrono::milliseconds(i / 6 == 0 ? 10 : i / 6 == 1 ? 50 : 100));
    CHECK(recs[i].cell.iteration == (i % 6) / 3);
    CHECK(recs[i].cell.size == (KiB << (2 * (i % 3))));
  }
  CHECK(env.events == std::vector<std::string>{"preflight", "apply 10ms", "clear", "apply 50ms", "clear",
                                               "apply 100ms", "clear"});

  auto plan2 = make_plan({KiB}, {10}, {"cubic", "bbr"}, 2,
                         {protocol::SessionMode::bulk, protocol::SessionMode::streaming});
  auto cells = plan_cells(plan2);
  REQUIRE(cells.size() == 8);
  CHECK(cells[0].cca == "cubic");
  CHECK(cells[0].mode == protocol::SessionMode::bulk);
  CHECK(cells[1].iteration == 1);
  CHECK(cells[2].mode == protocol::SessionMode::streaming);
  CHECK(cells[4].cca == "bbr");
}

TEST_CASE("interrupted sweep resumes without duplicates") {
  TempDir tmp("sw");
  auto plan = make_plan({KiB, 2 * KiB, 4 * KiB}, {10, 50}, {"cubic"}, 2);
  {
    FakeEnvironment env;
    env.abort_after = 7;
    RecordLog log(tmp / "r.jsonl");
    CHECK_THROWS_AS(run_sweep(plan, env, log), Abort);
    CHECK(log.records().size() == 7);
    CHECK(env.events.back() == "clear");
  }
  FakeEnvironment env;
  RecordLog log(tmp / "r.jsonl");
  CHECK(log.records().size() == 7);
  auto recs = run_sweep(plan, env, log);
  CHECK(env.runs == 5);
  REQUIRE(recs.size() == 12);
  std::set<CellKey> keys;
  for (const auto& r : recs) keys.insert(r.cell);
  CHECK(keys.size() == 12);
  CHECK(env.events == std::vector<std::string>{"preflight", "apply 50ms", "clear"});

  FakeEnvironment idle;
  run_sweep(plan, idle, log);
  CHECK(idle.events.empty());
}

TEST_CASE("a torn final line is dropped on reopen") {
  TempDir tmp("sw");
  auto plan = make_plan({KiB, 2 * KiB}, {10}, {"cubic"}, 1);
  {
    FakeEnvironment env;
    RecordLog log(tmp / "r.jsonl");
    run_sweep(plan, env, log);
  }
  {
    std::ofstream out(tmp / "r.jsonl", std::ios::app);
    out << "{\"size\":4096,\"lat";
  }
  RecordLog log(tmp / "r.jsonl");
  CHECK(log.records().size() == 2);
  auto text = testing::slurp(tmp / "r.jsonl");
  CHECK(text.back() == '\n');
  CHECK(text.find("\"lat\n") == std::string::npos);
}

TEST_CASE("foreign or corrupt logs are refused") {
  TempDir tmp("sw");
  testing::spit(tmp / "x.jsonl", "{\"schema\":\"other\"}\n");
  CHECK_THROWS_AS(RecordLog(tmp / "x.jsonl"), SweepError);
  testing::spit(tmp / "y.jsonl", header_line() + "\nnot json\n");
  CHECK_THROWS_AS(read_records(tmp / "y.jsonl"), SweepError);
}

TEST_CASE("failed cells are recorded and the sweep continues") {
  TempDir tmp("sw");
  auto plan = make_plan({KiB, 2 * KiB, 4 * KiB}, {10}, {"cubic"}, 1);
  FakeEnvironment env;
  env.failing_sizes = {2 * KiB};
  RecordLog log(tmp / "r.jsonl");
  auto recs = run_sweep(plan, env, log);
  REQUIRE(recs.size() == 3);
  CHECK(recs[1].status == CellStatus::failed);
  CHECK(recs[1].error == "simulated failure");
  CHECK(recs[2].status == CellStatus::ok);
}

TEST_CASE("preflight failure runs nothing") {
  TempDir tmp("sw");
  auto plan = make_plan({KiB}, {10}, {"cubic"}, 1);
  FakeEnvironment env;
  env.deny = true;
  RecordLog log(tmp / "r.jsonl");
  CHECK_THROWS_AS(run_sweep(plan, env, log), emulation::PrivilegeError);
  CHECK(env.runs == 0);
  CHECK(log.records().empty());
}

TEST_CASE("record lines round-trip") {
  SweepRecord r;
  r.cell = {64 * MiB, 50ms, "bbr", protocol::SessionMode::streaming, 2};
  r.status = CellStatus::failed;
  r.error = "tab\there \"quoted\"";
  r.bytes_moved = 12345;
  r.wall_time_ns = 987654321;
  r.throughput_bps = 1.25e9;
  r.files_ok = 3;
  r.files_failed = 1;
  r.integrity = mover::Integrity::failed;
  r.timestamp = "2024-05-06T07:08:09Z";
  r.host_fingerprint = "partial";
  CHECK(record_from_line(record_to_line(r)) == r);
  CHECK(header_line().find(kLoopOrder) != std::string::npos);
}
