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

#include <algorithm>
#include <cmath>
#include <random>

#include "dmlab/report.hpp"
#include "support.hpp"

using namespace dmlab;
using namespace dmlab::report;
using dmlab::testing::TempDir;
using namespace std::chrono_literals;

namespace {

sweep::SweepRecord rec(ByteCount size, int lat_ms, const std::string& cca, double bps, unsigned it = 0,
                       sweep::CellStatus status = sweep::CellStatus::ok) {
  sweep::SweepRecord r;
  r.cell = {size, std::chrono::milliseconds(lat_ms), cca, protocol::SessionMode::bulk, it};
  r.throughput_bps = bps;
  r.status = status;
  if (status == sweep::CellStatus::failed) r.error = "boom";
  return r;
}

std::vector<double> xs(std::initializer_list<double> v) { return v; }

}  // namespace

TEST_CASE("hand-computed statistics") {
  auto a = xs({10, 20, 30});
  CHECK(mean_of(a) == 20);
  CHECK(median_of(a) == 20);
  CHECK(population_stddev(a) == doctest::Approx(8.16496580927726).epsilon(1e-14));
  auto b = xs({1, 1, 1, 100});
  CHECK(median_of(b) == 1);
  CHECK(mean_of(b) == 25.75);
  auto c = xs({42.5});
  CHECK(mean_of(c) == 42.5);
  CHECK(median_of(c) == 42.5);
  CHECK(population_stddev(c) == 0);
  CHECK_THROWS_AS(mean_of({}), ReportError);
}

TEST_CASE("aggregation groups cells and drops failures") {
  std::vector<sweep::SweepRecord> records{rec(KiB, 10, "cubic", 10, 0), rec(KiB, 10, "cubic", 20, 1),
                                          rec(KiB, 10, "cubic", 0, 2, sweep::CellStatus::failed),
                                          rec(KiB, 10, "cubic", 30, 3), rec(2 * KiB, 10, "cubic", 5, 0)};
  auto agg = aggregate_with_exclusions(records);
  REQUIRE(agg.stats.size() == 2);
  CHECK(agg.stats[0].n == 3);
  CHECK(agg.stats[0].mean == 20);
  CHECK(agg.stats[1].n == 1);
  CHECK(agg.stats[1].stddev == 0);
  REQUIRE(agg.exclusions.size() == 1);
  CHECK(agg.exclusions[0].iteration == 2);
  CHECK(agg.exclusions[0].error == "boom");
}

TEST_CASE("tables") {
  CHECK(stats_table({}) == "mode\tcca\tlatency\tsize_bytes\tn\tmean_bps\tmedian_bps\tstddev_bps\n");
  auto stats = aggregate({rec(2 * KiB, 50, "cubic", 4), rec(KiB, 50, "cubic", 3), rec(KiB, 10, "cubic", 2),
                          rec(KiB, 10, "bbr", 1)});
  auto table = stats_table(stats);
  CHECK(table ==
        "mode\tcca\tlatency\tsize_bytes\tn\tmean_bps\tmedian_bps\tstddev_bps\n"
        "bulk\tbbr\t10ms\t1024\t1\t1.000\t1.000\t0.000\n"
        "bulk\tcubic\t10ms\t1024\t1\t2.000\t2.000\t0.000\n"
        "bulk\tcubic\t50ms\t1024\t1\t3.000\t3.000\t0.000\n"
        "bulk\tcubic\t50ms\t2048\t1\t4.000\t4.000\t0.000\n");
}

TEST_CASE("plot bundle shape and determinism") {
  TempDir tmp("rep");
  std::vector<sweep::SweepRecord> records;
  for (int lat : {10, 50, 100})
    for (ByteCount s : {KiB, 2 * KiB, 4 * KiB})
      for (unsigned it = 0; it < 3; ++it) records.push_back(rec(s, lat, "cubic", 1e6 * lat + s + it, it));
  auto stats = aggregate(records);
  auto a = emit_plots(stats, tmp / "a");
  auto b = emit_plots(stats, tmp / "b");
  REQUIRE(a.data_files.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.data_files[i].filename() == b.data_files[i].filename());
    CHECK(testing::slurp(a.data_files[i]) == testing::slurp(b.data_files[i]));
    auto text = testing::slurp(a.data_files[i]);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2 + 3);
  }
  CHECK(a.data_files[0].filename() == "curve-bulk-cubic-10ms.dat");
  CHECK(testing::slurp(a.command_file) == testing::slurp(b.command_file));
  auto gp = testing::slurp(a.command_file);
  CHECK(gp.find("set logscale x 2") != std::string::npos);
  CHECK(gp.find("'20ms RTT'") != std::string::npos);
  CHECK(gp.find("'200ms RTT'") != std::string::npos);
  CHECK(testing::slurp(a.summary_table) == stats_table(stats));
  CHECK_THROWS_AS(emit_plots({}, tmp / "c"), ReportError);
}

TEST_CASE("emit_tables writes stats, exclusions and metadata") {
  TempDir tmp("rep");
  auto agg = aggregate_with_exclusions({rec(KiB, 10, "cubic", 5), rec(KiB, 10, "cubic", 0, 1,
                                                                       sweep::CellStatus::failed)});
  auto files = emit_tables(agg.stats, tmp / "t", agg.exclusions);
  REQUIRE(files.size() == 3);
  CHECK(testing::slurp(files[1]) == "mode\tcca\tlatency\tsize_bytes\titeration\terror\nbulk\tcubic\t10ms\t1024\t1\tboom\n");
  CHECK(testing::slurp(files[2]).find("population") != std::string::npos);
}

TEST_CASE("randomized oracle") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + rng() % 40);
    for (auto& x : v) x = std::ldexp(static_cast<double>(rng() % 1'000'000'000), -(int)(rng() % 8));
    long double s = 0;
    for (double x : v) s += x;
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    double med = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                   : (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]) / 2.0;
    CHECK(median_of(v) == med);
    CHECK(mean_of(v) == doctest::Approx(static_cast<double>(s / v.size())).epsilon(1e-15));
  }
}
