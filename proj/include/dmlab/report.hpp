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

#pragma once

// Statistics and plot-ready artifacts computed from sweep records alone.

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/sweep.hpp"

namespace dmlab::report {

namespace fs = std::filesystem;
using std::chrono::microseconds;

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CellCoord {
  ByteCount size = 0;
  microseconds latency{0};
  std::string cca;
  protocol::SessionMode mode = protocol::SessionMode::bulk;
  friend auto operator<=>(const CellCoord&, const CellCoord&) = default;
};

struct CellStats {
  CellCoord coord;
  double mean = 0;    // bits/s
  double median = 0;  // bits/s
  double stddev = 0;  // bits/s, population
  std::size_t n = 0;
};

struct Exclusion {
  CellCoord coord;
  unsigned iteration = 0;
  std::string error;
};

struct Aggregate {
  std::vector<CellStats> stats;       // sorted by (size, latency, cca, mode)
  std::vector<Exclusion> exclusions;  // failed records, in log order
};

// Sample statistics. mean sums in the given order; median averages the
// middle pair for even counts; stddev divides by n.
double mean_of(std::span<const double> xs);
double median_of(std::span<const double> xs);
double population_stddev(std::span<const double> xs);

std::vector<CellStats> aggregate(const std::vector<sweep::SweepRecord>& records);
Aggregate aggregate_with_exclusions(const std::vector<sweep::SweepRecord>& records);

struct PlotBundle {
  std::vector<fs::path> data_files;
  fs::path command_file;
  fs::path summary_table;
};

/// "bulk-cubic-50ms": the curve's identity, also used in file names.
std::string curve_name(const CellCoord& c);

/// One data file per (mode, cca, latency) curve plus a gnuplot command file
/// drawing one chart per (mode, cca) with a curve per latency.
PlotBundle emit_plots(const std::vector<CellStats>& stats, const fs::path& output_dir);

/// stats.tsv sorted by (mode, cca, latency, size); exclusions.tsv;
/// metadata.txt describing the statistics. Returns the files written.
std::vector<fs::path> emit_tables(const std::vector<CellStats>& stats, const fs::path& output_dir,
                                  const std::vector<Exclusion>& exclusions = {});

std::string stats_table(const std::vector<CellStats>& stats);

}  // namespace dmlab::report
