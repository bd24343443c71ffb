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

#include "dmlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace dmlab::report {

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw ReportError("mean of an empty sample");
  double sum = 0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

double median_of(std::span<const double> xs) {
  if (xs.empty()) throw ReportError("median of an empty sample");
  std::vector<double> s(xs.begin(), xs.end());
  std::sort(s.begin(), s.end());
  const auto n = s.size();
  return n % 2 ? s[n / 2] : (s[n / 2 - 1] + s[n / 2]) / 2.0;
}

double population_stddev(std::span<const double> xs) {
  const double m = mean_of(xs);
  double ss = 0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

Aggregate aggregate_with_exclusions(const std::vector<sweep::SweepRecord>& records) {
  Aggregate out;
  std::map<CellCoord, std::vector<double>> groups;
  for (const auto& r : records) {
    CellCoord c{r.cell.size, r.cell.latency, r.cell.cca, r.cell.mode};
    if (r.status != sweep::CellStatus::ok) {
      out.exclusions.push_back({c, r.cell.iteration, r.error});
      continue;
    }
    groups[c].push_back(r.throughput_bps);
  }
  for (const auto& [coord, xs] : groups)
    out.stats.push_back({coord, mean_of(xs), median_of(xs), xs.size() > 1 ? population_stddev(xs) : 0.0, xs.size()});
  return out;
}

std::vector<CellStats> aggregate(const std::vector<sweep::SweepRecord>& records) {
  return aggregate_with_exclusions(records).stats;
}

// ---- files ---------------------------------------------------------------------

namespace {

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw ReportError("cannot write " + path.string());
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ReportError("cannot create output directory " + dir.string());
}

std::string gp_quote(const std::string& s) { return "'" + s + "'"; }

}  // namespace

std::string curve_name(const CellCoord& c) {
  return protocol::to_string(c.mode) + "-" + c.cca + "-" + format_duration(c.latency);
}

PlotBundle emit_plots(const std::vector<CellStats>& stats, const fs::path& output_dir) {
  if (stats.empty()) throw ReportError("no statistics to plot");
  prepare_dir(output_dir);

  // (mode, cca) -> latency -> rows sorted by size
  struct Key {
    protocol::SessionMode mode;
    std::string cca;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, std::map<microseconds, std::vector<const CellStats*>>> charts;
  for (const auto& s : stats) charts[{s.coord.mode, s.coord.cca}][s.coord.latency].push_back(&s);

  PlotBundle bundle;
  std::ostringstream gp;
  gp << "# gnuplot command file: gnuplot plot.gp\n"
     << "set terminal pngcairo size 1200,800 enhanced\n"
     << "set logscale x 2\n"
     << "set format x '2^{%L}'\n"
     << "set xlabel 'File size (bytes)'\n"
     << "set ylabel 'Mean transfer rate (Gbit/s)'\n"
     << "set key top left\n"
     << "set grid\n";
  for (auto& [key, curves] : charts) {
    const auto chart = protocol::to_string(key.mode) + "-" + key.cca;
    gp << "\nset output " << gp_quote("throughput-" + chart + ".png") << "\n"
       << "set title " << gp_quote(protocol::to_string(key.mode) + " transfer, " + key.cca) << "\n"
       << "plot";
    bool first = true;
    for (auto& [latency, rows] : curves) {
      std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->coord.size < b->coord.size; });
      const auto name = curve_name(rows.front()->coord);
      const auto file = "curve-" + name + ".dat";
      std::ostringstream dat;
      dat << "# " << name << "\n# size_bytes mean_bps median_bps stddev_bps n\n";
      for (const auto* r : rows)
        dat << r->coord.size << ' ' << num(r->mean) << ' ' << num(r->median) << ' ' << num(r->stddev) << ' ' << r->n
            << '\n';
      write_file(output_dir / file, dat.str());
      bundle.data_files.push_back(output_dir / file);
      gp << (first ? " " : ", \\\n     ") << gp_quote(file) << " using 1:($2/1e9) with linespoints title "
         << gp_quote(format_duration(2 * latency) + " RTT");
      first = false;
    }
    gp << "\n";
  }
  bundle.command_file = output_dir / "plot.gp";
  write_file(bundle.command_file, gp.str());
  bundle.summary_table = output_dir / "stats.tsv";
  write_file(bundle.summary_table, stats_table(stats));
  return bundle;
}

std::string stats_table(const std::vector<CellStats>& stats) {
  std::vector<const CellStats*> rows;
  for (const auto& s : stats) rows.push_back(&s);
  std::sort(rows.begin(), rows.end(), [](auto* a, auto* b) {
    return std::tie(a->coord.mode, a->coord.cca, a->coord.latency, a->coord.size) <
           std::tie(b->coord.mode, b->coord.cca, b->coord.latency, b->coord.size);
  });
  std::ostringstream out;
  out << "mode\tcca\tlatency\tsize_bytes\tn\tmean_bps\tmedian_bps\tstddev_bps\n";
  for (const auto* r : rows)
    out << protocol::to_string(r->coord.mode) << '\t' << r->coord.cca << '\t' << format_duration(r->coord.latency)
        << '\t' << r->coord.size << '\t' << r->n << '\t' << num(r->mean) << '\t' << num(r->median) << '\t'
        << num(r->stddev) << '\n';
  return out.str();
}

std::vector<fs::path> emit_tables(const std::vector<CellStats>& stats, const fs::path& output_dir,
                                  const std::vector<Exclusion>& exclusions) {
  prepare_dir(output_dir);
  std::vector<fs::path> written;
  written.push_back(output_dir / "stats.tsv");
  write_file(written.back(), stats_table(stats));

  std::ostringstream ex;
  ex << "mode\tcca\tlatency\tsize_bytes\titeration\terror\n";
  for (const auto& e : exclusions) {
    auto err = e.error;
    std::replace(err.begin(), err.end(), '\t', ' ');
    std::replace(err.begin(), err.end(), '\n', ' ');
    ex << protocol::to_string(e.coord.mode) << '\t' << e.coord.cca << '\t' << format_duration(e.coord.latency) << '\t'
       << e.coord.size << '\t' << e.iteration << '\t' << err << '\n';
  }
  written.push_back(output_dir / "exclusions.tsv");
  write_file(written.back(), ex.str());

  std::ostringstream meta;
  std::size_t samples = 0;
  for (const auto& s : stats) samples += s.n;
  meta << "cells: " << stats.size() << "\n"
       << "samples: " << samples << "\n"
       << "excluded_failed_records: " << exclusions.size() << "\n"
       << "statistic_unit: bits per second\n"
       << "mean: arithmetic mean over successful iterations\n"
       << "median: middle order statistic, mean of the two middle values for even n\n"
       << "stddev: population standard deviation (divides by n)\n"
       << "latency_column: one-way delay of the applied profile\n"
       << "sweep_loop_order: " << sweep::kLoopOrder << "\n"
       << "iteration_interleaving: each (latency, cca, mode) block completes all iterations before the next block\n";
  written.push_back(output_dir / "metadata.txt");
  write_file(written.back(), meta.str());
  return written;
}

}  // namespace dmlab::report
