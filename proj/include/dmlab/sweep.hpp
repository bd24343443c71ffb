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

// Experiment matrix runner: latency x CCA x mode x iteration x size, with an
// append-only record log that doubles as the resume point.
//
// Loop nesting, outermost first: latency, cca, mode, iteration, size
// (ascending). Each (latency, cca, mode) block therefore runs complete
// smallest-to-largest passes, one per iteration.

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/dataset.hpp"
#include "dmlab/emulation.hpp"
#include "dmlab/mover.hpp"

namespace dmlab::sweep {

namespace fs = std::filesystem;
using std::chrono::microseconds;
using protocol::SessionMode;

class SweepError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kRecordSchema = "dmlab-sweep-records";
inline constexpr int kRecordSchemaVersion = 1;
inline constexpr const char* kLoopOrder = "latency,cca,mode,iteration,size";

struct SweepPlan {
  dataset::SweepSeries series;
  std::vector<emulation::LatencyProfile> latencies;
  std::vector<std::string> ccas;
  std::vector<SessionMode> modes;
  unsigned iterations = 3;
  mover::TransferSpec transfer_template;
  bool regenerate_per_iteration = false;

  /// iterations >= 1 and every axis non-empty.
  void validate() const;
  std::size_t cell_count() const;
};

struct CellKey {
  ByteCount size = 0;
  microseconds latency{0};  // one-way delay of the applied profile
  std::string cca;
  SessionMode mode = SessionMode::bulk;
  unsigned iteration = 0;

  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

enum class CellStatus { ok, failed };
std::string to_string(CellStatus s);

struct SweepRecord {
  CellKey cell;
  CellStatus status = CellStatus::ok;
  std::string error;
  ByteCount bytes_moved = 0;
  std::int64_t wall_time_ns = 0;
  double throughput_bps = 0;
  std::uint64_t files_ok = 0;
  std::uint64_t files_failed = 0;
  mover::Integrity integrity = mover::Integrity::skipped;
  std::string timestamp;         // UTC, ISO 8601
  std::string host_fingerprint;  // tuning audit overall state

  friend bool operator==(const SweepRecord&, const SweepRecord&) = default;
};

SweepRecord make_record(const CellKey& cell, const mover::TransferResult& result);
SweepRecord make_failure(const CellKey& cell, const std::string& error);

std::string record_to_line(const SweepRecord& r);
SweepRecord record_from_line(std::string_view line);
std::string header_line();

/// Append-only, line-delimited record log. Opening an existing log loads
/// its records; every append is flushed and synced before returning.
class RecordLog {
 public:
  explicit RecordLog(fs::path path);
  ~RecordLog();
  RecordLog(const RecordLog&) = delete;
  RecordLog& operator=(const RecordLog&) = delete;

  void append(const SweepRecord& r);
  const std::vector<SweepRecord>& records() const { return records_; }
  bool contains(const CellKey& k) const;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  int fd_ = -1;
  std::vector<SweepRecord> records_;
};

/// Reads a record log without opening it for append.
std::vector<SweepRecord> read_records(const fs::path& path);

/// What a sweep needs from the outside world.
class Environment {
 public:
  virtual ~Environment() = default;
  /// Abort-before-anything check; throws emulation::PrivilegeError.
  virtual void preflight(const SweepPlan& plan) = 0;
  virtual void apply_latency(const emulation::LatencyProfile& p) = 0;
  virtual void clear_latency() = 0;
  virtual mover::TransferResult run_cell(const SweepPlan& plan, const CellKey& cell) = 0;
  virtual std::string host_fingerprint() = 0;
};

struct RunOptions {
  std::function<void(const SweepRecord&)> on_record;
  std::function<std::string()> clock;  // timestamp source; UTC now by default
};

/// Runs every cell not already in `log`, in loop order. Failed cells are
/// recorded and the sweep moves on. The latency profile is cleared when
/// run_sweep returns or throws. Returns the full log contents.
std::vector<SweepRecord> run_sweep(const SweepPlan& plan, Environment& env, RecordLog& log,
                                   const RunOptions& options = {});

/// Cells of `plan` in execution order.
std::vector<CellKey> plan_cells(const SweepPlan& plan);

std::string utc_timestamp();

// ---- the real lab -------------------------------------------------------------

struct LabOptions {
  fs::path dataset_root;  // per-size datasets and streaming scratch space
  net::Endpoint receiver;  // as listening locally or on a peer host
  bool route_through_emulator = true;
  std::chrono::milliseconds streaming_quiescence{2000};
  ByteCount streaming_step = 4 * MiB;
  fs::path sysctl_root = "/proc/sys";
};

/// Generates datasets on demand, applies profiles through an Emulator and
/// moves data with the mover. Datasets are reused across iterations unless
/// the plan asks otherwise.
class LabEnvironment : public Environment {
 public:
  LabEnvironment(emulation::Emulator& emulator, LabOptions options);

  void preflight(const SweepPlan& plan) override;
  void apply_latency(const emulation::LatencyProfile& p) override;
  void clear_latency() override;
  mover::TransferResult run_cell(const SweepPlan& plan, const CellKey& cell) override;
  std::string host_fingerprint() override;

  /// Manifest for `size`, generating the dataset if it is missing or stale.
  dataset::DatasetManifest ensure_dataset(const SweepPlan& plan, ByteCount size, bool fresh);

 private:
  mover::TransferResult run_streaming(const SweepPlan& plan, const CellKey& cell, mover::TransferSpec spec);

  emulation::Emulator& emulator_;
  LabOptions options_;
  emulation::ProfileHandle handle_;
  std::map<ByteCount, dataset::DatasetManifest> cache_;
};

}  // namespace dmlab::sweep
