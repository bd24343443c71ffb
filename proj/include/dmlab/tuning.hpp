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

// Host network tuning: kernel parameters and NIC ring buffers.

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/command.hpp"

namespace dmlab::tuning {

namespace fs = std::filesystem;

class TuningError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runtime apply hit EACCES/EPERM; keys() names every refused parameter.
class PermissionError : public TuningError {
 public:
  explicit PermissionError(std::vector<std::string> keys);
  const std::vector<std::string>& keys() const { return keys_; }

 private:
  std::vector<std::string> keys_;
};

struct KernelParam {
  std::string key;    // dotted form, e.g. net.core.rmem_max
  std::string value;  // whitespace-normalized
  friend bool operator==(const KernelParam&, const KernelParam&) = default;
};

inline constexpr unsigned kDefaultRing = 8160;

struct TuningTarget {
  std::vector<KernelParam> kernel_params;
  std::optional<unsigned> ring_rx;
  std::optional<unsigned> ring_tx;
  std::string ring_interface;  // rings are only audited when set

  /// The eight kernel parameters and 8160/8160 rings the tool ships with.
  static TuningTarget defaults();
  void validate() const;
  friend bool operator==(const TuningTarget&, const TuningTarget&) = default;
};

bool is_valid_key(std::string_view key);
/// Collapses runs of blanks and tabs into single spaces and trims.
std::string normalize_value(std::string_view value);

/// Kernel parameter tree rooted at /proc/sys or a prepared copy of it.
class SysctlTree {
 public:
  explicit SysctlTree(fs::path root = "/proc/sys");
  const fs::path& root() const { return root_; }
  fs::path path_of(const std::string& key) const;

  std::optional<std::string> read(const std::string& key) const;

  enum class WriteStatus { ok, permission_denied, rejected };
  struct WriteResult {
    WriteStatus status = WriteStatus::ok;
    std::string error;
  };
  WriteResult write(const std::string& key, const std::string& value) const;

 private:
  fs::path root_;
};

using Snapshot = std::map<std::string, std::optional<std::string>>;
Snapshot snapshot(const SysctlTree& tree, const std::vector<std::string>& keys);
/// Writes back every value the snapshot holds; returns keys that failed.
std::vector<std::string> restore(const SysctlTree& tree, const Snapshot& snap);

enum class MatchState { match, mismatch, unknown };
std::string to_string(MatchState s);

struct ParamAudit {
  std::string key;
  std::string target;
  std::optional<std::string> current;
  MatchState state = MatchState::unknown;
};

struct RingSettings {
  unsigned rx_max = 0, tx_max = 0;
  unsigned rx = 0, tx = 0;
};

/// Parses `ethtool -g` output (pre-set maximums, then current settings).
std::optional<RingSettings> parse_ethtool_rings(std::string_view text);

struct RingAudit {
  std::string interface;
  std::optional<unsigned> target_rx, target_tx;
  std::optional<RingSettings> current;
  MatchState state = MatchState::unknown;
};

enum class Overall { tuned, partial, untuned };
std::string to_string(Overall o);

struct AuditReport {
  std::vector<ParamAudit> params;
  std::optional<RingAudit> rings;
  Overall overall = Overall::tuned;
  std::vector<std::string> warnings;
  std::map<std::string, std::string> rejected;  // key -> kernel error, from apply

  const ParamAudit* find(const std::string& key) const;
  std::vector<std::string> mismatched() const;
};

/// Reads only; unreadable keys are recorded as unknown. Rings use
/// `ethtool -g` through `runner` when ring_interface is set.
AuditReport audit(const TuningTarget& target, const SysctlTree& tree, CommandRunner& runner);

enum class Scope { runtime, dry_run };

/// dry_run prints `sysctl -w` / `ethtool -G` lines to `out` and changes
/// nothing. runtime writes each differing key, then re-audits; values the
/// kernel refuses land in report.rejected. Throws PermissionError after
/// trying every key if any write was refused for lack of privilege.
AuditReport apply(const TuningTarget& target, Scope scope, const SysctlTree& tree, CommandRunner& runner,
                  std::ostream& out);

std::vector<std::string> dry_run_commands(const TuningTarget& target);

std::string render_table(const AuditReport& report);
/// One JSON object per line: one per parameter, optional rings, then a summary.
std::string render_jsonl(const AuditReport& report);

}  // namespace dmlab::tuning
