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

// Lab configuration file (YAML, schema_version 1).

#include <chrono>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/net.hpp"
#include "dmlab/tuning.hpp"
#include "dmlab/units.hpp"

namespace dmlab::config {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LabConfig {
  int schema_version = kSchemaVersion;
  std::optional<net::Endpoint> peer;        // receiver the sender talks to
  net::Endpoint listen{"0.0.0.0", 5201};    // where `serve` binds
  fs::path production_root = "production";
  fs::path burst_buffer_root = "burst-buffer";
  fs::path dataset_root = "datasets";
  fs::path receiver_root = "received";
  fs::path output_dir = "results";
  fs::path sysctl_root = "/proc/sys";
  tuning::TuningTarget tuning = tuning::TuningTarget::defaults();
  std::vector<std::chrono::microseconds> latencies{std::chrono::milliseconds(10), std::chrono::milliseconds(50),
                                                   std::chrono::milliseconds(100)};
  std::string emulation_backend = "auto";
  std::string emulation_interface = "lo";
  std::uint16_t streams = 4;
  ByteCount chunk_size = 4 * MiB;
  std::string encryption = "none";

  /// Makes every path absolute relative to `base`.
  void resolve_paths(const fs::path& base);
  /// The peer, or a ConfigError naming how to provide one.
  const net::Endpoint& require_peer(const std::string& command) const;

  friend bool operator==(const LabConfig&, const LabConfig&) = default;
};

struct LoadResult {
  LabConfig config;
  std::vector<std::string> warnings;  // unknown fields and similar
};

/// Parses and validates; relative paths resolve against the file's
/// directory. Errors carry "file:line:column: field: problem".
LoadResult load_config(const fs::path& path);
LoadResult parse_config(const std::string& text, const fs::path& base, const std::string& origin = "<config>");

std::string to_yaml(const LabConfig& config);
void save_config(const LabConfig& config, const fs::path& path);

/// DMLAB_PEER and DMLAB_OUTPUT_DIR take precedence over the file.
void apply_environment(LabConfig& config);

}  // namespace dmlab::config
