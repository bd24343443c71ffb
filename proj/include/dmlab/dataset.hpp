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

// Synthetic uniform-size datasets: generation, inventory, and verification.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/digest.hpp"
#include "dmlab/units.hpp"

namespace dmlab::dataset {

namespace fs = std::filesystem;

enum class DatasetMode { bulk, streaming_source };
enum class SeriesKind { bulk, streaming };

std::string to_string(DatasetMode m);
DatasetMode dataset_mode_from_string(std::string_view s);
std::string to_string(SeriesKind k);
SeriesKind series_kind_from_string(std::string_view s);

inline constexpr std::uint64_t kHyperscaleFileCount = std::uint64_t{1} << 20;
inline constexpr ByteCount kHyperscaleTotal = TiB;
inline constexpr std::uint64_t kFilesPerShard = 4096;
inline constexpr const char* kManifestFileName = ".dmlab-manifest";

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InsufficientSpaceError : public DatasetError {
 public:
  InsufficientSpaceError(ByteCount needed, ByteCount available);
  ByteCount needed;
  ByteCount available;
};

/// Generation stopped part-way. No manifest was written; `partial_files`
/// lists what must be cleaned up (see remove_partial_files).
class GenerationError : public DatasetError {
 public:
  GenerationError(const std::string& what, std::vector<fs::path> partial);
  std::vector<fs::path> partial_files;
};

struct DatasetSpec {
  ByteCount file_size = 0;
  std::uint64_t file_count = 1;
  fs::path root_path;
  std::uint64_t content_seed = 0;
  DatasetMode mode = DatasetMode::bulk;

  /// Throws DatasetError unless file_size is a power of two and file_count >= 1.
  void validate() const;
  ByteCount total_bytes() const { return file_size * file_count; }

  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct ManifestEntry {
  std::string relative_path;
  ByteCount size = 0;
  // Absent only for synthetic plans whose content was never materialised.
  std::optional<Digest> digest;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  ByteCount total_bytes = 0;
  std::optional<DatasetSpec> spec;

  /// SHA-256 over the canonical manifest text; identifies the dataset in a session handshake.
  Digest fingerprint() const;
  bool has_digests() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Relative path of entry `index`: "shard-0000/file-00000000.bin".
std::string entry_path(std::uint64_t index);

/// Writes bytes [offset, offset + out.size()) of entry `index`'s content.
/// Content is a keyed counter-mode stream, so any window can be produced
/// independently.
void fill_content(std::uint64_t seed, std::uint64_t index, ByteCount offset, std::span<std::byte> out);

/// Digest of an entry's content computed without touching disk.
Digest content_digest(std::uint64_t seed, std::uint64_t index, ByteCount size);

struct GenerateOptions {
  unsigned workers = 0;                 // 0: hardware concurrency, capped at 8
  ByteCount free_space_margin = 64 * MiB;
  bool write_manifest = true;           // persist <root>/.dmlab-manifest
};

DatasetManifest generate_dataset(const DatasetSpec& spec, const GenerateOptions& options = {});

/// Inventory of a synthetic spec with no digests (nothing is written).
DatasetManifest plan_dataset(const DatasetSpec& spec);

/// Manifest for arbitrary files under `root` (sorted by path, dotfiles and
/// *.part skipped), with digests.
DatasetManifest index_directory(const fs::path& root);

std::size_t remove_partial_files(const fs::path& root);

struct SweepSeries {
  SeriesKind kind = SeriesKind::bulk;
  std::vector<ByteCount> sizes;
  std::map<ByteCount, DatasetSpec> per_size_spec;
};

struct SeriesOptions {
  fs::path root_base = "datasets";
  std::uint64_t seed = 0x5eed;
};

/// Every power of two in [min_size, max_size]. Per size, file_count =
/// clamp(budget / size, 1, 2^20); with no budget the full-scale 1 TiB
/// aggregate applies.
SweepSeries build_sweep_series(SeriesKind kind, ByteCount min_size, ByteCount max_size,
                               std::optional<ByteCount> budget, const SeriesOptions& options = {});

struct VerifyIssue {
  enum class Kind { missing, size_mismatch, digest_mismatch };
  Kind kind;
  std::string relative_path;
  ByteCount expected_size = 0;
  ByteCount actual_size = 0;

  friend bool operator==(const VerifyIssue&, const VerifyIssue&) = default;
};

std::string to_string(VerifyIssue::Kind k);

struct VerificationReport {
  std::vector<VerifyIssue> issues;  // ordered by manifest position
  bool intact() const { return issues.empty(); }
};

/// Re-digests every entry under `root` (defaults to spec.root_path).
VerificationReport verify_dataset(const DatasetManifest& manifest, std::optional<fs::path> root = std::nullopt);

// Line format, one record per line, fields separated by a single TAB:
//   #dmlab-manifest  version=1  [file_size=N file_count=N content_seed=N mode=M root=P]  total_bytes=N  entries=N
//   <relative path>  <size>  <64 hex digits | ->
std::string manifest_to_text(const DatasetManifest& manifest);
DatasetManifest manifest_from_text(std::string_view text);
void write_manifest(const DatasetManifest& manifest, const fs::path& path);
DatasetManifest read_manifest(const fs::path& path);

}  // namespace dmlab::dataset
