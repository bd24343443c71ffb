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

#include "dmlab/dataset.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "dmlab/parallel.hpp"

namespace dmlab::dataset {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
constexpr std::size_t kIoBlock = 4 * MiB;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t entry_key(std::uint64_t seed, std::uint64_t index) {
  return mix64(seed ^ mix64(index + kGolden));
}

constexpr std::uint64_t content_word(std::uint64_t key, std::uint64_t counter) {
  return mix64(key + (counter + 1) * kGolden);
}

void store_le(std::uint64_t w, std::byte* out) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::byte>(w >> (8 * i));
}

std::system_error io_error(const std::string& what, const fs::path& p) {
  return std::system_error(errno, std::generic_category(), what + " " + p.string());
}

void write_all(int fd, std::span<const std::byte> data, const fs::path& p) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw io_error("write", p);
    }
    data = data.subspan(static_cast<std::size_t>(n));
  }
}

ByteCount available_bytes(fs::path p) {
  std::error_code ec;
  while (!p.empty() && !fs::exists(p, ec)) p = p.parent_path();
  if (p.empty()) p = ".";
  struct statvfs st {};
  if (::statvfs(p.c_str(), &st) != 0) throw io_error("statvfs", p);
  return static_cast<ByteCount>(st.f_bavail) * st.f_frsize;
}

// Writes one entry to `<final>.part`, digesting as it goes, then renames.
Digest write_entry(const DatasetSpec& spec, std::uint64_t index, const fs::path& final_path,
                   std::vector<std::byte>& buf) {
  fs::path part = final_path;
  part += ".part";
  int fd = ::open(part.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw io_error("create", part);
  Sha256 h;
  try {
    for (ByteCount off = 0; off < spec.file_size;) {
      auto n = static_cast<std::size_t>(std::min<ByteCount>(buf.size(), spec.file_size - off));
      std::span<std::byte> block(buf.data(), n);
      fill_content(spec.content_seed, index, off, block);
      h.update(block);
      write_all(fd, block, part);
      off += n;
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  if (::close(fd) != 0) throw io_error("close", part);
  fs::rename(part, final_path);
  return h.finish();
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::uint64_t parse_u64(std::string_view s, std::size_t line, std::string_view field) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw DatasetError("manifest line " + std::to_string(line) + ": bad " + std::string(field) + " '" +
                       std::string(s) + "'");
  return v;
}

}  // namespace

std::string to_string(DatasetMode m) { return m == DatasetMode::bulk ? "bulk" : "streaming-source"; }

DatasetMode dataset_mode_from_string(std::string_view s) {
  if (s == "bulk") return DatasetMode::bulk;
  if (s == "streaming-source") return DatasetMode::streaming_source;
  throw DatasetError("unknown dataset mode '" + std::string(s) + "'");
}

std::string to_string(SeriesKind k) { return k == SeriesKind::bulk ? "bulk" : "streaming"; }

SeriesKind series_kind_from_string(std::string_view s) {
  if (s == "bulk") return SeriesKind::bulk;
  if (s == "streaming") return SeriesKind::streaming;
  throw DatasetError("unknown series kind '" + std::string(s) + "'");
}

std::string to_string(VerifyIssue::Kind k) {
  switch (k) {
    case VerifyIssue::Kind::missing: return "missing";
    case VerifyIssue::Kind::size_mismatch: return "size-mismatch";
    case VerifyIssue::Kind::digest_mismatch: return "digest-mismatch";
  }
  return "?";
}

InsufficientSpaceError::InsufficientSpaceError(ByteCount need, ByteCount have)
    : DatasetError("insufficient space: need " + std::to_string(need) + " bytes, " + std::to_string(have) +
                   " available"),
      needed(need),
      available(have) {}

GenerationError::GenerationError(const std::string& what, std::vector<fs::path> partial)
    : DatasetError(what), partial_files(std::move(partial)) {}

void DatasetSpec::validate() const {
  if (!is_power_of_two(file_size))
    throw DatasetError("file_size " + std::to_string(file_size) + " is not a power of two");
  if (file_count < 1) throw DatasetError("file_count must be at least 1");
}

bool DatasetManifest::has_digests() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.digest.has_value(); });
}

Digest DatasetManifest::fingerprint() const {
  Sha256 h;
  h.update(manifest_to_text(*this));
  return h.finish();
}

std::string entry_path(std::uint64_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "shard-%04llu/file-%08llu.bin",
                static_cast<unsigned long long>(index / kFilesPerShard), static_cast<unsigned long long>(index));
  return buf;
}

void fill_content(std::uint64_t seed, std::uint64_t index, ByteCount offset, std::span<std::byte> out) {
  const std::uint64_t key = entry_key(seed, index);
  std::uint64_t counter = offset / 8;
  std::size_t pos = 0;
  if (auto skew = static_cast<std::size_t>(offset % 8); skew != 0) {
    std::byte word[8];
    store_le(content_word(key, counter++), word);
    std::size_t n = std::min<std::size_t>(8 - skew, out.size());
    std::memcpy(out.data(), word + skew, n);
    pos = n;
  }
  for (; pos + 8 <= out.size(); pos += 8) store_le(content_word(key, counter++), out.data() + pos);
  if (pos < out.size()) {
    std::byte word[8];
    store_le(content_word(key, counter), word);
    std::memcpy(out.data() + pos, word, out.size() - pos);
  }
}

Digest content_digest(std::uint64_t seed, std::uint64_t index, ByteCount size) {
  Sha256 h;
  std::vector<std::byte> buf(static_cast<std::size_t>(std::min<ByteCount>(size, kIoBlock)));
  for (ByteCount off = 0; off < size;) {
    auto n = static_cast<std::size_t>(std::min<ByteCount>(buf.size(), size - off));
    std::span<std::byte> block(buf.data(), n);
    fill_content(seed, index, off, block);
    h.update(block);
    off += n;
  }
  return h.finish();
}

DatasetManifest plan_dataset(const DatasetSpec& spec) {
  spec.validate();
  DatasetManifest m;
  m.spec = spec;
  m.entries.reserve(spec.file_count);
  for (std::uint64_t i = 0; i < spec.file_count; ++i) m.entries.push_back({entry_path(i), spec.file_size, {}});
  m.total_bytes = spec.total_bytes();
  return m;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const GenerateOptions& options) {
  spec.validate();
  if (spec.root_path.empty()) throw DatasetError("dataset root_path is empty");
  const ByteCount need = spec.total_bytes();
  const ByteCount have = available_bytes(spec.root_path);
  if (need + options.free_space_margin > have) throw InsufficientSpaceError(need, have);

  std::error_code ec;
  fs::create_directories(spec.root_path, ec);
  if (ec) throw DatasetError("cannot create " + spec.root_path.string() + ": " + ec.message());
  fs::remove(spec.root_path / kManifestFileName, ec);

  const std::uint64_t shards = (spec.file_count + kFilesPerShard - 1) / kFilesPerShard;
  for (std::uint64_t s = 0; s < shards; ++s) {
    fs::create_directories(spec.root_path / fs::path(entry_path(s * kFilesPerShard)).parent_path(), ec);
    if (ec) throw DatasetError("cannot create shard directory: " + ec.message());
  }

  DatasetManifest m = plan_dataset(spec);
  try {
    parallel_for(m.entries.size(), default_workers(options.workers), [&](std::size_t i) {
      std::vector<std::byte> buf(static_cast<std::size_t>(std::clamp<ByteCount>(spec.file_size, 1, kIoBlock)));
      m.entries[i].digest = write_entry(spec, i, spec.root_path / m.entries[i].relative_path, buf);
    });
  } catch (const std::exception& e) {
    std::vector<fs::path> partial;
    for (auto it = fs::recursive_directory_iterator(spec.root_path, ec); !ec && it != fs::end(it); it.increment(ec))
      if (it->is_regular_file(ec) && it->path().extension() == ".part") partial.push_back(it->path());
    std::sort(partial.begin(), partial.end());
    throw GenerationError(std::string("dataset generation failed: ") + e.what(), std::move(partial));
  }
  if (options.write_manifest) write_manifest(m, spec.root_path / kManifestFileName);
  return m;
}

DatasetManifest index_directory(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DatasetError("not a readable directory: " + root.string());
  std::vector<std::string> paths;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::end(it); ++it) {
    const auto name = it->path().filename().string();
    if (!name.empty() && name.front() == '.') {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    if (!it->is_regular_file() || it->path().extension() == ".part") continue;
    paths.push_back(fs::relative(it->path(), root).generic_string());
  }
  std::sort(paths.begin(), paths.end());
  DatasetManifest m;
  m.entries.resize(paths.size());
  parallel_for(paths.size(), default_workers(0), [&](std::size_t i) {
    const auto full = root / paths[i];
    m.entries[i] = {paths[i], static_cast<ByteCount>(fs::file_size(full)), sha256_file(full)};
  });
  for (const auto& e : m.entries) m.total_bytes += e.size;
  return m;
}

std::size_t remove_partial_files(const fs::path& root) {
  std::error_code ec;
  std::vector<fs::path> doomed;
  for (auto it = fs::recursive_directory_iterator(root, ec); !ec && it != fs::end(it); it.increment(ec))
    if (it->is_regular_file(ec) && it->path().extension() == ".part") doomed.push_back(it->path());
  for (const auto& p : doomed) fs::remove(p, ec);
  return doomed.size();
}

SweepSeries build_sweep_series(SeriesKind kind, ByteCount min_size, ByteCount max_size,
                               std::optional<ByteCount> budget, const SeriesOptions& options) {
  if (!is_power_of_two(min_size) || !is_power_of_two(max_size))
    throw DatasetError("sweep bounds must be powers of two");
  if (min_size > max_size) throw DatasetError("sweep minimum exceeds maximum");
  const ByteCount total = budget.value_or(kHyperscaleTotal);
  SweepSeries series;
  series.kind = kind;
  for (ByteCount size = min_size;; size <<= 1) {
    series.sizes.push_back(size);
    DatasetSpec spec;
    spec.file_size = size;
    spec.file_count = std::clamp<std::uint64_t>(total / size, 1, kHyperscaleFileCount);
    spec.root_path = options.root_base / ("size-" + format_bytes(size));
    spec.content_seed = options.seed;
    spec.mode = kind == SeriesKind::bulk ? DatasetMode::bulk : DatasetMode::streaming_source;
    series.per_size_spec.emplace(size, spec);
    if (size == max_size) break;
  }
  return series;
}

VerificationReport verify_dataset(const DatasetManifest& manifest, std::optional<fs::path> root) {
  fs::path base = root ? *root : (manifest.spec ? manifest.spec->root_path : fs::path{});
  std::error_code ec;
  if (base.empty() || !fs::is_directory(base, ec) || ::access(base.c_str(), R_OK | X_OK) != 0)
    throw DatasetError("dataset root is not readable: " + base.string());

  std::vector<std::optional<VerifyIssue>> found(manifest.entries.size());
  parallel_for(manifest.entries.size(), default_workers(0), [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    const auto full = base / e.relative_path;
    std::error_code fe;
    auto size = fs::file_size(full, fe);
    if (fe) {
      found[i] = VerifyIssue{VerifyIssue::Kind::missing, e.relative_path, e.size, 0};
    } else if (size != e.size) {
      found[i] = VerifyIssue{VerifyIssue::Kind::size_mismatch, e.relative_path, e.size, static_cast<ByteCount>(size)};
    } else if (e.digest && sha256_file(full) != *e.digest) {
      found[i] = VerifyIssue{VerifyIssue::Kind::digest_mismatch, e.relative_path, e.size, static_cast<ByteCount>(size)};
    }
  });
  VerificationReport report;
  for (auto& f : found)
    if (f) report.issues.push_back(std::move(*f));
  return report;
}

std::string manifest_to_text(const DatasetManifest& m) {
  std::ostringstream out;
  out << "#dmlab-manifest\tversion=1";
  if (m.spec) {
    out << "\tfile_size=" << m.spec->file_size << "\tfile_count=" << m.spec->file_count
        << "\tcontent_seed=" << m.spec->content_seed << "\tmode=" << to_string(m.spec->mode)
        << "\troot=" << m.spec->root_path.string();
  }
  out << "\ttotal_bytes=" << m.total_bytes << "\tentries=" << m.entries.size() << '\n';
  for (const auto& e : m.entries)
    out << e.relative_path << '\t' << e.size << '\t' << (e.digest ? to_hex(*e.digest) : "-") << '\n';
  return out.str();
}

DatasetManifest manifest_from_text(std::string_view text) {
  std::vector<std::string> lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw DatasetError("manifest is empty");

  auto header = split(lines[0], '\t');
  if (header[0] != "#dmlab-manifest") throw DatasetError("manifest line 1: missing #dmlab-manifest header");
  std::map<std::string, std::string> kv;
  for (std::size_t i = 1; i < header.size(); ++i) {
    auto eq = header[i].find('=');
    if (eq == std::string::npos) throw DatasetError("manifest line 1: malformed field '" + header[i] + "'");
    kv[header[i].substr(0, eq)] = header[i].substr(eq + 1);
  }
  if (kv["version"] != "1") throw DatasetError("manifest line 1: unsupported version '" + kv["version"] + "'");

  DatasetManifest m;
  if (kv.count("file_size")) {
    DatasetSpec spec;
    spec.file_size = parse_u64(kv["file_size"], 1, "file_size");
    spec.file_count = parse_u64(kv["file_count"], 1, "file_count");
    spec.content_seed = parse_u64(kv["content_seed"], 1, "content_seed");
    spec.mode = dataset_mode_from_string(kv["mode"]);
    spec.root_path = kv["root"];
    m.spec = spec;
  }
  const auto declared_total = parse_u64(kv["total_bytes"], 1, "total_bytes");
  const auto declared_entries = parse_u64(kv["entries"], 1, "entries");

  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    auto f = split(lines[ln], '\t');
    if (f.size() != 3) throw DatasetError("manifest line " + std::to_string(ln + 1) + ": expected 3 fields");
    ManifestEntry e;
    e.relative_path = f[0];
    e.size = parse_u64(f[1], ln + 1, "size");
    if (f[2] != "-") {
      e.digest = digest_from_hex(f[2]);
      if (!e.digest) throw DatasetError("manifest line " + std::to_string(ln + 1) + ": bad digest");
    }
    m.total_bytes += e.size;
    m.entries.push_back(std::move(e));
  }
  if (m.entries.size() != declared_entries || m.total_bytes != declared_total)
    throw DatasetError("manifest totals do not match its entries");
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DatasetError("cannot write manifest " + path.string());
    out << manifest_to_text(manifest);
    if (!out.flush()) throw DatasetError("cannot write manifest " + path.string());
  }
  fs::rename(tmp, path);
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return manifest_from_text(ss.str());
}

}  // namespace dmlab::dataset
