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

// Concurrent TCP data mover.
//
// A session is one control connection plus `stream_count` data connections.
// Files are assigned to data connections up front (bulk) or as they appear
// (streaming); each file travels FILE_OPEN, CHUNK..., FILE_CLOSE on a single
// connection, and the receiver answers ACK or NACK after checking the digest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/dataset.hpp"
#include "dmlab/net.hpp"
#include "dmlab/protocol.hpp"
#include "dmlab/units.hpp"

namespace dmlab::mover {

namespace fs = std::filesystem;
using protocol::Encryption;
using protocol::SessionMode;

class TransferError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr ByteCount kDefaultChunkSize = 4 * MiB;
inline constexpr ByteCount kMinChunkSize = 4 * KiB;
inline constexpr const char* kCompletionMarker = ".dmlab-complete";

struct SourceEndpoint {
  enum class Kind { directory, synthetic };
  Kind kind = Kind::directory;
  fs::path directory;
  dataset::DatasetSpec synthetic;  // content generated on the fly; root_path unused

  static SourceEndpoint from_directory(fs::path dir) { return {Kind::directory, std::move(dir), {}}; }
  static SourceEndpoint from_synthetic(dataset::DatasetSpec spec) { return {Kind::synthetic, {}, std::move(spec)}; }
};

struct SinkEndpoint {
  enum class Kind { directory, discard };
  Kind kind = Kind::directory;
  std::string subdirectory;  // relative to the receiver's root; empty = root

  static SinkEndpoint directory(std::string sub = {}) { return {Kind::directory, std::move(sub)}; }
  static SinkEndpoint discard() { return {Kind::discard, {}}; }
};

struct TransferSpec {
  SourceEndpoint source;
  SinkEndpoint sink;
  net::Endpoint peer;
  SessionMode mode = SessionMode::bulk;
  std::uint16_t stream_count = 1;
  ByteCount chunk_size = kDefaultChunkSize;
  Encryption encryption = Encryption::none;
  std::string cca;  // empty: host default
  std::optional<ByteCount> socket_buffer;
  std::chrono::milliseconds connect_timeout{10'000};

  /// Throws TransferError on stream_count < 1, chunk_size outside
  /// [4 KiB, 16 MiB - 16], or streaming from a non-directory source.
  void validate() const;
};

enum class Integrity { verified, failed, skipped };
std::string to_string(Integrity i);

struct FileFailure {
  std::string relative_path;
  std::string reason;
};

struct TransferResult {
  ByteCount bytes_moved = 0;
  std::chrono::nanoseconds wall_time{0};
  double throughput_bps = 0;
  std::uint64_t files_ok = 0;
  std::uint64_t files_failed = 0;
  Integrity integrity = Integrity::skipped;
  std::vector<ByteCount> per_stream_bytes;
  std::vector<FileFailure> failures;
  std::uint32_t reconnects = 0;
  std::uint32_t resends = 0;

  bool ok() const { return files_failed == 0 && integrity != Integrity::failed; }
};

/// bytes * 8 / seconds; zero for a zero duration.
double throughput_bps(ByteCount bytes, std::chrono::nanoseconds wall);

// ---- receiver -----------------------------------------------------------------

struct ServeConfig {
  fs::path root;          // sink root for directory sinks
  bool discard = false;   // force discard regardless of what senders ask for
  // Test hook: sees every received chunk before it is digested or written.
  std::function<void(std::uint64_t file_index, ByteCount offset, std::span<std::byte> data)> chunk_hook;
};

struct SessionReport {
  std::uint64_t session_id = 0;
  SessionMode mode = SessionMode::bulk;
  Encryption encryption = Encryption::none;
  bool discard = false;
  std::uint16_t streams_seen = 0;
  ByteCount bytes_received = 0;  // all chunk payload, including rejected attempts
  ByteCount bytes_verified = 0;  // payload of ACKed files
  std::uint64_t files_ok = 0;
  std::uint64_t files_failed = 0;
  bool end_of_source = false;
  std::vector<std::string> nacks;
};

/// Running receiver; stops on destruction.
class Receiver {
 public:
  ~Receiver();
  Receiver(Receiver&&) noexcept;
  Receiver& operator=(Receiver&&) noexcept;

  std::uint16_t port() const;
  net::Endpoint local_endpoint() const;
  void stop();

  std::vector<SessionReport> sessions() const;
  /// Blocks until `count` sessions have completed or the timeout expires.
  bool wait_for_sessions(std::size_t count, std::chrono::milliseconds timeout) const;

 private:
  struct Impl;
  explicit Receiver(std::unique_ptr<Impl> impl);
  friend Receiver serve(const net::Endpoint&, ServeConfig);
  std::unique_ptr<Impl> impl_;
};

/// Binds `listen` (port 0 picks a free port) and starts accepting sessions.
Receiver serve(const net::Endpoint& listen, ServeConfig config);

// ---- sender -------------------------------------------------------------------

/// Longest-processing-time-first assignment of files to streams: files in
/// decreasing size order go to the stream with the fewest bytes so far
/// (lowest index on ties). Returns file indices per stream.
std::vector<std::vector<std::size_t>> schedule_lpt(std::span<const ByteCount> sizes, std::size_t streams);

/// Bulk transfer of every manifest entry. For directory sources the entries
/// are relative to spec.source.directory and must exist with matching sizes.
TransferResult transfer(const TransferSpec& spec, const dataset::DatasetManifest& manifest);

/// Convenience: bulk transfer of a synthetic source's full plan.
TransferResult transfer(const TransferSpec& spec);

struct StreamingOptions {
  std::chrono::milliseconds poll_interval{10};
};

/// Streams files from `watch_root` while a writer is still producing them.
/// Ends when the writer drops `.dmlab-complete` in watch_root or nothing
/// grows for `quiescence`.
TransferResult transfer_streaming(const TransferSpec& spec, const fs::path& watch_root,
                                  std::chrono::milliseconds quiescence, const StreamingOptions& options = {});

/// Appending writer for streaming sources.
class StreamingWriter {
 public:
  explicit StreamingWriter(fs::path root);
  void append(const std::string& relative_path, std::span<const std::byte> data);
  void complete();
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
};

// ---- staging ------------------------------------------------------------------

enum class StageDirection { stage_in, stage_out };
std::string to_string(StageDirection d);

struct StagingJob {
  fs::path from;
  fs::path to;  // burst buffer for stage-in, production storage for stage-out
  dataset::DatasetManifest manifest;
  StageDirection direction = StageDirection::stage_in;
  unsigned workers = 0;
};

/// Concurrent local copy with digest verification. Files already present
/// at the destination with a matching digest are not copied again, so a
/// failed job can simply be re-run.
TransferResult stage(const StagingJob& job);

// ---- socket options -----------------------------------------------------------

struct SocketOptionsReport {
  std::string requested_cca;
  std::string effective_cca;
  std::optional<ByteCount> requested_buffer;
  ByteCount effective_send_buffer = 0;
  ByteCount effective_receive_buffer = 0;
  ByteCount window_clamp = 0;
};

/// Applies the CCA and buffer sizing from `spec` and reads back the
/// effective values. Unknown CCA: TransferError listing the available ones.
SocketOptionsReport apply_socket_options(const net::Socket& s, const TransferSpec& spec);

}  // namespace dmlab::mover
