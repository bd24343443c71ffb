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

// Mover wire protocol, version 1.
//
// Every frame is   [type:u8][length:u32 LE][payload:length bytes]
// with length <= 16 MiB. Integers inside payloads are little-endian;
// strings are [len:u16][bytes]; digests are 32 raw bytes.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/digest.hpp"
#include "dmlab/units.hpp"

namespace dmlab::protocol {

inline constexpr std::uint16_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderBytes = 5;
inline constexpr std::uint32_t kMaxPayload = 16 * 1024 * 1024;
inline constexpr std::uint64_t kUnknownSize = ~std::uint64_t{0};

enum class FrameType : std::uint8_t {
  hello = 1,
  manifest = 2,
  file_open = 3,
  chunk = 4,
  file_close = 5,
  growth_mark = 6,
  end_of_source = 7,
  ack = 8,
  nack = 9,
  bye = 10,
};

std::string to_string(FrameType t);
bool is_known_frame_type(std::uint8_t tag);

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Frame {
  FrameType type = FrameType::bye;
  std::vector<std::byte> payload;

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Throws ProtocolError if the payload exceeds kMaxPayload.
std::vector<std::byte> encode_frame(const Frame& f);
void encode_header(FrameType type, std::uint32_t length, std::span<std::byte, kHeaderBytes> out);

enum class DecodeStatus { ok, incomplete, error };

struct DecodeResult {
  DecodeStatus status = DecodeStatus::incomplete;
  Frame frame;                // valid when status == ok
  std::size_t consumed = 0;   // 5 + length when ok, else 0
  std::string error;          // set when status == error
};

DecodeResult decode_frame(std::span<const std::byte> bytes);

struct FrameHeader {
  FrameType type;
  std::uint32_t length;
};

/// Validates a 5-byte header; throws ProtocolError on unknown tag or oversize length.
FrameHeader decode_header(std::span<const std::byte, kHeaderBytes> bytes);

// ---- typed payloads --------------------------------------------------------

enum class SessionMode : std::uint8_t { bulk = 0, streaming = 1 };
enum class Encryption : std::uint8_t { none = 0, tls = 1 };
enum class ConnectionRole : std::uint8_t { control = 0, data = 1, probe = 2 };
inline constexpr std::uint8_t kHelloDiscardSink = 0x01;

std::string to_string(SessionMode m);
std::string to_string(Encryption e);
SessionMode session_mode_from_string(std::string_view s);
Encryption encryption_from_string(std::string_view s);

struct SessionHello {
  std::uint16_t protocol_version = kProtocolVersion;
  SessionMode mode = SessionMode::bulk;
  std::uint16_t stream_count = 1;
  Encryption encryption = Encryption::none;
  Digest manifest_digest{};
  std::uint64_t session_id = 0;
  ConnectionRole role = ConnectionRole::control;
  std::uint16_t stream_index = 0;
  ByteCount socket_buffer = 0;  // 0: leave kernel autotuning alone
  std::uint8_t flags = 0;       // kHelloDiscardSink

  friend bool operator==(const SessionHello&, const SessionHello&) = default;
};

/// Both peers continue with the lower of the two advertised versions.
std::uint16_t negotiate_version(std::uint16_t ours, std::uint16_t theirs);

struct ManifestSummary {
  std::uint64_t file_count = 0;
  ByteCount total_bytes = 0;
  Digest fingerprint{};
  friend bool operator==(const ManifestSummary&, const ManifestSummary&) = default;
};

struct FileOpen {
  std::uint64_t file_index = 0;
  std::uint64_t size = 0;  // kUnknownSize while the source is still growing
  std::string relative_path;
  friend bool operator==(const FileOpen&, const FileOpen&) = default;
};

struct ChunkHeader {
  std::uint64_t file_index = 0;
  ByteCount offset = 0;
  ByteCount chunk_len = 0;
  friend bool operator==(const ChunkHeader&, const ChunkHeader&) = default;
};
inline constexpr std::size_t kChunkPrefixBytes = 16;

struct FileClose {
  std::uint64_t file_index = 0;
  ByteCount final_size = 0;
  Digest digest{};
  friend bool operator==(const FileClose&, const FileClose&) = default;
};

struct GrowthMark {
  std::uint64_t file_index = 0;
  ByteCount committed_size = 0;
  friend bool operator==(const GrowthMark&, const GrowthMark&) = default;
};

struct Ack {
  std::uint64_t ref = 0;  // file index, or an echo token for RTT probes
  friend bool operator==(const Ack&, const Ack&) = default;
};

enum class NackReason : std::uint8_t {
  digest_mismatch = 1,
  write_failed = 2,
  out_of_order = 3,
  source_shrank = 4,
  bad_request = 5,
};
std::string to_string(NackReason r);

struct Nack {
  std::uint64_t file_index = 0;
  NackReason reason = NackReason::bad_request;
  std::string message;
  friend bool operator==(const Nack&, const Nack&) = default;
};

struct ByeSummary {
  ByteCount bytes_received = 0;
  std::uint64_t files_ok = 0;
  std::uint64_t files_failed = 0;
  friend bool operator==(const ByeSummary&, const ByeSummary&) = default;
};

Frame make_hello(const SessionHello& h);
Frame make_manifest(const ManifestSummary& m);
Frame make_file_open(const FileOpen& f);
Frame make_chunk(std::uint64_t file_index, ByteCount offset, std::span<const std::byte> data);
Frame make_file_close(const FileClose& f);
Frame make_growth_mark(const GrowthMark& g);
Frame make_end_of_source();
Frame make_ack(const Ack& a);
Frame make_nack(const Nack& n);
Frame make_bye(std::optional<ByeSummary> summary = std::nullopt);

// Parsers throw ProtocolError on type mismatch or malformed payloads.
SessionHello parse_hello(const Frame& f);
ManifestSummary parse_manifest(const Frame& f);
FileOpen parse_file_open(const Frame& f);
/// Returns the header and a view of the chunk data within f.payload.
ChunkHeader parse_chunk(const Frame& f, std::span<const std::byte>* data = nullptr);
ChunkHeader parse_chunk_prefix(std::span<const std::byte> payload);
FileClose parse_file_close(const Frame& f);
GrowthMark parse_growth_mark(const Frame& f);
Ack parse_ack(const Frame& f);
Nack parse_nack(const Frame& f);
std::optional<ByeSummary> parse_bye(const Frame& f);

/// Accepts only relative paths without "..", "." or empty components.
bool is_safe_relative_path(std::string_view path);

}  // namespace dmlab::protocol
