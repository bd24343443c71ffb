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

#include "dmlab/protocol.hpp"

#include <algorithm>
#include <cstring>

namespace dmlab::protocol {

namespace {

class PayloadWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<std::byte>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u64(std::uint64_t v) { le(v, 8); }
  void digest(const Digest& d) {
    for (auto b : d) buf_.push_back(static_cast<std::byte>(b));
  }
  void str(std::string_view s) {
    if (s.size() > 0xFFFF) throw ProtocolError("string field longer than 65535 bytes");
    u16(static_cast<std::uint16_t>(s.size()));
    for (char c : s) buf_.push_back(static_cast<std::byte>(c));
  }
  void bytes(std::span<const std::byte> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
  std::vector<std::byte> take() { return std::move(buf_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::byte>(v >> (8 * i)));
  }
  std::vector<std::byte> buf_;
};

class PayloadReader {
 public:
  PayloadReader(std::span<const std::byte> p, FrameType t) : p_(p), type_(t) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint64_t u64() { return le(8); }
  Digest digest() {
    need(32);
    Digest d{};
    for (std::size_t i = 0; i < 32; ++i) d[i] = static_cast<std::uint8_t>(p_[pos_ + i]);
    pos_ += 32;
    return d;
  }
  std::string str() {
    auto n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::byte> rest() {
    auto r = p_.subspan(pos_);
    pos_ = p_.size();
    return r;
  }
  void done() const {
    if (pos_ != p_.size()) throw ProtocolError(to_string(type_) + " payload has trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (p_.size() - pos_ < n) throw ProtocolError(to_string(type_) + " payload truncated");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::span<const std::byte> p_;
  std::size_t pos_ = 0;
  FrameType type_;
};

void expect(const Frame& f, FrameType t) {
  if (f.type != t) throw ProtocolError("expected " + to_string(t) + ", got " + to_string(f.type));
}

}  // namespace

std::string to_string(FrameType t) {
  switch (t) {
    case FrameType::hello: return "HELLO";
    case FrameType::manifest: return "MANIFEST";
    case FrameType::file_open: return "FILE_OPEN";
    case FrameType::chunk: return "CHUNK";
    case FrameType::file_close: return "FILE_CLOSE";
    case FrameType::growth_mark: return "GROWTH_MARK";
    case FrameType::end_of_source: return "END_OF_SOURCE";
    case FrameType::ack: return "ACK";
    case FrameType::nack: return "NACK";
    case FrameType::bye: return "BYE";
  }
  return "UNKNOWN(" + std::to_string(static_cast<int>(t)) + ")";
}

bool is_known_frame_type(std::uint8_t tag) { return tag >= 1 && tag <= 10; }

void encode_header(FrameType type, std::uint32_t length, std::span<std::byte, kHeaderBytes> out) {
  out[0] = static_cast<std::byte>(type);
  for (int i = 0; i < 4; ++i) out[1 + i] = static_cast<std::byte>(length >> (8 * i));
}

std::vector<std::byte> encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxPayload)
    throw ProtocolError("frame payload of " + std::to_string(f.payload.size()) + " bytes exceeds 16 MiB");
  std::vector<std::byte> out(kHeaderBytes + f.payload.size());
  encode_header(f.type, static_cast<std::uint32_t>(f.payload.size()), std::span<std::byte, kHeaderBytes>(out.data(), kHeaderBytes));
  std::copy(f.payload.begin(), f.payload.end(), out.begin() + kHeaderBytes);
  return out;
}

FrameHeader decode_header(std::span<const std::byte, kHeaderBytes> bytes) {
  auto tag = static_cast<std::uint8_t>(bytes[0]);
  if (!is_known_frame_type(tag)) throw ProtocolError("unknown frame tag " + std::to_string(tag));
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[1 + i]) << (8 * i);
  if (len > kMaxPayload) throw ProtocolError("frame length " + std::to_string(len) + " exceeds 16 MiB");
  return {static_cast<FrameType>(tag), len};
}

DecodeResult decode_frame(std::span<const std::byte> bytes) {
  DecodeResult r;
  if (bytes.empty()) return r;
  if (!is_known_frame_type(static_cast<std::uint8_t>(bytes[0]))) {
    r.status = DecodeStatus::error;
    r.error = "unknown frame tag " + std::to_string(static_cast<int>(bytes[0]));
    return r;
  }
  if (bytes.size() < kHeaderBytes) return r;
  FrameHeader h;
  try {
    h = decode_header(bytes.first<kHeaderBytes>());
  } catch (const ProtocolError& e) {
    r.status = DecodeStatus::error;
    r.error = e.what();
    return r;
  }
  if (bytes.size() - kHeaderBytes < h.length) return r;
  r.status = DecodeStatus::ok;
  r.frame.type = h.type;
  auto body = bytes.subspan(kHeaderBytes, h.length);
  r.frame.payload.assign(body.begin(), body.end());
  r.consumed = kHeaderBytes + h.length;
  return r;
}

std::string to_string(SessionMode m) { return m == SessionMode::bulk ? "bulk" : "streaming"; }
std::string to_string(Encryption e) { return e == Encryption::none ? "none" : "tls"; }

SessionMode session_mode_from_string(std::string_view s) {
  if (s == "bulk") return SessionMode::bulk;
  if (s == "streaming") return SessionMode::streaming;
  throw std::invalid_argument("unknown transfer mode '" + std::string(s) + "' (expected bulk or streaming)");
}

Encryption encryption_from_string(std::string_view s) {
  if (s == "none") return Encryption::none;
  if (s == "tls") return Encryption::tls;
  throw std::invalid_argument("unknown encryption '" + std::string(s) + "' (expected none or tls)");
}

std::string to_string(NackReason r) {
  switch (r) {
    case NackReason::digest_mismatch: return "digest-mismatch";
    case NackReason::write_failed: return "write-failed";
    case NackReason::out_of_order: return "out-of-order";
    case NackReason::source_shrank: return "source-shrank";
    case NackReason::bad_request: return "bad-request";
  }
  return "unknown";
}

std::uint16_t negotiate_version(std::uint16_t ours, std::uint16_t theirs) { return std::min(ours, theirs); }

Frame make_hello(const SessionHello& h) {
  PayloadWriter w;
  w.u16(h.protocol_version);
  w.u8(static_cast<std::uint8_t>(h.mode));
  w.u16(h.stream_count);
  w.u8(static_cast<std::uint8_t>(h.encryption));
  w.digest(h.manifest_digest);
  w.u64(h.session_id);
  w.u8(static_cast<std::uint8_t>(h.role));
  w.u16(h.stream_index);
  w.u64(h.socket_buffer);
  w.u8(h.flags);
  return {FrameType::hello, w.take()};
}

SessionHello parse_hello(const Frame& f) {
  expect(f, FrameType::hello);
  PayloadReader r(f.payload, f.type);
  SessionHello h;
  h.protocol_version = r.u16();
  auto mode = r.u8();
  h.stream_count = r.u16();
  auto enc = r.u8();
  h.manifest_digest = r.digest();
  h.session_id = r.u64();
  auto role = r.u8();
  h.stream_index = r.u16();
  h.socket_buffer = r.u64();
  h.flags = r.u8();
  r.done();
  if (h.protocol_version == 0) throw ProtocolError("HELLO advertises protocol version 0");
  if (mode > 1) throw ProtocolError("HELLO has unknown mode " + std::to_string(mode));
  if (enc > 1) throw ProtocolError("HELLO has unknown encryption " + std::to_string(enc));
  if (role > 2) throw ProtocolError("HELLO has unknown role " + std::to_string(role));
  if (h.stream_count < 1) throw ProtocolError("HELLO stream_count must be at least 1");
  if (h.flags & ~kHelloDiscardSink) throw ProtocolError("HELLO has unknown flags");
  h.mode = static_cast<SessionMode>(mode);
  h.encryption = static_cast<Encryption>(enc);
  h.role = static_cast<ConnectionRole>(role);
  return h;
}

Frame make_manifest(const ManifestSummary& m) {
  PayloadWriter w;
  w.u64(m.file_count);
  w.u64(m.total_bytes);
  w.digest(m.fingerprint);
  return {FrameType::manifest, w.take()};
}

ManifestSummary parse_manifest(const Frame& f) {
  expect(f, FrameType::manifest);
  PayloadReader r(f.payload, f.type);
  ManifestSummary m;
  m.file_count = r.u64();
  m.total_bytes = r.u64();
  m.fingerprint = r.digest();
  r.done();
  return m;
}

Frame make_file_open(const FileOpen& f) {
  PayloadWriter w;
  w.u64(f.file_index);
  w.u64(f.size);
  w.str(f.relative_path);
  return {FrameType::file_open, w.take()};
}

FileOpen parse_file_open(const Frame& f) {
  expect(f, FrameType::file_open);
  PayloadReader r(f.payload, f.type);
  FileOpen o;
  o.file_index = r.u64();
  o.size = r.u64();
  o.relative_path = r.str();
  r.done();
  return o;
}

Frame make_chunk(std::uint64_t file_index, ByteCount offset, std::span<const std::byte> data) {
  if (data.empty()) throw ProtocolError("CHUNK must carry at least one byte");
  PayloadWriter w;
  w.u64(file_index);
  w.u64(offset);
  w.bytes(data);
  return {FrameType::chunk, w.take()};
}

ChunkHeader parse_chunk_prefix(std::span<const std::byte> payload) {
  PayloadReader r(payload, FrameType::chunk);
  ChunkHeader c;
  c.file_index = r.u64();
  c.offset = r.u64();
  c.chunk_len = payload.size() - kChunkPrefixBytes;
  if (c.chunk_len < 1) throw ProtocolError("CHUNK carries no data");
  if (c.offset > ~ByteCount{0} - c.chunk_len) throw ProtocolError("CHUNK offset overflows");
  return c;
}

ChunkHeader parse_chunk(const Frame& f, std::span<const std::byte>* data) {
  expect(f, FrameType::chunk);
  auto c = parse_chunk_prefix(f.payload);
  if (data) *data = std::span(f.payload).subspan(kChunkPrefixBytes);
  return c;
}

Frame make_file_close(const FileClose& f) {
  PayloadWriter w;
  w.u64(f.file_index);
  w.u64(f.final_size);
  w.digest(f.digest);
  return {FrameType::file_close, w.take()};
}

FileClose parse_file_close(const Frame& f) {
  expect(f, FrameType::file_close);
  PayloadReader r(f.payload, f.type);
  FileClose c;
  c.file_index = r.u64();
  c.final_size = r.u64();
  c.digest = r.digest();
  r.done();
  return c;
}

Frame make_growth_mark(const GrowthMark& g) {
  PayloadWriter w;
  w.u64(g.file_index);
  w.u64(g.committed_size);
  return {FrameType::growth_mark, w.take()};
}

GrowthMark parse_growth_mark(const Frame& f) {
  expect(f, FrameType::growth_mark);
  PayloadReader r(f.payload, f.type);
  GrowthMark g;
  g.file_index = r.u64();
  g.committed_size = r.u64();
  r.done();
  return g;
}

Frame make_end_of_source() { return {FrameType::end_of_source, {}}; }

Frame make_ack(const Ack& a) {
  PayloadWriter w;
  w.u64(a.ref);
  return {FrameType::ack, w.take()};
}

Ack parse_ack(const Frame& f) {
  expect(f, FrameType::ack);
  PayloadReader r(f.payload, f.type);
  Ack a{r.u64()};
  r.done();
  return a;
}

Frame make_nack(const Nack& n) {
  PayloadWriter w;
  w.u64(n.file_index);
  w.u8(static_cast<std::uint8_t>(n.reason));
  w.str(n.message.size() > 1024 ? n.message.substr(0, 1024) : n.message);
  return {FrameType::nack, w.take()};
}

Nack parse_nack(const Frame& f) {
  expect(f, FrameType::nack);
  PayloadReader r(f.payload, f.type);
  Nack n;
  n.file_index = r.u64();
  auto reason = r.u8();
  if (reason < 1 || reason > 5) throw ProtocolError("NACK has unknown reason " + std::to_string(reason));
  n.reason = static_cast<NackReason>(reason);
  n.message = r.str();
  r.done();
  return n;
}

Frame make_bye(std::optional<ByeSummary> summary) {
  PayloadWriter w;
  if (summary) {
    w.u64(summary->bytes_received);
    w.u64(summary->files_ok);
    w.u64(summary->files_failed);
  }
  return {FrameType::bye, w.take()};
}

std::optional<ByeSummary> parse_bye(const Frame& f) {
  expect(f, FrameType::bye);
  if (f.payload.empty()) return std::nullopt;
  PayloadReader r(f.payload, f.type);
  ByeSummary s;
  s.bytes_received = r.u64();
  s.files_ok = r.u64();
  s.files_failed = r.u64();
  r.done();
  return s;
}

bool is_safe_relative_path(std::string_view path) {
  if (path.empty() || path.front() == '/' || path.find('\0') != std::string_view::npos) return false;
  std::size_t start = 0;
  for (;;) {
    auto pos = path.find('/', start);
    auto part = path.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (part.empty() || part == "." || part == "..") return false;
    if (pos == std::string_view::npos) return true;
    start = pos + 1;
  }
}

}  // namespace dmlab::protocol
