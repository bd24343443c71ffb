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

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/protocol.hpp"

namespace dmlab::net {

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The peer went away or the stream broke mid-frame.
class ConnectionLost : public NetError {
 public:
  using NetError::NetError;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  /// "host:port" or "[v6addr]:port".
  static Endpoint parse(std::string_view text);
  std::string str() const;
  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

/// Owning file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { reset(); }
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.release();
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    int f = fd_;
    fd_ = -1;
    return f;
  }
  void reset();

 private:
  int fd_ = -1;
};

Socket listen_tcp(const Endpoint& where, int backlog = 128);
std::uint16_t local_port(const Socket& s);
/// `before_connect` runs on the fresh socket ahead of the SYN, so buffer
/// sizes can influence window-scale negotiation.
Socket connect_tcp(const Endpoint& peer, std::chrono::milliseconds timeout = std::chrono::seconds(10),
                   const std::function<void(const Socket&)>& before_connect = {});

// Thin setsockopt wrappers; each throws NetError with errno text on failure.
void set_nodelay(const Socket& s, bool on);
void set_congestion_control(const Socket& s, const std::string& cca);
std::string congestion_control(const Socket& s);
void set_buffer_sizes(const Socket& s, std::uint64_t bytes);
std::uint64_t send_buffer(const Socket& s);
std::uint64_t receive_buffer(const Socket& s);
void set_window_clamp(const Socket& s, std::uint64_t bytes);
std::uint64_t window_clamp(const Socket& s);

/// Names in /proc/sys/net/ipv4/tcp_available_congestion_control.
std::vector<std::string> available_congestion_controls();

class TlsSession;

/// Framed, optionally TLS-wrapped stream.
class Connection {
 public:
  explicit Connection(Socket s);
  ~Connection();
  Connection(Connection&&) noexcept;
  Connection& operator=(Connection&&) noexcept;

  void start_tls_client();
  void start_tls_server();
  bool encrypted() const { return tls_ != nullptr; }

  void send_frame(const protocol::Frame& f);
  /// CHUNK frame written without assembling the payload in memory.
  void send_chunk(std::uint64_t file_index, ByteCount offset, std::span<const std::byte> data);

  /// Next frame, or nullopt on a clean EOF at a frame boundary.
  /// `payload` is reused across calls.
  std::optional<protocol::FrameType> recv_frame_into(std::vector<std::byte>& payload);
  std::optional<protocol::Frame> recv_frame();
  /// recv_frame() that treats EOF as ConnectionLost.
  protocol::Frame expect_frame();

  /// Unblocks a reader in another thread; further I/O fails.
  void abort();

  const Socket& socket() const { return sock_; }
  std::uint64_t bytes_sent() const { return bytes_sent_; }

 private:
  void write_all(std::span<const std::byte> data);
  void writev_all(std::span<const std::byte> a, std::span<const std::byte> b);
  std::size_t read_some(std::span<std::byte> out);
  void read_exact(std::span<std::byte> out, bool* clean_eof);

  Socket sock_;
  std::unique_ptr<TlsSession> tls_;
  std::vector<std::byte> rbuf_;
  std::size_t rpos_ = 0, rend_ = 0;
  std::uint64_t bytes_sent_ = 0;
};

}  // namespace dmlab::net
