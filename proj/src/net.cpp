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

#include "dmlab/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/uio.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <csignal>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include "dmlab/tls.hpp"

namespace dmlab::net {

namespace {

std::string errno_text(const std::string& what, int err = errno) { return what + ": " + std::strerror(err); }

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) freeaddrinfo(list);
  }
};

AddrInfo resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo ai;
  auto port = std::to_string(ep.port);
  const char* host = ep.host.empty() ? nullptr : ep.host.c_str();
  if (int rc = getaddrinfo(host, port.c_str(), &hints, &ai.list); rc != 0)
    throw NetError("cannot resolve " + ep.str() + ": " + gai_strerror(rc));
  return ai;
}

template <typename T>
void setopt(const Socket& s, int level, int name, const T& value, const char* what) {
  if (::setsockopt(s.fd(), level, name, &value, sizeof value) != 0) throw NetError(errno_text(what));
}

int getopt_int(const Socket& s, int level, int name, const char* what) {
  int v = 0;
  socklen_t len = sizeof v;
  if (::getsockopt(s.fd(), level, name, &v, &len) != 0) throw NetError(errno_text(what));
  return v;
}

}  // namespace

void Socket::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Endpoint Endpoint::parse(std::string_view text) {
  Endpoint ep;
  std::string_view host, port;
  if (!text.empty() && text.front() == '[') {
    auto close = text.find(']');
    if (close == std::string_view::npos || close + 1 >= text.size() || text[close + 1] != ':')
      throw NetError("malformed address '" + std::string(text) + "' (expected [addr]:port)");
    host = text.substr(1, close - 1);
    port = text.substr(close + 2);
  } else {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos) throw NetError("address '" + std::string(text) + "' lacks a :port");
    host = text.substr(0, colon);
    port = text.substr(colon + 1);
  }
  unsigned v = 0;
  auto [p, ec] = std::from_chars(port.data(), port.data() + port.size(), v);
  if (ec != std::errc{} || p != port.data() + port.size() || v > 65535)
    throw NetError("bad port in '" + std::string(text) + "'");
  ep.host = std::string(host);
  ep.port = static_cast<std::uint16_t>(v);
  return ep;
}

std::string Endpoint::str() const {
  if (host.find(':') != std::string::npos) return "[" + host + "]:" + std::to_string(port);
  return host + ":" + std::to_string(port);
}

Socket listen_tcp(const Endpoint& where, int backlog) {
  ignore_sigpipe();
  auto ai = resolve(where, true);
  std::string last = "no usable address";
  for (auto* a = ai.list; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol));
    if (!s.valid()) continue;
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) != 0) {
      last = errno_text("bind " + where.str());
      continue;
    }
    if (::listen(s.fd(), backlog) != 0) {
      last = errno_text("listen " + where.str());
      continue;
    }
    return s;
  }
  throw NetError(last);
}

std::uint16_t local_port(const Socket& s) {
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&ss), &len) != 0) throw NetError(errno_text("getsockname"));
  if (ss.ss_family == AF_INET) return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
}

Socket connect_tcp(const Endpoint& peer, std::chrono::milliseconds timeout,
                   const std::function<void(const Socket&)>& before_connect) {
  ignore_sigpipe();
  auto ai = resolve(peer, false);
  std::string last = "no usable address";
  for (auto* a = ai.list; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, a->ai_protocol));
    if (!s.valid()) continue;
    if (before_connect) before_connect(s);
    int rc = ::connect(s.fd(), a->ai_addr, a->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd pfd{s.fd(), POLLOUT, 0};
      rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
      if (rc == 0) {
        last = "connect " + peer.str() + ": timed out";
        continue;
      }
      int err = 0;
      socklen_t len = sizeof err;
      ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
      if (err != 0) {
        last = errno_text("connect " + peer.str(), err);
        continue;
      }
    } else if (rc != 0) {
      last = errno_text("connect " + peer.str());
      continue;
    }
    int flags = ::fcntl(s.fd(), F_GETFL);
    ::fcntl(s.fd(), F_SETFL, flags & ~O_NONBLOCK);
    return s;
  }
  throw NetError("peer unreachable: " + last);
}

void set_nodelay(const Socket& s, bool on) { setopt(s, IPPROTO_TCP, TCP_NODELAY, int{on ? 1 : 0}, "TCP_NODELAY"); }

void set_congestion_control(const Socket& s, const std::string& cca) {
  if (::setsockopt(s.fd(), IPPROTO_TCP, TCP_CONGESTION, cca.data(), static_cast<socklen_t>(cca.size())) != 0) {
    int err = errno;
    std::string avail;
    for (const auto& n : available_congestion_controls()) avail += (avail.empty() ? "" : " ") + n;
    throw NetError(errno_text("congestion control '" + cca + "' unavailable (available: " + avail + ")", err));
  }
}

std::string congestion_control(const Socket& s) {
  char buf[32] = {};
  socklen_t len = sizeof buf;
  if (::getsockopt(s.fd(), IPPROTO_TCP, TCP_CONGESTION, buf, &len) != 0) throw NetError(errno_text("TCP_CONGESTION"));
  return std::string(buf, strnlen(buf, len));
}

void set_buffer_sizes(const Socket& s, std::uint64_t bytes) {
  int v = static_cast<int>(std::min<std::uint64_t>(bytes, 0x3FFFFFFF));
  // The FORCE variants bypass net.core.{r,w}mem_max when privileged.
  if (::setsockopt(s.fd(), SOL_SOCKET, SO_SNDBUFFORCE, &v, sizeof v) != 0)
    setopt(s, SOL_SOCKET, SO_SNDBUF, v, "SO_SNDBUF");
  if (::setsockopt(s.fd(), SOL_SOCKET, SO_RCVBUFFORCE, &v, sizeof v) != 0)
    setopt(s, SOL_SOCKET, SO_RCVBUF, v, "SO_RCVBUF");
}

std::uint64_t send_buffer(const Socket& s) {
  return static_cast<std::uint64_t>(getopt_int(s, SOL_SOCKET, SO_SNDBUF, "SO_SNDBUF"));
}

std::uint64_t receive_buffer(const Socket& s) {
  return static_cast<std::uint64_t>(getopt_int(s, SOL_SOCKET, SO_RCVBUF, "SO_RCVBUF"));
}

void set_window_clamp(const Socket& s, std::uint64_t bytes) {
  setopt(s, IPPROTO_TCP, TCP_WINDOW_CLAMP, static_cast<int>(std::min<std::uint64_t>(bytes, 0x3FFFFFFF)),
         "TCP_WINDOW_CLAMP");
}

std::uint64_t window_clamp(const Socket& s) {
  return static_cast<std::uint64_t>(getopt_int(s, IPPROTO_TCP, TCP_WINDOW_CLAMP, "TCP_WINDOW_CLAMP"));
}

std::vector<std::string> available_congestion_controls() {
  std::ifstream in("/proc/sys/net/ipv4/tcp_available_congestion_control");
  std::vector<std::string> out;
  std::string name;
  while (in >> name) out.push_back(name);
  return out;
}

// ---- Connection -------------------------------------------------------------

Connection::Connection(Socket s) : sock_(std::move(s)), rbuf_(256 * 1024) { ignore_sigpipe(); }
Connection::~Connection() = default;
Connection::Connection(Connection&&) noexcept = default;
Connection& Connection::operator=(Connection&&) noexcept = default;

void Connection::start_tls_client() { tls_ = std::make_unique<TlsSession>(sock_.fd(), TlsSession::Role::client); }
void Connection::start_tls_server() { tls_ = std::make_unique<TlsSession>(sock_.fd(), TlsSession::Role::server); }

void Connection::abort() {
  if (sock_.valid()) ::shutdown(sock_.fd(), SHUT_RDWR);
}

void Connection::write_all(std::span<const std::byte> data) {
  while (!data.empty()) {
    std::size_t n = 0;
    if (tls_) {
      n = tls_->write(data);
    } else {
      ssize_t rc = ::send(sock_.fd(), data.data(), data.size(), MSG_NOSIGNAL);
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw ConnectionLost(errno_text("send"));
      }
      n = static_cast<std::size_t>(rc);
    }
    data = data.subspan(n);
    bytes_sent_ += n;
  }
}

void Connection::writev_all(std::span<const std::byte> a, std::span<const std::byte> b) {
  if (tls_) {
    write_all(a);
    write_all(b);
    return;
  }
  while (!a.empty() || !b.empty()) {
    iovec iov[2] = {{const_cast<std::byte*>(a.data()), a.size()}, {const_cast<std::byte*>(b.data()), b.size()}};
    msghdr msg{};
    msg.msg_iov = a.empty() ? iov + 1 : iov;
    msg.msg_iovlen = a.empty() ? 1 : 2;
    ssize_t rc = ::sendmsg(sock_.fd(), &msg, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ConnectionLost(errno_text("send"));
    }
    auto n = static_cast<std::size_t>(rc);
    bytes_sent_ += n;
    auto from_a = std::min(n, a.size());
    a = a.subspan(from_a);
    b = b.subspan(n - from_a);
  }
}

void Connection::send_frame(const protocol::Frame& f) {
  if (f.payload.size() > protocol::kMaxPayload) throw protocol::ProtocolError("frame payload exceeds 16 MiB");
  std::array<std::byte, protocol::kHeaderBytes> hdr;
  protocol::encode_header(f.type, static_cast<std::uint32_t>(f.payload.size()), hdr);
  writev_all(hdr, f.payload);
}

void Connection::send_chunk(std::uint64_t file_index, ByteCount offset, std::span<const std::byte> data) {
  if (data.empty()) throw protocol::ProtocolError("CHUNK must carry at least one byte");
  if (data.size() + protocol::kChunkPrefixBytes > protocol::kMaxPayload)
    throw protocol::ProtocolError("chunk exceeds 16 MiB frame limit");
  std::array<std::byte, protocol::kHeaderBytes + protocol::kChunkPrefixBytes> hdr;
  protocol::encode_header(protocol::FrameType::chunk,
                          static_cast<std::uint32_t>(data.size() + protocol::kChunkPrefixBytes),
                          std::span<std::byte, protocol::kHeaderBytes>(hdr.data(), protocol::kHeaderBytes));
  for (int i = 0; i < 8; ++i) {
    hdr[5 + i] = static_cast<std::byte>(file_index >> (8 * i));
    hdr[13 + i] = static_cast<std::byte>(offset >> (8 * i));
  }
  writev_all(hdr, data);
}

std::size_t Connection::read_some(std::span<std::byte> out) {
  if (tls_) return tls_->read(out);
  for (;;) {
    ssize_t rc = ::recv(sock_.fd(), out.data(), out.size(), 0);
    if (rc >= 0) return static_cast<std::size_t>(rc);
    if (errno == EINTR) continue;
    throw ConnectionLost(errno_text("recv"));
  }
}

void Connection::read_exact(std::span<std::byte> out, bool* clean_eof) {
  std::size_t filled = 0;
  // Drain buffered bytes first; large remainders bypass the buffer.
  while (filled < out.size()) {
    if (rpos_ < rend_) {
      auto n = std::min(rend_ - rpos_, out.size() - filled);
      std::memcpy(out.data() + filled, rbuf_.data() + rpos_, n);
      rpos_ += n;
      filled += n;
      continue;
    }
    auto remaining = out.size() - filled;
    std::size_t got = 0;
    if (remaining >= rbuf_.size()) {
      got = read_some(out.subspan(filled));
      filled += got;
    } else {
      got = read_some(rbuf_);
      rpos_ = 0;
      rend_ = got;
    }
    if (got == 0) {
      if (clean_eof && filled == 0) {
        *clean_eof = true;
        return;
      }
      throw ConnectionLost("peer closed the connection mid-frame");
    }
  }
}

std::optional<protocol::FrameType> Connection::recv_frame_into(std::vector<std::byte>& payload) {
  std::array<std::byte, protocol::kHeaderBytes> hdr;
  bool eof = false;
  read_exact(hdr, &eof);
  if (eof) return std::nullopt;
  auto h = protocol::decode_header(hdr);
  payload.resize(h.length);
  read_exact(payload, nullptr);
  return h.type;
}

std::optional<protocol::Frame> Connection::recv_frame() {
  protocol::Frame f;
  auto t = recv_frame_into(f.payload);
  if (!t) return std::nullopt;
  f.type = *t;
  return f;
}

protocol::Frame Connection::expect_frame() {
  auto f = recv_frame();
  if (!f) throw ConnectionLost("peer closed the connection");
  return std::move(*f);
}

}  // namespace dmlab::net
