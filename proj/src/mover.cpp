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

#include "dmlab/mover.hpp"

#include <fcntl.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <list>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_map>

namespace dmlab::mover {

using Clock = std::chrono::steady_clock;
using protocol::ConnectionRole;
using protocol::FrameType;
using protocol::NackReason;

namespace {

std::uint64_t random_session_id() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

}  // namespace

std::string to_string(Integrity i) {
  switch (i) {
    case Integrity::verified: return "verified";
    case Integrity::failed: return "failed";
    case Integrity::skipped: return "skipped";
  }
  return "?";
}

double throughput_bps(ByteCount bytes, std::chrono::nanoseconds wall) {
  if (wall.count() <= 0) return 0.0;
  return static_cast<double>(bytes) * 8.0 / (static_cast<double>(wall.count()) / 1e9);
}

void TransferSpec::validate() const {
  if (stream_count < 1) throw TransferError("stream_count must be at least 1");
  if (chunk_size < kMinChunkSize) throw TransferError("chunk_size must be at least 4 KiB");
  if (chunk_size > protocol::kMaxPayload - protocol::kChunkPrefixBytes)
    throw TransferError("chunk_size must fit a 16 MiB frame");
  if (mode == SessionMode::streaming && source.kind != SourceEndpoint::Kind::directory)
    throw TransferError("streaming mode requires a directory source");
  if (!sink.subdirectory.empty() && !protocol::is_safe_relative_path(sink.subdirectory))
    throw TransferError("sink subdirectory must be a plain relative path");
}

SocketOptionsReport apply_socket_options(const net::Socket& s, const TransferSpec& spec) {
  SocketOptionsReport r;
  r.requested_cca = spec.cca;
  r.requested_buffer = spec.socket_buffer;
  if (!spec.cca.empty()) {
    auto avail = net::available_congestion_controls();
    if (std::find(avail.begin(), avail.end(), spec.cca) == avail.end()) {
      std::string list;
      for (const auto& a : avail) list += (list.empty() ? "" : " ") + a;
      throw TransferError("congestion control '" + spec.cca + "' is not available on this host (available: " + list +
                          ")");
    }
    try {
      net::set_congestion_control(s, spec.cca);
    } catch (const net::NetError& e) {
      throw TransferError(e.what());
    }
  }
  if (spec.socket_buffer) {
    net::set_buffer_sizes(s, *spec.socket_buffer);
    net::set_window_clamp(s, *spec.socket_buffer);
  }
  r.effective_cca = net::congestion_control(s);
  r.effective_send_buffer = net::send_buffer(s);
  r.effective_receive_buffer = net::receive_buffer(s);
  r.window_clamp = net::window_clamp(s);
  return r;
}

std::vector<std::vector<std::size_t>> schedule_lpt(std::span<const ByteCount> sizes, std::size_t streams) {
  if (streams == 0) throw TransferError("cannot schedule onto zero streams");
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sizes[a] > sizes[b]; });
  std::vector<std::vector<std::size_t>> plan(streams);
  std::vector<ByteCount> load(streams, 0);
  for (auto f : order) {
    auto s = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    plan[s].push_back(f);
    load[s] += sizes[f];
  }
  return plan;
}

// =============================================================================
// Receiver
// =============================================================================

namespace {

struct RxFile {
  std::string relative_path;
  fs::path part_path, final_path;
  int fd = -1;
  std::uint64_t announced = 0;
  ByteCount next = 0;
  ByteCount committed = 0;
  Sha256 hash;
  bool failed = false;
  NackReason reason = NackReason::bad_request;
  std::string why;

  void fail(NackReason r, std::string message) {
    if (failed) return;
    failed = true;
    reason = r;
    why = std::move(message);
  }
  void discard_partial() {
    close_fd(fd);
    if (!part_path.empty()) {
      std::error_code ec;
      fs::remove(part_path, ec);
    }
  }
};

struct SessionState {
  std::mutex mu;
  SessionReport report;
};

}  // namespace

struct Receiver::Impl {
  ServeConfig config;
  net::Socket listener;
  net::Endpoint local;
  std::atomic<bool> stopping{false};

  struct Worker {
    std::shared_ptr<net::Connection> conn;
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> finished;
  };
  std::mutex workers_mu;
  std::list<Worker> workers;
  std::thread acceptor;

  mutable std::mutex mu;
  mutable std::condition_variable cv;
  std::vector<SessionReport> completed;
  std::map<std::uint64_t, std::shared_ptr<SessionState>> live;

  std::shared_ptr<SessionState> session(std::uint64_t id) {
    std::lock_guard lk(mu);
    auto& s = live[id];
    if (!s) {
      s = std::make_shared<SessionState>();
      s->report.session_id = id;
    }
    return s;
  }

  void finish_session(std::uint64_t id) {
    std::lock_guard lk(mu);
    auto it = live.find(id);
    if (it == live.end()) return;
    {
      std::lock_guard slk(it->second->mu);
      completed.push_back(it->second->report);
    }
    live.erase(it);
    cv.notify_all();
  }

  void accept_loop() {
    while (!stopping) {
      int fd = ::accept4(listener.fd(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) {
        if (stopping) return;
        if (errno == EINTR || errno == ECONNABORTED) continue;
        return;
      }
      auto conn = std::make_shared<net::Connection>(net::Socket(fd));
      auto finished = std::make_shared<std::atomic<bool>>(false);
      std::lock_guard lk(workers_mu);
      for (auto it = workers.begin(); it != workers.end();) {
        if (*it->finished) {
          it->thread.join();
          it = workers.erase(it);
        } else {
          ++it;
        }
      }
      workers.push_back({conn, std::thread([this, conn, finished] {
                           try {
                             handle(*conn);
                           } catch (const std::exception&) {
                             // Broken peers end their own connection only.
                           }
                           *finished = true;
                         }),
                         finished});
    }
  }

  void handle(net::Connection& conn) {
    auto hello = protocol::parse_hello(conn.expect_frame());
    auto reply = hello;
    reply.protocol_version = protocol::negotiate_version(protocol::kProtocolVersion, hello.protocol_version);
    conn.send_frame(protocol::make_hello(reply));
    if (hello.encryption == protocol::Encryption::tls) conn.start_tls_server();
    switch (hello.role) {
      case ConnectionRole::control: return handle_control(conn, hello);
      case ConnectionRole::data: return handle_data(conn, hello);
      case ConnectionRole::probe: return handle_probe(conn);
    }
  }

  void handle_probe(net::Connection& conn) {
    net::set_nodelay(conn.socket(), true);
    while (auto f = conn.recv_frame()) {
      if (f->type == FrameType::bye) {
        conn.send_frame(protocol::make_bye());
        return;
      }
      if (f->type != FrameType::ack) throw protocol::ProtocolError("probe connection expects ACK frames");
      conn.send_frame(*f);
    }
  }

  void handle_control(net::Connection& conn, const protocol::SessionHello& hello) {
    auto state = session(hello.session_id);
    {
      std::lock_guard lk(state->mu);
      state->report.mode = hello.mode;
      state->report.encryption = hello.encryption;
      state->report.discard = config.discard || (hello.flags & protocol::kHelloDiscardSink);
    }
    while (auto f = conn.recv_frame()) {
      switch (f->type) {
        case FrameType::manifest:
          protocol::parse_manifest(*f);
          conn.send_frame(protocol::make_ack({0}));
          break;
        case FrameType::end_of_source: {
          std::lock_guard lk(state->mu);
          state->report.end_of_source = true;
          break;
        }
        case FrameType::bye: {
          protocol::ByeSummary summary;
          {
            std::lock_guard lk(state->mu);
            summary = {state->report.bytes_verified, state->report.files_ok, state->report.files_failed};
          }
          conn.send_frame(protocol::make_bye(summary));
          finish_session(hello.session_id);
          return;
        }
        default: throw protocol::ProtocolError("unexpected " + protocol::to_string(f->type) + " on control connection");
      }
    }
    finish_session(hello.session_id);
  }

  void handle_data(net::Connection& conn, const protocol::SessionHello& hello) {
    auto state = session(hello.session_id);
    const bool discard = config.discard || (hello.flags & protocol::kHelloDiscardSink);
    const bool streaming = hello.mode == SessionMode::streaming;
    if (hello.socket_buffer) {
      net::set_buffer_sizes(conn.socket(), hello.socket_buffer);
      net::set_window_clamp(conn.socket(), hello.socket_buffer);
    }
    {
      std::lock_guard lk(state->mu);
      ++state->report.streams_seen;
    }

    std::unordered_map<std::uint64_t, RxFile> files;
    protocol::ByeSummary stream_summary;
    std::vector<std::byte> payload;

    auto nack = [&](std::uint64_t index, NackReason reason, const std::string& why) {
      conn.send_frame(protocol::make_nack({index, reason, why}));
      std::lock_guard lk(state->mu);
      ++state->report.files_failed;
      ++stream_summary.files_failed;
      state->report.nacks.push_back(protocol::to_string(reason) + ": " + why);
    };

    struct Cleanup {
      std::unordered_map<std::uint64_t, RxFile>& files;
      ~Cleanup() {
        for (auto& [_, f] : files) f.discard_partial();
      }
    } cleanup{files};

    while (auto type = conn.recv_frame_into(payload)) {
      protocol::Frame view;
      switch (*type) {
        case FrameType::file_open: {
          view = {*type, payload};
          auto open = protocol::parse_file_open(view);
          auto [it, fresh] = files.try_emplace(open.file_index);
          if (!fresh) {
            it->second.discard_partial();
            it->second = RxFile{};
          }
          RxFile& rx = it->second;
          rx.relative_path = open.relative_path;
          rx.announced = open.size;
          if (!protocol::is_safe_relative_path(open.relative_path)) {
            rx.fail(NackReason::bad_request, "unsafe path '" + open.relative_path + "'");
            break;
          }
          if (streaming != (open.size == protocol::kUnknownSize)) {
            rx.fail(NackReason::bad_request, "size announcement does not match session mode");
            break;
          }
          if (!discard) {
            rx.final_path = config.root / open.relative_path;
            rx.part_path = rx.final_path;
            rx.part_path += ".part";
            std::error_code ec;
            fs::create_directories(rx.final_path.parent_path(), ec);
            rx.fd = ::open(rx.part_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
            if (rx.fd < 0) rx.fail(NackReason::write_failed, "create " + rx.part_path.string() + ": " + std::strerror(errno));
          }
          break;
        }
        case FrameType::chunk: {
          auto hdr = protocol::parse_chunk_prefix(payload);
          auto it = files.find(hdr.file_index);
          if (it == files.end()) break;  // file already rejected; drain
          RxFile& rx = it->second;
          auto data = std::span(payload).subspan(protocol::kChunkPrefixBytes);
          {
            std::lock_guard lk(state->mu);
            state->report.bytes_received += data.size();
          }
          stream_summary.bytes_received += data.size();
          if (rx.failed) break;
          if (hdr.offset != rx.next) {
            rx.fail(NackReason::out_of_order,
                    "expected offset " + std::to_string(rx.next) + ", got " + std::to_string(hdr.offset));
            break;
          }
          const ByteCount limit = streaming ? rx.committed : rx.announced;
          if (hdr.offset + hdr.chunk_len > limit) {
            rx.fail(NackReason::bad_request, "chunk extends past " + std::string(streaming ? "committed" : "announced") +
                                                 " size " + std::to_string(limit));
            break;
          }
          if (config.chunk_hook) config.chunk_hook(hdr.file_index, hdr.offset, data);
          rx.hash.update(data);
          rx.next += data.size();
          if (rx.fd >= 0) {
            auto rest = std::span<const std::byte>(data);
            while (!rest.empty()) {
              ssize_t n = ::write(rx.fd, rest.data(), rest.size());
              if (n < 0) {
                if (errno == EINTR) continue;
                rx.fail(NackReason::write_failed, "write " + rx.part_path.string() + ": " + std::strerror(errno));
                rx.discard_partial();
                break;
              }
              rest = rest.subspan(static_cast<std::size_t>(n));
            }
          }
          break;
        }
        case FrameType::growth_mark: {
          view = {*type, payload};
          auto mark = protocol::parse_growth_mark(view);
          auto it = files.find(mark.file_index);
          if (it == files.end()) break;
          RxFile& rx = it->second;
          if (mark.committed_size < rx.committed) {
            std::string why = "source shrank from " + std::to_string(rx.committed) + " to " +
                              std::to_string(mark.committed_size) + " bytes";
            rx.discard_partial();
            files.erase(it);
            nack(mark.file_index, NackReason::source_shrank, why);
            break;
          }
          rx.committed = mark.committed_size;
          break;
        }
        case FrameType::file_close: {
          view = {*type, payload};
          auto close = protocol::parse_file_close(view);
          auto it = files.find(close.file_index);
          if (it == files.end()) {
            nack(close.file_index, NackReason::bad_request, "FILE_CLOSE for a file that is not open");
            break;
          }
          RxFile rx = std::move(it->second);
          files.erase(it);
          if (!rx.failed && close.final_size != rx.next)
            rx.fail(NackReason::bad_request, "closed at " + std::to_string(close.final_size) + " bytes but received " +
                                                 std::to_string(rx.next));
          if (!rx.failed && !streaming && close.final_size != rx.announced)
            rx.fail(NackReason::bad_request, "size differs from FILE_OPEN announcement");
          if (!rx.failed && rx.hash.finish() != close.digest)
            rx.fail(NackReason::digest_mismatch, "SHA-256 of received bytes differs for " + rx.relative_path);
          if (!rx.failed && rx.fd >= 0) {
            if (::close(rx.fd) != 0) rx.fail(NackReason::write_failed, std::strerror(errno));
            rx.fd = -1;
            std::error_code ec;
            if (!rx.failed) fs::rename(rx.part_path, rx.final_path, ec);
            if (ec) rx.fail(NackReason::write_failed, "rename: " + ec.message());
          }
          if (rx.failed) {
            rx.discard_partial();
            nack(close.file_index, rx.reason, rx.why);
          } else {
            conn.send_frame(protocol::make_ack({close.file_index}));
            std::lock_guard lk(state->mu);
            ++state->report.files_ok;
            state->report.bytes_verified += close.final_size;
            ++stream_summary.files_ok;
          }
          break;
        }
        case FrameType::bye:
          conn.send_frame(protocol::make_bye(stream_summary));
          return;
        default:
          throw protocol::ProtocolError("unexpected " + protocol::to_string(*type) + " on data connection");
      }
    }
  }

  void stop() {
    if (stopping.exchange(true)) return;
    ::shutdown(listener.fd(), SHUT_RDWR);
    if (acceptor.joinable()) acceptor.join();
    std::lock_guard lk(workers_mu);
    for (auto& w : workers) w.conn->abort();
    for (auto& w : workers) w.thread.join();
    workers.clear();
    listener.reset();
  }
};

Receiver::Receiver(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Receiver::~Receiver() {
  if (impl_) impl_->stop();
}
Receiver::Receiver(Receiver&&) noexcept = default;
Receiver& Receiver::operator=(Receiver&& o) noexcept {
  if (this != &o) {
    if (impl_) impl_->stop();
    impl_ = std::move(o.impl_);
  }
  return *this;
}

std::uint16_t Receiver::port() const { return impl_->local.port; }
net::Endpoint Receiver::local_endpoint() const { return impl_->local; }
void Receiver::stop() { impl_->stop(); }

std::vector<SessionReport> Receiver::sessions() const {
  std::lock_guard lk(impl_->mu);
  return impl_->completed;
}

bool Receiver::wait_for_sessions(std::size_t count, std::chrono::milliseconds timeout) const {
  std::unique_lock lk(impl_->mu);
  return impl_->cv.wait_for(lk, timeout, [&] { return impl_->completed.size() >= count; });
}

Receiver serve(const net::Endpoint& listen, ServeConfig config) {
  if (!config.discard) {
    if (config.root.empty()) throw TransferError("receiver needs a root directory or discard mode");
    std::error_code ec;
    fs::create_directories(config.root, ec);
    if (ec) throw TransferError("cannot create receiver root " + config.root.string() + ": " + ec.message());
  }
  auto impl = std::make_unique<Receiver::Impl>();
  impl->config = std::move(config);
  impl->listener = net::listen_tcp(listen);
  impl->local = listen;
  impl->local.port = net::local_port(impl->listener);
  auto* raw = impl.get();
  impl->acceptor = std::thread([raw] { raw->accept_loop(); });
  return Receiver(std::move(impl));
}

// =============================================================================
// Sender
// =============================================================================

namespace {

struct SourceFile {
  std::string source_path;  // relative to the source directory
  std::string wire_path;    // relative to the receiver root
  ByteCount size = 0;       // final size (bulk) or last committed size (streaming)
  std::optional<Digest> expected;
};

/// Files known to a session; deque keeps references stable while streaming appends.
struct FileTable {
  mutable std::mutex mu;
  std::deque<SourceFile> files;

  std::size_t add(SourceFile f) {
    std::lock_guard lk(mu);
    files.push_back(std::move(f));
    return files.size() - 1;
  }
  SourceFile get(std::size_t i) const {
    std::lock_guard lk(mu);
    return files[i];
  }
  void set_size(std::size_t i, ByteCount size) {
    std::lock_guard lk(mu);
    files[i].size = size;
  }
};

struct SessionContext {
  const TransferSpec& spec;
  std::uint64_t session_id = random_session_id();
  Digest manifest_digest{};
  FileTable table;
  Clock::time_point start = Clock::now();
  std::atomic<std::int64_t> last_ack_ns{0};

  explicit SessionContext(const TransferSpec& s) : spec(s) {}

  void note_ack() {
    auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
    auto prev = last_ack_ns.load();
    while (ns > prev && !last_ack_ns.compare_exchange_weak(prev, ns)) {
    }
  }

  protocol::SessionHello hello(ConnectionRole role, std::uint16_t index) const {
    protocol::SessionHello h;
    h.mode = spec.mode;
    h.stream_count = spec.stream_count;
    h.encryption = spec.encryption;
    h.manifest_digest = manifest_digest;
    h.session_id = session_id;
    h.role = role;
    h.stream_index = index;
    h.socket_buffer = spec.socket_buffer.value_or(0);
    if (spec.sink.kind == SinkEndpoint::Kind::discard) h.flags |= protocol::kHelloDiscardSink;
    return h;
  }

  std::string wire_path(const std::string& rel) const {
    return spec.sink.subdirectory.empty() ? rel : spec.sink.subdirectory + "/" + rel;
  }
};

/// Connects, exchanges HELLO, and upgrades to TLS when requested.
net::Connection open_connection(const SessionContext& ctx, ConnectionRole role, std::uint16_t index) {
  auto sock = net::connect_tcp(ctx.spec.peer, ctx.spec.connect_timeout, [&](const net::Socket& s) {
    if (role == ConnectionRole::data) apply_socket_options(s, ctx.spec);
  });
  net::Connection conn(std::move(sock));
  conn.send_frame(protocol::make_hello(ctx.hello(role, index)));
  auto reply = protocol::parse_hello(conn.expect_frame());
  if (reply.session_id != ctx.session_id) throw protocol::ProtocolError("HELLO reply names a different session");
  if (protocol::negotiate_version(protocol::kProtocolVersion, reply.protocol_version) < 1)
    throw protocol::ProtocolError("no common protocol version");
  if (ctx.spec.encryption == protocol::Encryption::tls) conn.start_tls_client();
  return conn;
}

class SourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TxFile {
  enum class State { queued, open, awaiting_ack, acked, failed };
  State state = State::queued;
  ByteCount sent = 0;
  ByteCount committed = 0;  // streaming: last GROWTH_MARK sent
  ByteCount final_size = 0;
  Sha256 hash;
  int fd = -1;
  bool opened = false;
  bool shrank = false;
  int resends = 0;
  Digest sent_digest{};
};

/// One data connection and the files assigned to it.
class StreamWorker {
 public:
  StreamWorker(SessionContext& ctx, std::uint16_t index) : ctx_(ctx), index_(index) {}
  ~StreamWorker() {
    for (auto& [_, f] : files_) close_fd(f.fd);
  }

  void enqueue_whole(std::size_t file) { push({Job::whole, file, 0}); }
  void enqueue_growth(std::size_t file, ByteCount committed) { push({Job::growth, file, committed}); }
  void enqueue_close(std::size_t file) { push({Job::close, file, 0}); }
  void finish_input() {
    std::lock_guard lk(mu_);
    input_done_ = true;
    cv_.notify_all();
  }

  void run() {
    try {
      connect();
    } catch (const std::exception& e) {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return input_done_; });
      fail_remaining(std::string("connect: ") + e.what());
      return;
    }
    for (;;) {
      Job job;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return broken_ || !jobs_.empty() || (input_done_ && outstanding_ == 0); });
        if (broken_) {
          lk.unlock();
          if (!recover()) return;
          continue;
        }
        if (jobs_.empty()) break;
        job = jobs_.front();
        jobs_.pop_front();
      }
      try {
        execute(job);
      } catch (const SourceError& e) {
        fail_file(job.file, e.what());
      } catch (const std::exception&) {
        std::lock_guard lk(mu_);
        broken_ = true;
      }
    }
    try {
      conn_->send_frame(protocol::make_bye());
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return bye_received_ || broken_; });
    } catch (const std::exception&) {
    }
    stop_reader();
  }

  ByteCount acked_bytes() const { return acked_bytes_; }
  std::uint64_t files_ok() const { return files_ok_; }
  const std::vector<FileFailure>& failures() const { return failures_; }
  std::uint32_t resends() const { return resends_; }
  std::uint32_t reconnects() const { return reconnects_; }

 private:
  struct Job {
    enum Kind { whole, growth, close } kind = whole;
    std::size_t file = 0;
    ByteCount size = 0;
  };

  void push(Job j) {
    std::lock_guard lk(mu_);
    files_.try_emplace(j.file);
    jobs_.push_back(j);
    cv_.notify_all();
  }

  void connect() {
    conn_ = std::make_unique<net::Connection>(open_connection(ctx_, ConnectionRole::data, index_));
    broken_ = false;
    bye_received_ = false;
    reader_ = std::thread([this] { read_loop(); });
  }

  void stop_reader() {
    if (conn_) conn_->abort();
    if (reader_.joinable()) reader_.join();
  }

  // One reconnect per broken connection; unacknowledged files are re-sent.
  bool recover() {
    stop_reader();
    conn_.reset();
    std::unique_lock lk(mu_);
    if (reconnects_ >= 1) {
      lk.unlock();
      std::unique_lock wait_lk(mu_);
      cv_.wait(wait_lk, [&] { return input_done_; });
      fail_remaining_locked("connection lost after reconnect");
      return false;
    }
    ++reconnects_;
    std::deque<Job> redo;
    for (auto& [idx, f] : files_) {
      if (f.state == TxFile::State::awaiting_ack || (f.state == TxFile::State::open && f.shrank)) {
        redo.push_back({Job::whole, idx, 0});
      } else if (f.state == TxFile::State::open) {
        close_fd(f.fd);
        f.sent = 0;
        f.hash = Sha256();
        f.opened = false;
        if (ctx_.spec.mode == SessionMode::streaming) {
          redo.push_back({Job::growth, idx, f.committed});
          f.committed = 0;
        } else {
          redo.push_back({Job::whole, idx, 0});
        }
      }
    }
    outstanding_ = 0;
    jobs_.insert(jobs_.begin(), redo.begin(), redo.end());
    lk.unlock();
    try {
      connect();
    } catch (const std::exception& e) {
      std::unique_lock wait_lk(mu_);
      cv_.wait(wait_lk, [&] { return input_done_; });
      fail_remaining_locked(std::string("reconnect failed: ") + e.what());
      return false;
    }
    return true;
  }

  void fail_remaining(const std::string& why) { fail_remaining_locked(why); }

  // Caller holds mu_ or is the only thread touching the state.
  void fail_remaining_locked(const std::string& why) {
    for (auto& [idx, f] : files_) {
      if (f.state == TxFile::State::acked || f.state == TxFile::State::failed) continue;
      f.state = TxFile::State::failed;
      close_fd(f.fd);
      failures_.push_back({ctx_.table.get(idx).source_path, why});
    }
    jobs_.clear();
  }

  void fail_file(std::size_t idx, const std::string& why) {
    std::lock_guard lk(mu_);
    auto& f = files_[idx];
    if (f.state == TxFile::State::failed || f.state == TxFile::State::acked) return;
    if (f.state == TxFile::State::awaiting_ack) --outstanding_;
    f.state = TxFile::State::failed;
    close_fd(f.fd);
    failures_.push_back({ctx_.table.get(idx).source_path, why});
    cv_.notify_all();
  }

  void read_loop() {
    try {
      while (auto f = conn_->recv_frame()) {
        if (f->type == FrameType::ack) {
          on_ack(protocol::parse_ack(*f).ref);
        } else if (f->type == FrameType::nack) {
          on_nack(protocol::parse_nack(*f));
        } else if (f->type == FrameType::bye) {
          std::lock_guard lk(mu_);
          bye_received_ = true;
          cv_.notify_all();
          return;
        } else {
          throw protocol::ProtocolError("unexpected " + protocol::to_string(f->type) + " from receiver");
        }
      }
    } catch (const std::exception&) {
    }
    std::lock_guard lk(mu_);
    if (!bye_received_) broken_ = true;
    cv_.notify_all();
  }

  void on_ack(std::uint64_t idx) {
    const auto src = ctx_.table.get(idx);
    std::lock_guard lk(mu_);
    auto it = files_.find(idx);
    if (it == files_.end() || it->second.state != TxFile::State::awaiting_ack) return;
    auto& f = it->second;
    --outstanding_;
    if (src.expected && *src.expected != f.sent_digest) {
      f.state = TxFile::State::failed;
      failures_.push_back({src.source_path, "source content differs from manifest digest"});
    } else {
      f.state = TxFile::State::acked;
      acked_bytes_ += f.final_size;
      ++files_ok_;
      ctx_.note_ack();
    }
    cv_.notify_all();
  }

  void on_nack(const protocol::Nack& n) {
    const auto src = ctx_.table.get(n.file_index);
    std::lock_guard lk(mu_);
    auto it = files_.find(n.file_index);
    if (it == files_.end()) return;
    auto& f = it->second;
    if (f.state == TxFile::State::acked || f.state == TxFile::State::failed) return;
    if (f.state == TxFile::State::awaiting_ack) --outstanding_;
    const bool retryable = n.reason != NackReason::source_shrank && n.reason != NackReason::bad_request;
    if (retryable && f.resends < 1 && f.state == TxFile::State::awaiting_ack) {
      ++f.resends;
      ++resends_;
      f.state = TxFile::State::queued;
      jobs_.push_front({Job::whole, static_cast<std::size_t>(n.file_index), 0});
    } else {
      f.state = TxFile::State::failed;
      close_fd(f.fd);
      failures_.push_back({src.source_path, protocol::to_string(n.reason) + ": " + n.message});
    }
    cv_.notify_all();
  }

  std::size_t read_source(std::size_t idx, TxFile& f, const SourceFile& src, ByteCount offset,
                          std::span<std::byte> out) {
    const auto& source = ctx_.spec.source;
    if (source.kind == SourceEndpoint::Kind::synthetic) {
      dataset::fill_content(source.synthetic.content_seed, idx, offset, out);
      return out.size();
    }
    if (f.fd < 0) {
      auto path = source.directory / src.source_path;
      f.fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
      if (f.fd < 0) throw SourceError("open " + path.string() + ": " + std::strerror(errno));
    }
    std::size_t got = 0;
    while (got < out.size()) {
      ssize_t n = ::pread(f.fd, out.data() + got, out.size() - got, static_cast<off_t>(offset + got));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SourceError("read " + src.source_path + ": " + std::strerror(errno));
      }
      if (n == 0) throw SourceError(src.source_path + " is shorter than expected");
      got += static_cast<std::size_t>(n);
    }
    return got;
  }

  void send_range(std::size_t idx, TxFile& f, const SourceFile& src, ByteCount until) {
    while (f.sent < until) {
      auto n = static_cast<std::size_t>(std::min<ByteCount>(buffer_.size(), until - f.sent));
      std::span<std::byte> block(buffer_.data(), n);
      read_source(idx, f, src, f.sent, block);
      f.hash.update(block);
      conn_->send_chunk(idx, f.sent, block);
      f.sent += n;
    }
  }

  TxFile& state(std::size_t idx) {
    std::lock_guard lk(mu_);
    return files_[idx];
  }

  void close_file(std::size_t idx, TxFile& f) {
    f.final_size = f.sent;
    f.sent_digest = f.hash.finish();
    close_fd(f.fd);
    {
      std::lock_guard lk(mu_);
      f.state = TxFile::State::awaiting_ack;
      ++outstanding_;
    }
    conn_->send_frame(protocol::make_file_close({idx, f.final_size, f.sent_digest}));
  }

  void execute(const Job& job) {
    if (buffer_.empty()) buffer_.resize(static_cast<std::size_t>(ctx_.spec.chunk_size));
    TxFile& f = state(job.file);
    {
      std::lock_guard lk(mu_);
      if (f.state == TxFile::State::failed || f.state == TxFile::State::acked) return;
    }
    const auto src = ctx_.table.get(job.file);
    const bool streaming = ctx_.spec.mode == SessionMode::streaming;

    switch (job.kind) {
      case Job::whole: {
        const ByteCount size = streaming ? (f.final_size ? f.final_size : f.committed) : src.size;
        close_fd(f.fd);
        f.sent = 0;
        f.hash = Sha256();
        f.shrank = false;
        {
          std::lock_guard lk(mu_);
          f.state = TxFile::State::open;
        }
        conn_->send_frame(protocol::make_file_open(
            {job.file, streaming ? protocol::kUnknownSize : size, src.wire_path}));
        f.opened = true;
        if (streaming) {
          conn_->send_frame(protocol::make_growth_mark({job.file, size}));
          f.committed = size;
        }
        send_range(job.file, f, src, size);
        close_file(job.file, f);
        break;
      }
      case Job::growth: {
        if (f.shrank) return;
        if (!f.opened) {
          {
            std::lock_guard lk(mu_);
            f.state = TxFile::State::open;
          }
          conn_->send_frame(protocol::make_file_open({job.file, protocol::kUnknownSize, src.wire_path}));
          f.opened = true;
        }
        if (job.size < f.committed) {
          // The receiver rejects the regression with NACK(source-shrank).
          f.shrank = true;
          {
            std::lock_guard lk(mu_);
            f.state = TxFile::State::awaiting_ack;
            ++outstanding_;
          }
          conn_->send_frame(protocol::make_growth_mark({job.file, job.size}));
          return;
        }
        if (job.size > f.committed) {
          conn_->send_frame(protocol::make_growth_mark({job.file, job.size}));
          f.committed = job.size;
          send_range(job.file, f, src, job.size);
        }
        break;
      }
      case Job::close: {
        if (f.shrank) return;
        if (!f.opened) {
          conn_->send_frame(protocol::make_file_open({job.file, protocol::kUnknownSize, src.wire_path}));
          f.opened = true;
        }
        close_file(job.file, f);
        break;
      }
    }
  }

  SessionContext& ctx_;
  std::uint16_t index_;
  std::unique_ptr<net::Connection> conn_;
  std::thread reader_;
  std::vector<std::byte> buffer_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  std::map<std::size_t, TxFile> files_;
  std::size_t outstanding_ = 0;
  bool input_done_ = false;
  bool broken_ = false;
  bool bye_received_ = false;

  ByteCount acked_bytes_ = 0;
  std::uint64_t files_ok_ = 0;
  std::vector<FileFailure> failures_;
  std::uint32_t resends_ = 0;
  std::uint32_t reconnects_ = 0;
};

struct ControlChannel {
  net::Connection conn;

  static ControlChannel open(const SessionContext& ctx, const protocol::ManifestSummary& summary) {
    ControlChannel c{open_connection(ctx, ConnectionRole::control, 0)};
    c.conn.send_frame(protocol::make_manifest(summary));
    auto ack = c.conn.expect_frame();
    if (ack.type != FrameType::ack) throw TransferError("receiver rejected the session manifest");
    return c;
  }

  std::optional<protocol::ByeSummary> close(bool end_of_source) {
    if (end_of_source) conn.send_frame(protocol::make_end_of_source());
    conn.send_frame(protocol::make_bye());
    return protocol::parse_bye(conn.expect_frame());
  }
};

TransferResult collect(SessionContext& ctx, std::vector<std::unique_ptr<StreamWorker>>& workers,
                       std::uint64_t file_count) {
  TransferResult r;
  for (auto& w : workers) {
    r.per_stream_bytes.push_back(w->acked_bytes());
    r.bytes_moved += w->acked_bytes();
    r.files_ok += w->files_ok();
    r.resends += w->resends();
    r.reconnects += w->reconnects();
    r.failures.insert(r.failures.end(), w->failures().begin(), w->failures().end());
  }
  r.files_failed = r.failures.size();
  auto last = ctx.last_ack_ns.load();
  r.wall_time = last > 0 ? std::chrono::nanoseconds(last)
                         : std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - ctx.start);
  r.throughput_bps = throughput_bps(r.bytes_moved, r.wall_time);
  if (r.files_failed > 0 || r.files_ok != file_count)
    r.integrity = Integrity::failed;
  else
    r.integrity = Integrity::verified;
  return r;
}

std::vector<std::unique_ptr<StreamWorker>> make_workers(SessionContext& ctx) {
  std::vector<std::unique_ptr<StreamWorker>> workers;
  for (std::uint16_t i = 0; i < ctx.spec.stream_count; ++i)
    workers.push_back(std::make_unique<StreamWorker>(ctx, i));
  return workers;
}

}  // namespace

TransferResult transfer(const TransferSpec& spec, const dataset::DatasetManifest& manifest) {
  spec.validate();
  if (spec.mode != SessionMode::bulk) throw TransferError("transfer() moves bulk datasets; use transfer_streaming");
  if (spec.source.kind == SourceEndpoint::Kind::directory) {
    for (const auto& e : manifest.entries) {
      std::error_code ec;
      auto size = fs::file_size(spec.source.directory / e.relative_path, ec);
      if (ec) throw TransferError("source file missing: " + e.relative_path);
      if (size != e.size)
        throw TransferError("source file " + e.relative_path + " has " + std::to_string(size) +
                            " bytes, manifest says " + std::to_string(e.size));
    }
  }

  SessionContext ctx(spec);
  ctx.manifest_digest = manifest.fingerprint();
  std::vector<ByteCount> sizes;
  for (const auto& e : manifest.entries) {
    ctx.table.add({e.relative_path, ctx.wire_path(e.relative_path), e.size, e.digest});
    sizes.push_back(e.size);
  }

  ctx.start = Clock::now();
  auto control = ControlChannel::open(ctx, {manifest.entries.size(), manifest.total_bytes, ctx.manifest_digest});
  auto workers = make_workers(ctx);
  auto plan = schedule_lpt(sizes, workers.size());
  for (std::size_t s = 0; s < workers.size(); ++s) {
    for (auto f : plan[s]) workers[s]->enqueue_whole(f);
    workers[s]->finish_input();
  }
  {
    std::vector<std::jthread> threads;
    for (auto& w : workers) threads.emplace_back([&w] { w->run(); });
  }
  auto result = collect(ctx, workers, manifest.entries.size());
  control.close(false);
  if (manifest.entries.empty())
    result.wall_time = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - ctx.start);
  return result;
}

TransferResult transfer(const TransferSpec& spec) {
  if (spec.source.kind != SourceEndpoint::Kind::synthetic)
    throw TransferError("transfer(spec) without a manifest needs a synthetic source");
  return transfer(spec, dataset::plan_dataset(spec.source.synthetic));
}

TransferResult transfer_streaming(const TransferSpec& spec, const fs::path& watch_root,
                                  std::chrono::milliseconds quiescence, const StreamingOptions& options) {
  spec.validate();
  if (spec.mode != SessionMode::streaming) throw TransferError("transfer_streaming requires streaming mode");
  std::error_code ec;
  if (!fs::is_directory(watch_root, ec)) throw TransferError("watch root does not exist: " + watch_root.string());

  SessionContext ctx(spec);
  ctx.start = Clock::now();
  auto control = ControlChannel::open(ctx, {0, 0, ctx.manifest_digest});
  auto workers = make_workers(ctx);
  std::vector<std::jthread> threads;
  for (auto& w : workers) threads.emplace_back([&w] { w->run(); });

  struct Known {
    std::size_t index;
    std::size_t stream;
    ByteCount committed;
  };
  std::map<std::string, Known> known;
  std::vector<ByteCount> load(workers.size(), 0);
  auto last_growth = Clock::now();

  auto scan = [&] {
    std::vector<std::pair<std::string, ByteCount>> seen;
    std::error_code it_ec;
    for (auto it = fs::recursive_directory_iterator(watch_root, it_ec); !it_ec && it != fs::end(it);
         it.increment(it_ec)) {
      const auto name = it->path().filename().string();
      if (!name.empty() && name.front() == '.') {
        if (it->is_directory(it_ec)) it.disable_recursion_pending();
        continue;
      }
      std::error_code fe;
      if (!it->is_regular_file(fe) || it->path().extension() == ".part") continue;
      auto size = it->file_size(fe);
      if (fe) continue;
      seen.emplace_back(fs::relative(it->path(), watch_root).generic_string(), size);
    }
    std::sort(seen.begin(), seen.end());
    for (const auto& [rel, size] : seen) {
      auto k = known.find(rel);
      if (k == known.end()) {
        auto stream = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
        auto idx = ctx.table.add({rel, ctx.wire_path(rel), size, std::nullopt});
        known.emplace(rel, Known{idx, stream, size});
        load[stream] += size;
        workers[stream]->enqueue_growth(idx, size);
        last_growth = Clock::now();
      } else if (size != k->second.committed) {
        if (size > k->second.committed) load[k->second.stream] += size - k->second.committed;
        k->second.committed = size;
        ctx.table.set_size(k->second.index, size);
        workers[k->second.stream]->enqueue_growth(k->second.index, size);
        last_growth = Clock::now();
      }
    }
  };

  for (;;) {
    const bool complete = fs::exists(watch_root / kCompletionMarker, ec);
    scan();
    if (complete) break;
    if (Clock::now() - last_growth >= quiescence) break;
    std::this_thread::sleep_for(options.poll_interval);
  }
  for (const auto& [_, k] : known) workers[k.stream]->enqueue_close(k.index);
  for (auto& w : workers) w->finish_input();
  threads.clear();

  auto result = collect(ctx, workers, known.size());
  control.close(true);
  if (known.empty()) result.wall_time = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - ctx.start);
  return result;
}

StreamingWriter::StreamingWriter(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

void StreamingWriter::append(const std::string& relative_path, std::span<const std::byte> data) {
  auto path = root_ / relative_path;
  fs::create_directories(path.parent_path());
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw TransferError("open " + path.string() + ": " + std::strerror(errno));
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw TransferError("append " + path.string() + ": " + std::strerror(err));
    }
    data = data.subspan(static_cast<std::size_t>(n));
  }
  ::close(fd);
}

void StreamingWriter::complete() {
  int fd = ::open((root_ / kCompletionMarker).c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
  if (fd >= 0) ::close(fd);
}

}  // namespace dmlab::mover
