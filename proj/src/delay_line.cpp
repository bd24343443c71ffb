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

#include <arpa/inet.h>
#include <fcntl.h>
#include <linux/if.h>
#include <linux/if_tun.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/ioctl.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <deque>
#include <random>
#include <thread>

#include "dmlab/emulation.hpp"

namespace dmlab::emulation {

namespace {

using Clock = std::chrono::steady_clock;

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

void set_address(int sock, const std::string& dev, unsigned long request, const std::string& addr) {
  ifreq ifr{};
  std::strncpy(ifr.ifr_name, dev.c_str(), IFNAMSIZ - 1);
  auto* sin = reinterpret_cast<sockaddr_in*>(&ifr.ifr_addr);
  sin->sin_family = AF_INET;
  if (::inet_pton(AF_INET, addr.c_str(), &sin->sin_addr) != 1) throw EmulationError("bad IPv4 address " + addr);
  if (::ioctl(sock, request, &ifr) != 0) throw EmulationError(sys_error("configure " + dev));
}

struct Packet {
  Clock::time_point release;
  std::vector<std::uint8_t> bytes;
};

}  // namespace

struct DelayLineBackend::Engine {
  int tun = -1;
  int wake = -1;
  std::thread worker;
  std::atomic<bool> stopping{false};

  mutable std::mutex mu;  // guards profile
  std::optional<LatencyProfile> profile;

  std::atomic<std::uint64_t> packets{0}, bytes{0}, dropped_loss{0}, dropped_queue{0};

  ByteCount queue_limit = 0;

  ~Engine() {
    stopping = true;
    if (wake >= 0) {
      std::uint64_t one = 1;
      [[maybe_unused]] auto n = ::write(wake, &one, sizeof one);
    }
    if (worker.joinable()) worker.join();
    if (tun >= 0) ::close(tun);
    if (wake >= 0) ::close(wake);
  }

  void run() {
    std::deque<Packet> queue;
    ByteCount queued = 0;
    Clock::time_point link_free{}, last_release{};
    std::mt19937_64 rng(0xde1a11e);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::uint8_t> buf(70000);

    while (!stopping) {
      timespec ts{}, *tsp = nullptr;
      if (!queue.empty()) {
        auto wait = std::max(Clock::duration::zero(), queue.front().release - Clock::now());
        auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(wait).count();
        ts.tv_sec = ns / 1'000'000'000;
        ts.tv_nsec = ns % 1'000'000'000;
        tsp = &ts;
      }
      pollfd fds[2] = {{tun, POLLIN, 0}, {wake, POLLIN, 0}};
      if (::ppoll(fds, 2, tsp, nullptr) < 0 && errno != EINTR) return;
      if (fds[1].revents & POLLIN) return;

      if (fds[0].revents & POLLIN) {
        LatencyProfile p;
        bool have_profile = false;
        {
          std::lock_guard lk(mu);
          if (profile) {
            p = *profile;
            have_profile = true;
          }
        }
        for (int batch = 0; batch < 256; ++batch) {
          ssize_t n = ::read(tun, buf.data(), buf.size());
          if (n <= 0) break;
          if (n < 20 || (buf[0] >> 4) != 4) continue;
          const auto len = static_cast<std::size_t>(n);
          if (have_profile && p.loss > 0 && unit(rng) < p.loss) {
            ++dropped_loss;
            continue;
          }
          if (queued + len > queue_limit) {
            ++dropped_queue;
            continue;
          }
          // Reflect: the packet re-enters the host as if the far end sent it.
          std::swap_ranges(buf.begin() + 12, buf.begin() + 16, buf.begin() + 16);

          auto now = Clock::now();
          Clock::duration delay{0};
          if (have_profile) {
            delay = p.one_way_delay;
            if (p.jitter.count()) {
              double j = (unit(rng) * 2.0 - 1.0) * static_cast<double>(p.jitter.count());
              delay += std::chrono::microseconds(static_cast<std::int64_t>(j));
            }
          }
          auto depart = now;
          if (have_profile && p.rate_cap) {
            auto tx = std::chrono::nanoseconds(static_cast<std::int64_t>(
                static_cast<double>(len) * 8.0 * 1e9 / static_cast<double>(p.rate_cap->bits_per_second)));
            depart = std::max(now, link_free) + tx;
            link_free = depart;
          }
          auto release = std::max(depart + delay, last_release);
          last_release = release;
          queue.push_back({release, {buf.begin(), buf.begin() + n}});
          queued += len;
        }
      }

      auto now = Clock::now();
      while (!queue.empty() && queue.front().release <= now) {
        auto& pkt = queue.front();
        if (::write(tun, pkt.bytes.data(), pkt.bytes.size()) > 0) {
          ++packets;
          bytes += pkt.bytes.size();
        }
        queued -= pkt.bytes.size();
        queue.pop_front();
      }
    }
  }
};

DelayLineBackend::DelayLineBackend(DelayLineConfig config, fs::path state_file)
    : config_(std::move(config)), state_file_(std::move(state_file)) {
  if (config_.device.empty() || config_.device.size() >= IFNAMSIZ)
    throw EmulationError("invalid delay-line device name '" + config_.device + "'");
  if (!has_net_admin())
    throw PrivilegeError("the delay line needs CAP_NET_ADMIN: run as root or grant cap_net_admin to the binary");
  auto engine = std::make_unique<Engine>();
  engine->queue_limit = config_.queue_limit;
  engine->tun = ::open("/dev/net/tun", O_RDWR | O_NONBLOCK | O_CLOEXEC);
  if (engine->tun < 0) {
    if (errno == EACCES || errno == EPERM) throw PrivilegeError(sys_error("open /dev/net/tun"));
    throw EmulationError(sys_error("open /dev/net/tun"));
  }
  ifreq ifr{};
  std::strncpy(ifr.ifr_name, config_.device.c_str(), IFNAMSIZ - 1);
  ifr.ifr_flags = IFF_TUN | IFF_NO_PI;
  if (::ioctl(engine->tun, TUNSETIFF, &ifr) != 0) throw EmulationError(sys_error("create TUN " + config_.device));

  int sock = ::socket(AF_INET, SOCK_DGRAM | SOCK_CLOEXEC, 0);
  if (sock < 0) throw EmulationError(sys_error("socket"));
  try {
    set_address(sock, config_.device, SIOCSIFADDR, config_.local_address);
    set_address(sock, config_.device, SIOCSIFNETMASK, "255.255.0.0");
    ifreq req{};
    std::strncpy(req.ifr_name, config_.device.c_str(), IFNAMSIZ - 1);
    req.ifr_mtu = config_.mtu;
    if (::ioctl(sock, SIOCSIFMTU, &req) != 0) throw EmulationError(sys_error("set MTU on " + config_.device));
    req.ifr_qlen = 10000;
    if (::ioctl(sock, SIOCSIFTXQLEN, &req) != 0) throw EmulationError(sys_error("set txqueuelen"));
    if (::ioctl(sock, SIOCGIFFLAGS, &req) != 0) throw EmulationError(sys_error("read flags"));
    req.ifr_flags |= IFF_UP | IFF_RUNNING;
    if (::ioctl(sock, SIOCSIFFLAGS, &req) != 0) throw EmulationError(sys_error("bring up " + config_.device));
  } catch (...) {
    ::close(sock);
    throw;
  }
  ::close(sock);

  engine->wake = ::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
  if (engine->wake < 0) throw EmulationError(sys_error("eventfd"));
  auto* raw = engine.get();
  engine->worker = std::thread([raw] { raw->run(); });
  engine_ = std::move(engine);
}

DelayLineBackend::~DelayLineBackend() {
  try {
    clear();
  } catch (...) {
  }
}

void DelayLineBackend::preflight(const LatencyProfile& p) { p.validate(); }

void DelayLineBackend::apply(const LatencyProfile& p) {
  preflight(p);
  {
    std::lock_guard lk(engine_->mu);
    engine_->profile = p;
  }
  if (!state_file_.empty()) write_state(state_file_, {"delay-line", config_.device, p, static_cast<long>(::getpid())});
}

void DelayLineBackend::clear() {
  {
    std::lock_guard lk(engine_->mu);
    if (!engine_->profile) return;
    engine_->profile.reset();
  }
  if (!state_file_.empty()) {
    std::error_code ec;
    fs::remove(state_file_, ec);
  }
}

std::optional<LatencyProfile> DelayLineBackend::active() const {
  std::lock_guard lk(engine_->mu);
  return engine_->profile;
}

net::Endpoint DelayLineBackend::route(const net::Endpoint& local) const { return {config_.mirror_address, local.port}; }

DelayLineStats DelayLineBackend::stats() const {
  return {engine_->packets.load(), engine_->bytes.load(), engine_->dropped_loss.load(), engine_->dropped_queue.load()};
}

}  // namespace dmlab::emulation
