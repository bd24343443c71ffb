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

// WAN latency emulation on a local test path.
//
// Two backends share one interface:
//   tc          egress netem qdisc on a real interface, through the audited
//               command runner (dry-run prints the exact commands)
//   delay-line  a userspace TUN device that reflects packets back into the
//               host after holding them for the one-way delay; needs only
//               CAP_NET_ADMIN and /dev/net/tun
// Either way every packet pays the one-way delay once per crossing, so a
// request/response exchange sees 2 x one_way_delay.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmlab/command.hpp"
#include "dmlab/net.hpp"
#include "dmlab/units.hpp"

namespace dmlab::emulation {

namespace fs = std::filesystem;
using std::chrono::microseconds;

class EmulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Missing capability; the message names what is required.
class PrivilegeError : public EmulationError {
 public:
  using EmulationError::EmulationError;
};

struct LatencyProfile {
  microseconds one_way_delay{0};
  microseconds jitter{0};
  std::optional<Bandwidth> rate_cap;
  double loss = 0.0;  // fraction of packets dropped, [0, 1]
  std::string interface = "lo";

  static LatencyProfile one_way(std::chrono::milliseconds delay, std::string iface = "lo") {
    LatencyProfile p;
    p.one_way_delay = delay;
    p.interface = std::move(iface);
    return p;
  }

  /// 2 x one_way_delay.
  Rtt expected_rtt() const;
  void validate() const;
  std::string describe() const;

  friend bool operator==(const LatencyProfile&, const LatencyProfile&) = default;
};

struct PathValidation {
  Rtt measured_rtt;
  Rtt expected_rtt;
  double tolerance = 0.10;
  microseconds allowance{2000};
  bool pass = false;
  std::vector<Rtt> samples;
};

inline constexpr microseconds kDefaultAllowance{2000};

/// pass <=> |measured - expected| <= tolerance * expected + allowance.
PathValidation judge(Rtt measured, Rtt expected, double tolerance = 0.10, microseconds allowance = kDefaultAllowance);

/// Median of samples; the mean of the middle two for even counts.
Rtt median_rtt(std::vector<Rtt> samples);

/// TCP echo against a dmlab receiver (probe role): `samples` ACK round
/// trips on one connection after the HELLO exchange.
PathValidation measure_rtt(const net::Endpoint& peer, int samples, Rtt expected, double tolerance = 0.10,
                           microseconds allowance = kDefaultAllowance,
                           std::chrono::milliseconds timeout = std::chrono::seconds(10));

// ---- backends -----------------------------------------------------------------

/// True when the process holds CAP_NET_ADMIN in its effective set.
bool has_net_admin();

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string name() const = 0;
  /// Throws PrivilegeError or EmulationError when apply() could not work.
  virtual void preflight(const LatencyProfile& p) = 0;
  /// Replaces whatever profile is active.
  virtual void apply(const LatencyProfile& p) = 0;
  /// Restores the pre-apply state; no-op when nothing is applied.
  virtual void clear() = 0;
  virtual std::optional<LatencyProfile> active() const = 0;
  /// Address a sender uses to reach a receiver listening on `local` through
  /// the emulated path. Receivers should listen on 0.0.0.0.
  virtual net::Endpoint route(const net::Endpoint& local) const = 0;
};

/// netem argv for `p`, e.g. tc qdisc replace dev lo root netem delay 50ms limit 100000
std::vector<std::string> netem_apply_command(const LatencyProfile& p);
std::vector<std::string> netem_clear_command(const std::string& interface);

class TcBackend : public Backend {
 public:
  TcBackend(CommandRunner& runner, fs::path state_file);
  ~TcBackend() override;

  std::string name() const override { return "tc"; }
  void preflight(const LatencyProfile& p) override;
  void apply(const LatencyProfile& p) override;
  void clear() override;
  std::optional<LatencyProfile> active() const override { return active_; }
  net::Endpoint route(const net::Endpoint& local) const override;

 private:
  CommandRunner& runner_;
  fs::path state_file_;
  std::optional<LatencyProfile> active_;
};

struct DelayLineConfig {
  std::string device = "dmlab0";
  std::string local_address = "10.77.0.1";  // assigned to the device, /16
  std::string mirror_address = "10.77.1.1";  // peers appear to live here
  int mtu = 1500;
  ByteCount queue_limit = 256 * MiB;
};

struct DelayLineStats {
  std::uint64_t packets = 0;
  std::uint64_t bytes = 0;
  std::uint64_t dropped_loss = 0;
  std::uint64_t dropped_queue = 0;
};

/// Userspace delay line on a TUN device. The device exists for the
/// lifetime of the object; with no profile applied it forwards packets
/// without delay.
class DelayLineBackend : public Backend {
 public:
  DelayLineBackend(DelayLineConfig config = {}, fs::path state_file = {});
  ~DelayLineBackend() override;

  std::string name() const override { return "delay-line"; }
  void preflight(const LatencyProfile& p) override;
  void apply(const LatencyProfile& p) override;
  void clear() override;
  std::optional<LatencyProfile> active() const override;
  net::Endpoint route(const net::Endpoint& local) const override;

  DelayLineStats stats() const;
  const DelayLineConfig& config() const { return config_; }

 private:
  struct Engine;
  DelayLineConfig config_;
  fs::path state_file_;
  std::unique_ptr<Engine> engine_;
};

enum class BackendKind { automatic, tc, delay_line };
BackendKind backend_kind_from_string(std::string_view s);
std::string to_string(BackendKind k);

/// automatic: tc when the binary exists, otherwise the delay line when
/// /dev/net/tun is usable. Throws PrivilegeError when neither can work.
std::unique_ptr<Backend> make_backend(BackendKind kind, CommandRunner& runner, const fs::path& state_file);

// ---- state file -----------------------------------------------------------------

struct StateRecord {
  std::string backend;
  std::string interface;
  LatencyProfile profile;
  long pid = 0;
};

void write_state(const fs::path& file, const StateRecord& record);
std::optional<StateRecord> read_state(const fs::path& file);

/// Cleanup after a crashed or killed process: undoes whatever the state
/// file says is applied and removes the file. Returns true if anything was
/// recorded.
bool recover(const fs::path& state_file, CommandRunner& runner);

fs::path default_state_file();

// ---- single owner -----------------------------------------------------------------

class Emulator;

/// Teardown handle for one apply(); clearing a handle that a later apply
/// superseded does nothing.
class ProfileHandle {
 public:
  ProfileHandle() = default;
  ~ProfileHandle();
  ProfileHandle(ProfileHandle&&) noexcept;
  ProfileHandle& operator=(ProfileHandle&&) noexcept;
  ProfileHandle(const ProfileHandle&) = delete;
  ProfileHandle& operator=(const ProfileHandle&) = delete;

  void clear();
  bool active() const;
  /// Keeps the profile applied after the handle is gone.
  void release() { owner_ = nullptr; }

 private:
  friend class Emulator;
  ProfileHandle(Emulator* owner, std::uint64_t generation) : owner_(owner), generation_(generation) {}
  Emulator* owner_ = nullptr;
  std::uint64_t generation_ = 0;
};

/// Serializes apply/clear through one backend.
class Emulator {
 public:
  explicit Emulator(std::unique_ptr<Backend> backend);
  ~Emulator();

  void preflight(const LatencyProfile& p);
  ProfileHandle apply(const LatencyProfile& p);
  void clear();
  std::optional<LatencyProfile> active() const;
  net::Endpoint route(const net::Endpoint& local) const { return backend_->route(local); }
  Backend& backend() { return *backend_; }

 private:
  friend class ProfileHandle;
  void clear_generation(std::uint64_t generation);
  bool is_current(std::uint64_t generation) const;

  mutable std::mutex mu_;
  std::unique_ptr<Backend> backend_;
  std::uint64_t generation_ = 0;
  bool applied_ = false;
};

}  // namespace dmlab::emulation
