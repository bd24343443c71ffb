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

#include "dmlab/emulation.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dmlab/protocol.hpp"

namespace dmlab::emulation {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

Rtt LatencyProfile::expected_rtt() const { return Rtt(2 * one_way_delay); }

void LatencyProfile::validate() const {
  if (one_way_delay.count() < 0) throw EmulationError("delay must be non-negative");
  if (jitter.count() < 0) throw EmulationError("jitter must be non-negative");
  if (jitter > one_way_delay) throw EmulationError("jitter must not exceed the delay");
  if (!(loss >= 0.0 && loss <= 1.0)) throw EmulationError("loss must lie in [0, 1]");
  if (rate_cap && rate_cap->bits_per_second == 0) throw EmulationError("rate cap must be positive");
  if (interface.empty() || interface.size() > 15 || interface.find('/') != std::string::npos)
    throw EmulationError("invalid interface name '" + interface + "'");
}

std::string LatencyProfile::describe() const {
  std::string s = interface + " delay " + format_duration(one_way_delay);
  if (jitter.count()) s += " jitter " + format_duration(jitter);
  if (rate_cap) s += " rate " + format_bandwidth(*rate_cap);
  if (loss > 0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, " loss %g%%", loss * 100.0);
    s += buf;
  }
  return s;
}

PathValidation judge(Rtt measured, Rtt expected, double tolerance, microseconds allowance) {
  PathValidation v;
  v.measured_rtt = measured;
  v.expected_rtt = expected;
  v.tolerance = tolerance;
  v.allowance = allowance;
  const double diff = std::abs(static_cast<double>(measured.round_trip().count() - expected.round_trip().count()));
  v.pass = diff <= tolerance * static_cast<double>(expected.round_trip().count()) +
                       static_cast<double>(allowance.count());
  return v;
}

Rtt median_rtt(std::vector<Rtt> samples) {
  if (samples.empty()) throw EmulationError("no RTT samples");
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  if (n % 2) return samples[n / 2];
  return Rtt((samples[n / 2 - 1].round_trip() + samples[n / 2].round_trip()) / 2);
}

PathValidation measure_rtt(const net::Endpoint& peer, int samples, Rtt expected, double tolerance,
                           microseconds allowance, std::chrono::milliseconds timeout) {
  if (samples < 1) throw EmulationError("need at least one RTT sample");
  net::Connection conn = [&] {
    try {
      return net::Connection(net::connect_tcp(peer, timeout));
    } catch (const net::NetError& e) {
      throw EmulationError("RTT probe cannot reach " + peer.str() + ": " + e.what());
    }
  }();
  net::set_nodelay(conn.socket(), true);
  protocol::SessionHello hello;
  hello.role = protocol::ConnectionRole::probe;
  hello.session_id = std::random_device{}();
  conn.send_frame(protocol::make_hello(hello));
  protocol::parse_hello(conn.expect_frame());

  std::vector<Rtt> rtts;
  for (int i = 0; i <= samples; ++i) {
    auto t0 = Clock::now();
    conn.send_frame(protocol::make_ack({static_cast<std::uint64_t>(i)}));
    auto echo = protocol::parse_ack(conn.expect_frame());
    auto dt = std::chrono::duration_cast<microseconds>(Clock::now() - t0);
    if (echo.ref != static_cast<std::uint64_t>(i)) throw EmulationError("RTT probe echo out of sequence");
    if (i > 0) rtts.emplace_back(dt);  // the first exchange warms the path up
  }
  conn.send_frame(protocol::make_bye());
  auto v = judge(median_rtt(rtts), expected, tolerance, allowance);
  v.samples = std::move(rtts);
  return v;
}

bool has_net_admin() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("CapEff:", 0) == 0) {
      auto caps = std::strtoull(line.c_str() + 7, nullptr, 16);
      return (caps >> 12) & 1;  // CAP_NET_ADMIN
    }
  }
  return false;
}

// ---- tc ---------------------------------------------------------------------

std::vector<std::string> netem_apply_command(const LatencyProfile& p) {
  std::vector<std::string> argv{"tc", "qdisc", "replace", "dev", p.interface, "root", "netem", "limit", "100000",
                                "delay", format_duration(p.one_way_delay)};
  if (p.jitter.count()) argv.push_back(format_duration(p.jitter));
  if (p.loss > 0) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g%%", p.loss * 100.0);
    argv.insert(argv.end(), {"loss", buf});
  }
  if (p.rate_cap) argv.insert(argv.end(), {"rate", std::to_string(p.rate_cap->bits_per_second) + "bit"});
  return argv;
}

std::vector<std::string> netem_clear_command(const std::string& interface) {
  return {"tc", "qdisc", "del", "dev", interface, "root"};
}

TcBackend::TcBackend(CommandRunner& runner, fs::path state_file)
    : runner_(runner), state_file_(std::move(state_file)) {}

TcBackend::~TcBackend() {
  try {
    clear();
  } catch (...) {
  }
}

void TcBackend::preflight(const LatencyProfile& p) {
  p.validate();
  if (runner_.is_dry_run()) return;
  if (!has_net_admin())
    throw PrivilegeError("tc needs CAP_NET_ADMIN: run as root or grant cap_net_admin to the binary");
  if (!fs::exists(fs::path("/sys/class/net") / p.interface))
    throw EmulationError("unknown interface '" + p.interface + "'");
  if (!command_available("tc")) throw EmulationError("the tc command is not installed (iproute2)");
}

void TcBackend::apply(const LatencyProfile& p) {
  preflight(p);
  if (active_ && active_->interface != p.interface) clear();
  try {
    runner_.check(netem_apply_command(p));
  } catch (const CommandError& e) {
    throw EmulationError(e.what());
  }
  active_ = p;
  if (!runner_.is_dry_run() && !state_file_.empty())
    write_state(state_file_, {"tc", p.interface, p, static_cast<long>(::getpid())});
}

void TcBackend::clear() {
  if (!active_) return;
  auto iface = active_->interface;
  active_.reset();
  auto r = runner_.run(netem_clear_command(iface));
  if (!runner_.is_dry_run() && !state_file_.empty()) {
    std::error_code ec;
    fs::remove(state_file_, ec);
  }
  if (!r.ok()) throw EmulationError("tc qdisc del on " + iface + " failed: " + r.err);
}

net::Endpoint TcBackend::route(const net::Endpoint& local) const {
  if (local.host == "0.0.0.0" || local.host.empty()) return {"127.0.0.1", local.port};
  return local;
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "auto") return BackendKind::automatic;
  if (s == "tc") return BackendKind::tc;
  if (s == "delay-line") return BackendKind::delay_line;
  throw EmulationError("unknown emulation backend '" + std::string(s) + "' (auto, tc, delay-line)");
}

std::string to_string(BackendKind k) {
  switch (k) {
    case BackendKind::automatic: return "auto";
    case BackendKind::tc: return "tc";
    case BackendKind::delay_line: return "delay-line";
  }
  return "?";
}

std::unique_ptr<Backend> make_backend(BackendKind kind, CommandRunner& runner, const fs::path& state_file) {
  if (kind == BackendKind::automatic)
    kind = (command_available("tc") || runner.is_dry_run()) ? BackendKind::tc : BackendKind::delay_line;
  if (kind == BackendKind::tc) return std::make_unique<TcBackend>(runner, state_file);
  return std::make_unique<DelayLineBackend>(DelayLineConfig{}, state_file);
}

// ---- state file ----------------------------------------------------------------

namespace {

json profile_to_json(const LatencyProfile& p) {
  json j{{"one_way_delay_us", p.one_way_delay.count()},
         {"jitter_us", p.jitter.count()},
         {"loss", p.loss},
         {"interface", p.interface}};
  j["rate_cap_bps"] = p.rate_cap ? json(p.rate_cap->bits_per_second) : json(nullptr);
  return j;
}

LatencyProfile profile_from_json(const json& j) {
  LatencyProfile p;
  p.one_way_delay = microseconds(j.at("one_way_delay_us").get<std::int64_t>());
  p.jitter = microseconds(j.at("jitter_us").get<std::int64_t>());
  p.loss = j.at("loss").get<double>();
  p.interface = j.at("interface").get<std::string>();
  if (!j.at("rate_cap_bps").is_null()) p.rate_cap = Bandwidth{j.at("rate_cap_bps").get<std::uint64_t>()};
  return p;
}

}  // namespace

void write_state(const fs::path& file, const StateRecord& record) {
  json j{{"backend", record.backend},
         {"interface", record.interface},
         {"pid", record.pid},
         {"profile", profile_to_json(record.profile)}};
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  auto tmp = file;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw EmulationError("cannot write emulation state file " + tmp.string());
  }
  fs::rename(tmp, file);
}

std::optional<StateRecord> read_state(const fs::path& file) {
  std::ifstream in(file);
  if (!in) return std::nullopt;
  try {
    auto j = json::parse(in);
    StateRecord r;
    r.backend = j.at("backend").get<std::string>();
    r.interface = j.at("interface").get<std::string>();
    r.pid = j.at("pid").get<long>();
    r.profile = profile_from_json(j.at("profile"));
    return r;
  } catch (const json::exception& e) {
    throw EmulationError("corrupt emulation state file " + file.string() + ": " + e.what());
  }
}

bool recover(const fs::path& state_file, CommandRunner& runner) {
  auto state = read_state(state_file);
  if (!state) return false;
  if (state->backend == "tc") {
    auto r = runner.run(netem_clear_command(state->interface));
    if (!r.ok() && r.err.find("No such file") == std::string::npos &&
        r.err.find("Cannot delete qdisc with handle of zero") == std::string::npos)
      throw EmulationError("could not remove recorded netem qdisc on " + state->interface + ": " + r.err);
  }
  // A delay line disappears with the process that owned its TUN device.
  if (!runner.is_dry_run()) {
    std::error_code ec;
    fs::remove(state_file, ec);
  }
  return true;
}

fs::path default_state_file() {
  if (const char* dir = std::getenv("DMLAB_STATE_DIR")) return fs::path(dir) / "emulation-state.json";
  return fs::temp_directory_path() / "dmlab-emulation-state.json";
}

// ---- owner ----------------------------------------------------------------------

ProfileHandle::~ProfileHandle() {
  try {
    clear();
  } catch (...) {
  }
}

ProfileHandle::ProfileHandle(ProfileHandle&& o) noexcept : owner_(o.owner_), generation_(o.generation_) {
  o.owner_ = nullptr;
}

ProfileHandle& ProfileHandle::operator=(ProfileHandle&& o) noexcept {
  if (this != &o) {
    try {
      clear();
    } catch (...) {
    }
    owner_ = o.owner_;
    generation_ = o.generation_;
    o.owner_ = nullptr;
  }
  return *this;
}

void ProfileHandle::clear() {
  if (!owner_) return;
  auto* owner = owner_;
  owner_ = nullptr;
  owner->clear_generation(generation_);
}

bool ProfileHandle::active() const { return owner_ && owner_->is_current(generation_); }

Emulator::Emulator(std::unique_ptr<Backend> backend) : backend_(std::move(backend)) {}

Emulator::~Emulator() {
  try {
    clear();
  } catch (...) {
  }
}

void Emulator::preflight(const LatencyProfile& p) {
  std::lock_guard lk(mu_);
  backend_->preflight(p);
}

ProfileHandle Emulator::apply(const LatencyProfile& p) {
  std::lock_guard lk(mu_);
  backend_->apply(p);
  applied_ = true;
  return ProfileHandle(this, ++generation_);
}

void Emulator::clear() {
  std::lock_guard lk(mu_);
  applied_ = false;
  backend_->clear();
}

std::optional<LatencyProfile> Emulator::active() const {
  std::lock_guard lk(mu_);
  return backend_->active();
}

void Emulator::clear_generation(std::uint64_t generation) {
  std::lock_guard lk(mu_);
  if (generation != generation_ || !applied_) return;
  applied_ = false;
  backend_->clear();
}

bool Emulator::is_current(std::uint64_t generation) const {
  std::lock_guard lk(mu_);
  return applied_ && generation == generation_;
}

}  // namespace dmlab::emulation
