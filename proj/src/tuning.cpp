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

#include "dmlab/tuning.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

namespace dmlab::tuning {

using json = nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += sep;
    out += p;
  }
  return out;
}

}  // namespace

PermissionError::PermissionError(std::vector<std::string> keys)
    : TuningError("permission denied writing " + join(keys, ", ") +
                  " (runtime tuning needs root or CAP_SYS_ADMIN and a writable /proc/sys)"),
      keys_(std::move(keys)) {}

TuningTarget TuningTarget::defaults() {
  TuningTarget t;
  t.kernel_params = {
      {"net.core.rmem_max", "2147483647"},
      {"net.core.wmem_max", "2147483647"},
      {"net.ipv4.tcp_rmem", "4096 67108864 1073741824"},
      {"net.ipv4.tcp_wmem", "4096 67108864 1073741824"},
      {"net.ipv4.tcp_mtu_probing", "1"},
      {"net.core.default_qdisc", "fq_codel"},
      {"net.ipv4.tcp_congestion_control", "cubic"},
      {"net.core.netdev_max_backlog", "8192"},
  };
  t.ring_rx = kDefaultRing;
  t.ring_tx = kDefaultRing;
  return t;
}

bool is_valid_key(std::string_view key) {
  static const std::regex re(R"([a-z0-9_-]+(\.[A-Za-z0-9_-]+)+)");
  return std::regex_match(key.begin(), key.end(), re);
}

std::string normalize_value(std::string_view value) {
  std::string out;
  bool blank = false;
  for (char c : value) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      blank = true;
      continue;
    }
    if (blank && !out.empty()) out += ' ';
    blank = false;
    out += c;
  }
  return out;
}

void TuningTarget::validate() const {
  std::vector<std::string> seen;
  for (const auto& p : kernel_params) {
    if (!is_valid_key(p.key)) throw TuningError("invalid kernel parameter name '" + p.key + "'");
    if (normalize_value(p.value).empty()) throw TuningError("empty target value for " + p.key);
    if (std::find(seen.begin(), seen.end(), p.key) != seen.end())
      throw TuningError("kernel parameter listed twice: " + p.key);
    seen.push_back(p.key);
  }
  if ((ring_rx && *ring_rx == 0) || (ring_tx && *ring_tx == 0)) throw TuningError("ring sizes must be positive");
  if (!ring_interface.empty() && ring_interface.find('/') != std::string::npos)
    throw TuningError("invalid interface name '" + ring_interface + "'");
}

// ---- sysctl tree ---------------------------------------------------------------

SysctlTree::SysctlTree(fs::path root) : root_(std::move(root)) {}

fs::path SysctlTree::path_of(const std::string& key) const {
  std::string rel = key;
  std::replace(rel.begin(), rel.end(), '.', '/');
  return root_ / rel;
}

std::optional<std::string> SysctlTree::read(const std::string& key) const {
  std::ifstream in(path_of(key));
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  if (in.bad()) return std::nullopt;
  return normalize_value(ss.str());
}

SysctlTree::WriteResult SysctlTree::write(const std::string& key, const std::string& value) const {
  auto path = path_of(key);
  int fd = ::open(path.c_str(), O_WRONLY | O_TRUNC | O_CLOEXEC);
  if (fd < 0) {
    int err = errno;
    if (err == EACCES || err == EPERM || err == EROFS) return {WriteStatus::permission_denied, std::strerror(err)};
    return {WriteStatus::rejected, err == ENOENT ? "no such parameter" : std::strerror(err)};
  }
  auto text = value + "\n";
  ssize_t n = ::write(fd, text.data(), text.size());
  int err = errno;
  ::close(fd);
  if (n < 0) {
    if (err == EACCES || err == EPERM) return {WriteStatus::permission_denied, std::strerror(err)};
    return {WriteStatus::rejected, std::strerror(err)};
  }
  return {};
}

Snapshot snapshot(const SysctlTree& tree, const std::vector<std::string>& keys) {
  Snapshot s;
  for (const auto& k : keys) s[k] = tree.read(k);
  return s;
}

std::vector<std::string> restore(const SysctlTree& tree, const Snapshot& snap) {
  std::vector<std::string> failed;
  for (const auto& [key, value] : snap) {
    if (!value) continue;
    if (tree.read(key) == value) continue;
    if (tree.write(key, *value).status != SysctlTree::WriteStatus::ok) failed.push_back(key);
  }
  return failed;
}

// ---- rings ------------------------------------------------------------------------

std::optional<RingSettings> parse_ethtool_rings(std::string_view text) {
  RingSettings r;
  int section = 0;  // 1: maximums, 2: current
  bool have[4] = {false, false, false, false};
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("Pre-set maximums", 0) == 0) {
      section = 1;
      continue;
    }
    if (line.rfind("Current hardware settings", 0) == 0) {
      section = 2;
      continue;
    }
    if (section == 0) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    auto name = line.substr(0, colon);
    auto value = normalize_value(line.substr(colon + 1));
    if (name != "RX" && name != "TX") continue;
    unsigned v = 0;
    try {
      std::size_t used = 0;
      v = static_cast<unsigned>(std::stoul(value, &used));
      if (used != value.size()) continue;
    } catch (const std::exception&) {
      continue;
    }
    const int slot = (section - 1) * 2 + (name == "TX");
    have[slot] = true;
    (section == 1 ? (name == "RX" ? r.rx_max : r.tx_max) : (name == "RX" ? r.rx : r.tx)) = v;
  }
  if (!(have[2] && have[3])) return std::nullopt;
  if (!have[0]) r.rx_max = r.rx;
  if (!have[1]) r.tx_max = r.tx;
  return r;
}

// ---- audit -------------------------------------------------------------------------

std::string to_string(MatchState s) {
  switch (s) {
    case MatchState::match: return "match";
    case MatchState::mismatch: return "mismatch";
    case MatchState::unknown: return "unknown";
  }
  return "?";
}

std::string to_string(Overall o) {
  switch (o) {
    case Overall::tuned: return "tuned";
    case Overall::partial: return "partial";
    case Overall::untuned: return "untuned";
  }
  return "?";
}

const ParamAudit* AuditReport::find(const std::string& key) const {
  for (const auto& p : params)
    if (p.key == key) return &p;
  return nullptr;
}

std::vector<std::string> AuditReport::mismatched() const {
  std::vector<std::string> out;
  for (const auto& p : params)
    if (p.state != MatchState::match) out.push_back(p.key);
  if (rings && rings->state != MatchState::match) out.push_back("rings:" + rings->interface);
  return out;
}

namespace {

bool wants_rings(const TuningTarget& t) { return !t.ring_interface.empty() && (t.ring_rx || t.ring_tx); }

std::optional<RingSettings> read_rings(const std::string& iface, CommandRunner& runner, std::string& problem) {
  CommandResult r;
  try {
    r = runner.run({"ethtool", "-g", iface});
  } catch (const CommandError&) {
    problem = "ethtool is not installed; ring buffers on " + iface + " are audit-only and were not read";
    return std::nullopt;
  }
  if (!r.ok()) {
    auto err = normalize_value(r.err);
    problem = "ethtool -g " + iface + " failed" + (err.empty() ? "" : ": " + err);
    return std::nullopt;
  }
  auto parsed = parse_ethtool_rings(r.out);
  if (!parsed) problem = "could not parse ethtool -g output for " + iface;
  return parsed;
}

void finish(AuditReport& report) {
  std::size_t total = report.params.size(), matched = 0;
  for (const auto& p : report.params) matched += p.state == MatchState::match;
  if (report.rings) {
    ++total;
    matched += report.rings->state == MatchState::match;
  }
  if (matched == total)
    report.overall = Overall::tuned;
  else if (matched == 0)
    report.overall = Overall::untuned;
  else
    report.overall = Overall::partial;
}

}  // namespace

AuditReport audit(const TuningTarget& target, const SysctlTree& tree, CommandRunner& runner) {
  target.validate();
  AuditReport report;
  for (const auto& p : target.kernel_params) {
    ParamAudit a{p.key, normalize_value(p.value), tree.read(p.key), MatchState::unknown};
    if (a.current) a.state = (*a.current == a.target) ? MatchState::match : MatchState::mismatch;
    report.params.push_back(std::move(a));
  }
  if (wants_rings(target)) {
    RingAudit ra{target.ring_interface, target.ring_rx, target.ring_tx, std::nullopt, MatchState::unknown};
    std::string problem;
    ra.current = read_rings(target.ring_interface, runner, problem);
    if (!problem.empty()) report.warnings.push_back(problem);
    if (ra.current) {
      bool ok = (!ra.target_rx || ra.current->rx == *ra.target_rx) && (!ra.target_tx || ra.current->tx == *ra.target_tx);
      ra.state = ok ? MatchState::match : MatchState::mismatch;
    }
    report.rings = ra;
  } else if (target.ring_rx || target.ring_tx) {
    report.warnings.push_back("no ring interface configured; ring buffers not audited");
  }
  finish(report);
  return report;
}

std::vector<std::string> dry_run_commands(const TuningTarget& target) {
  std::vector<std::string> lines;
  for (const auto& p : target.kernel_params)
    lines.push_back(render_command({"sysctl", "-w", p.key + "=" + normalize_value(p.value)}));
  if (wants_rings(target)) {
    std::vector<std::string> argv{"ethtool", "-G", target.ring_interface};
    if (target.ring_rx) argv.insert(argv.end(), {"rx", std::to_string(*target.ring_rx)});
    if (target.ring_tx) argv.insert(argv.end(), {"tx", std::to_string(*target.ring_tx)});
    lines.push_back(render_command(argv));
  }
  return lines;
}

AuditReport apply(const TuningTarget& target, Scope scope, const SysctlTree& tree, CommandRunner& runner,
                  std::ostream& out) {
  target.validate();
  if (scope == Scope::dry_run) {
    for (const auto& line : dry_run_commands(target)) out << line << '\n';
    return audit(target, tree, runner);
  }

  std::vector<std::string> refused;
  std::map<std::string, std::string> rejected;
  for (const auto& p : target.kernel_params) {
    auto value = normalize_value(p.value);
    if (tree.read(p.key) == value) continue;
    auto r = tree.write(p.key, value);
    if (r.status == SysctlTree::WriteStatus::permission_denied)
      refused.push_back(p.key);
    else if (r.status == SysctlTree::WriteStatus::rejected)
      rejected[p.key] = r.error;
  }

  std::vector<std::string> ring_notes;
  if (wants_rings(target)) {
    std::string problem;
    auto current = read_rings(target.ring_interface, runner, problem);
    if (current) {
      std::vector<std::string> argv{"ethtool", "-G", target.ring_interface};
      if (target.ring_rx) {
        auto rx = std::min(*target.ring_rx, current->rx_max);
        if (rx < *target.ring_rx)
          ring_notes.push_back("rx ring capped at hardware maximum " + std::to_string(current->rx_max));
        argv.insert(argv.end(), {"rx", std::to_string(rx)});
      }
      if (target.ring_tx) {
        auto tx = std::min(*target.ring_tx, current->tx_max);
        if (tx < *target.ring_tx)
          ring_notes.push_back("tx ring capped at hardware maximum " + std::to_string(current->tx_max));
        argv.insert(argv.end(), {"tx", std::to_string(tx)});
      }
      auto r = runner.run(argv);
      if (!r.ok()) rejected["rings:" + target.ring_interface] = normalize_value(r.err);
    }
  }

  if (!refused.empty()) throw PermissionError(refused);
  auto report = audit(target, tree, runner);
  report.rejected = std::move(rejected);
  for (auto& n : ring_notes) report.warnings.push_back(std::move(n));
  return report;
}

// ---- rendering ------------------------------------------------------------------------

namespace {

std::string rings_text(const std::optional<unsigned>& rx, const std::optional<unsigned>& tx) {
  std::string s;
  if (rx) s += "rx " + std::to_string(*rx);
  if (tx) s += std::string(s.empty() ? "" : " ") + "tx " + std::to_string(*tx);
  return s;
}

}  // namespace

std::string render_table(const AuditReport& report) {
  std::vector<std::array<std::string, 4>> rows;
  rows.push_back({"PARAMETER", "CURRENT", "TARGET", "STATE"});
  for (const auto& p : report.params) rows.push_back({p.key, p.current.value_or("?"), p.target, to_string(p.state)});
  if (report.rings) {
    const auto& r = *report.rings;
    rows.push_back({"rings " + r.interface,
                    r.current ? rings_text(r.current->rx, r.current->tx) : "?",
                    rings_text(r.target_rx, r.target_tx), to_string(r.state)});
  }
  std::array<std::size_t, 4> width{};
  for (const auto& row : rows)
    for (std::size_t i = 0; i < 4; ++i) width[i] = std::max(width[i], row[i].size());
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < 4; ++i) {
      out << row[i];
      if (i + 1 < 4) out << std::string(width[i] - row[i].size() + 2, ' ');
    }
    out << '\n';
  }
  std::size_t total = rows.size() - 1, matched = 0;
  for (const auto& p : report.params) matched += p.state == MatchState::match;
  if (report.rings) matched += report.rings->state == MatchState::match;
  out << "overall: " << to_string(report.overall) << " (" << matched << "/" << total << " match)\n";
  for (const auto& [key, err] : report.rejected) out << "rejected: " << key << ": " << err << '\n';
  for (const auto& w : report.warnings) out << "warning: " << w << '\n';
  return out.str();
}

std::string render_jsonl(const AuditReport& report) {
  std::ostringstream out;
  std::size_t matched = 0;
  for (const auto& p : report.params) {
    matched += p.state == MatchState::match;
    json j{{"kind", "param"}, {"key", p.key}, {"target", p.target}, {"state", to_string(p.state)}};
    j["current"] = p.current ? json(*p.current) : json(nullptr);
    if (auto it = report.rejected.find(p.key); it != report.rejected.end()) j["rejected"] = it->second;
    out << j.dump() << '\n';
  }
  if (report.rings) {
    const auto& r = *report.rings;
    matched += r.state == MatchState::match;
    json j{{"kind", "rings"}, {"interface", r.interface}, {"state", to_string(r.state)}};
    j["target_rx"] = r.target_rx ? json(*r.target_rx) : json(nullptr);
    j["target_tx"] = r.target_tx ? json(*r.target_tx) : json(nullptr);
    if (r.current) {
      j["current"] = {{"rx", r.current->rx}, {"tx", r.current->tx}, {"rx_max", r.current->rx_max},
                      {"tx_max", r.current->tx_max}};
    } else {
      j["current"] = nullptr;
    }
    out << j.dump() << '\n';
  }
  json summary{{"kind", "summary"},
               {"overall", to_string(report.overall)},
               {"matched", matched},
               {"total", report.params.size() + (report.rings ? 1 : 0)},
               {"warnings", report.warnings},
               {"rejected", report.rejected}};
  out << summary.dump() << '\n';
  return out.str();
}

}  // namespace dmlab::tuning
