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

#include "dmlab/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "dmlab/protocol.hpp"

namespace dmlab::config {

namespace {

class Reader {
 public:
  Reader(std::string origin, std::vector<std::string>& warnings) : origin_(std::move(origin)), warnings_(warnings) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& field, const std::string& problem) const {
    std::ostringstream msg;
    msg << origin_;
    const auto mark = node.Mark();
    if (!mark.is_null()) msg << ':' << mark.line + 1 << ':' << mark.column + 1;
    msg << ": " << field << ": " << problem;
    throw ConfigError(msg.str());
  }

  void check_keys(const YAML::Node& map, const std::string& where, const std::set<std::string>& known) {
    for (const auto& kv : map) {
      auto key = kv.first.as<std::string>();
      if (!known.count(key)) {
        const auto mark = kv.first.Mark();
        warnings_.push_back(origin_ + ":" + std::to_string(mark.line + 1) + ": unknown field '" +
                            (where.empty() ? key : where + "." + key) + "' ignored");
      }
    }
  }

  YAML::Node map_at(const YAML::Node& parent, const std::string& key, const std::string& field) const {
    auto n = parent[key];
    if (n && !n.IsMap()) fail(n, field, "expected a mapping");
    return n;
  }

  std::string scalar(const YAML::Node& n, const std::string& field) const {
    if (!n.IsScalar()) fail(n, field, "expected a scalar value");
    return n.Scalar();
  }

  template <typename Fn>
  auto convert(const YAML::Node& n, const std::string& field, Fn&& fn) const {
    auto text = scalar(n, field);
    try {
      return fn(text);
    } catch (const std::exception& e) {
      fail(n, field, e.what());
    }
  }

  long long integer(const YAML::Node& n, const std::string& field, long long lo, long long hi) const {
    return convert(n, field, [&](const std::string& s) {
      std::size_t used = 0;
      long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
      if (v < lo || v > hi)
        throw std::out_of_range("must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return v;
    });
  }

 private:
  std::string origin_;
  std::vector<std::string>& warnings_;
};

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute()) return p.lexically_normal();
  return (base / p).lexically_normal();
}

}  // namespace

void LabConfig::resolve_paths(const fs::path& base) {
  auto abs_base = fs::absolute(base.empty() ? fs::current_path() : base);
  for (auto* p : {&production_root, &burst_buffer_root, &dataset_root, &receiver_root, &output_dir, &sysctl_root})
    *p = resolve(*p, abs_base);
}

const net::Endpoint& LabConfig::require_peer(const std::string& command) const {
  if (!peer)
    throw ConfigError(command + " needs a peer address: pass --peer HOST:PORT, set DMLAB_PEER, or add 'peer:' to the "
                                "config file");
  return *peer;
}

LoadResult parse_config(const std::string& text, const fs::path& base, const std::string& origin) {
  LoadResult out;
  Reader rd(origin, out.warnings);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(origin + ":" + std::to_string(e.mark.line + 1) + ":" + std::to_string(e.mark.column + 1) +
                      ": malformed YAML: " + e.msg);
  }
  auto& c = out.config;
  if (root.IsNull()) {
    c.resolve_paths(base);
    return out;
  }
  if (!root.IsMap()) rd.fail(root, "<document>", "expected a mapping at the top level");
  rd.check_keys(root, "",
                {"schema_version", "peer", "listen", "roots", "output_dir", "latencies", "emulation", "transfer",
                 "tuning"});

  if (auto n = root["schema_version"]) {
    c.schema_version = static_cast<int>(rd.integer(n, "schema_version", 1, 1000));
    if (c.schema_version > kSchemaVersion)
      rd.fail(n, "schema_version",
              "file uses schema " + std::to_string(c.schema_version) + ", this build understands up to " +
                  std::to_string(kSchemaVersion));
  } else {
    out.warnings.push_back(origin + ": no schema_version; assuming " + std::to_string(kSchemaVersion));
  }

  if (auto n = root["peer"]; n && !n.IsNull()) c.peer = rd.convert(n, "peer", net::Endpoint::parse);
  if (auto n = root["listen"]) c.listen = rd.convert(n, "listen", net::Endpoint::parse);
  if (auto n = root["output_dir"]) c.output_dir = rd.scalar(n, "output_dir");

  if (auto roots = rd.map_at(root, "roots", "roots")) {
    rd.check_keys(roots, "roots", {"production", "burst_buffer", "datasets", "receiver"});
    if (auto n = roots["production"]) c.production_root = rd.scalar(n, "roots.production");
    if (auto n = roots["burst_buffer"]) c.burst_buffer_root = rd.scalar(n, "roots.burst_buffer");
    if (auto n = roots["datasets"]) c.dataset_root = rd.scalar(n, "roots.datasets");
    if (auto n = roots["receiver"]) c.receiver_root = rd.scalar(n, "roots.receiver");
  }

  if (auto n = root["latencies"]) {
    if (!n.IsSequence()) rd.fail(n, "latencies", "expected a list of durations like [10ms, 50ms]");
    c.latencies.clear();
    for (std::size_t i = 0; i < n.size(); ++i)
      c.latencies.push_back(rd.convert(n[i], "latencies[" + std::to_string(i) + "]", parse_duration));
    if (c.latencies.empty()) rd.fail(n, "latencies", "must not be empty");
  }

  if (auto em = rd.map_at(root, "emulation", "emulation")) {
    rd.check_keys(em, "emulation", {"backend", "interface"});
    if (auto n = em["backend"]) {
      c.emulation_backend = rd.scalar(n, "emulation.backend");
      if (c.emulation_backend != "auto" && c.emulation_backend != "tc" && c.emulation_backend != "delay-line")
        rd.fail(n, "emulation.backend", "expected auto, tc or delay-line");
    }
    if (auto n = em["interface"]) c.emulation_interface = rd.scalar(n, "emulation.interface");
  }

  if (auto tr = rd.map_at(root, "transfer", "transfer")) {
    rd.check_keys(tr, "transfer", {"streams", "chunk_size", "encryption"});
    if (auto n = tr["streams"]) c.streams = static_cast<std::uint16_t>(rd.integer(n, "transfer.streams", 1, 1024));
    if (auto n = tr["chunk_size"]) c.chunk_size = rd.convert(n, "transfer.chunk_size", parse_bytes);
    if (auto n = tr["encryption"]) {
      c.encryption = rd.scalar(n, "transfer.encryption");
      rd.convert(n, "transfer.encryption", protocol::encryption_from_string);
    }
  }

  if (auto tu = rd.map_at(root, "tuning", "tuning")) {
    rd.check_keys(tu, "tuning", {"sysctl_root", "kernel_params", "ring_rx", "ring_tx", "ring_interface"});
    if (auto n = tu["sysctl_root"]) c.sysctl_root = rd.scalar(n, "tuning.sysctl_root");
    if (auto n = tu["kernel_params"]) {
      if (!n.IsMap()) rd.fail(n, "tuning.kernel_params", "expected a mapping of parameter: value");
      c.tuning.kernel_params.clear();
      for (const auto& kv : n) {
        auto key = rd.scalar(kv.first, "tuning.kernel_params");
        if (!tuning::is_valid_key(key)) rd.fail(kv.first, "tuning.kernel_params", "invalid parameter name '" + key + "'");
        c.tuning.kernel_params.push_back({key, tuning::normalize_value(rd.scalar(kv.second, "tuning.kernel_params." + key))});
      }
    }
    auto ring = [&](const char* name, std::optional<unsigned>& slot) {
      auto n = tu[name];
      if (!n) return;
      if (n.IsNull())
        slot.reset();
      else
        slot = static_cast<unsigned>(rd.integer(n, std::string("tuning.") + name, 1, 1 << 20));
    };
    ring("ring_rx", c.tuning.ring_rx);
    ring("ring_tx", c.tuning.ring_tx);
    if (auto n = tu["ring_interface"]) c.tuning.ring_interface = n.IsNull() ? "" : rd.scalar(n, "tuning.ring_interface");
    try {
      c.tuning.validate();
    } catch (const std::exception& e) {
      rd.fail(tu, "tuning", e.what());
    }
  }

  c.resolve_paths(base);
  return out;
}

LoadResult load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto base = fs::absolute(path).parent_path();
  return parse_config(ss.str(), base, path.string());
}

std::string to_yaml(const LabConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "schema_version" << YAML::Value << c.schema_version;
  if (c.peer) out << YAML::Key << "peer" << YAML::Value << c.peer->str();
  out << YAML::Key << "listen" << YAML::Value << c.listen.str();
  out << YAML::Key << "roots" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "production" << YAML::Value << c.production_root.string();
  out << YAML::Key << "burst_buffer" << YAML::Value << c.burst_buffer_root.string();
  out << YAML::Key << "datasets" << YAML::Value << c.dataset_root.string();
  out << YAML::Key << "receiver" << YAML::Value << c.receiver_root.string();
  out << YAML::EndMap;
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir.string();
  out << YAML::Key << "latencies" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto l : c.latencies) out << format_duration(l);
  out << YAML::EndSeq;
  out << YAML::Key << "emulation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "backend" << YAML::Value << c.emulation_backend;
  out << YAML::Key << "interface" << YAML::Value << c.emulation_interface;
  out << YAML::EndMap;
  out << YAML::Key << "transfer" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "streams" << YAML::Value << c.streams;
  out << YAML::Key << "chunk_size" << YAML::Value << format_bytes(c.chunk_size);
  out << YAML::Key << "encryption" << YAML::Value << c.encryption;
  out << YAML::EndMap;
  out << YAML::Key << "tuning" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "sysctl_root" << YAML::Value << c.sysctl_root.string();
  out << YAML::Key << "kernel_params" << YAML::Value << YAML::BeginMap;
  for (const auto& p : c.tuning.kernel_params) out << YAML::Key << p.key << YAML::Value << p.value;
  out << YAML::EndMap;
  out << YAML::Key << "ring_rx" << YAML::Value;
  if (c.tuning.ring_rx)
    out << *c.tuning.ring_rx;
  else
    out << YAML::Null;
  out << YAML::Key << "ring_tx" << YAML::Value;
  if (c.tuning.ring_tx)
    out << *c.tuning.ring_tx;
  else
    out << YAML::Null;
  out << YAML::Key << "ring_interface" << YAML::Value << c.tuning.ring_interface;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

void save_config(const LabConfig& config, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << to_yaml(config);
  if (!out) throw ConfigError("cannot write config file " + path.string());
}

void apply_environment(LabConfig& config) {
  if (const char* peer = std::getenv("DMLAB_PEER"); peer && *peer) {
    try {
      config.peer = net::Endpoint::parse(peer);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("DMLAB_PEER: ") + e.what());
    }
  }
  if (const char* out = std::getenv("DMLAB_OUTPUT_DIR"); out && *out) config.output_dir = fs::absolute(out);
}

}  // namespace dmlab::config
