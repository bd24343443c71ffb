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

#include <doctest.h>

#include <map>
#include <sstream>

#include "dmlab/tuning.hpp"
#include "support.hpp"

using namespace dmlab;
using namespace dmlab::tuning;
using dmlab::testing::TempDir;

namespace {

const std::map<std::string, std::string> kStock = {
    {"net.core.rmem_max", "212992"},
    {"net.core.wmem_max", "212992"},
    {"net.ipv4.tcp_rmem", "4096\t131072\t6291456"},
    {"net.ipv4.tcp_wmem", "4096\t16384\t4194304"},
    {"net.ipv4.tcp_mtu_probing", "0"},
    {"net.core.default_qdisc", "pfifo_fast"},
    {"net.ipv4.tcp_congestion_control", "cubic"},
    {"net.core.netdev_max_backlog", "1000"},
};

/// A /proc/sys look-alike holding the given values.
void prepare(const SysctlTree& tree, const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) testing::spit(tree.path_of(k), v + "\n");
}

std::map<std::string, std::string> target_values() {
  std::map<std::string, std::string> m;
  for (const auto& p : TuningTarget::defaults().kernel_params) m[p.key] = p.value;
  return m;
}

TuningTarget params_only() {
  auto t = TuningTarget::defaults();
  t.ring_rx.reset();
  t.ring_tx.reset();
  return t;
}

const char* kEthtool =
    "Ring parameters for eth9:\n"
    "Pre-set maximums:\n"
    "RX:\t\t4096\n"
    "RX Mini:\tn/a\n"
    "RX Jumbo:\tn/a\n"
    "TX:\t\t4096\n"
    "Current hardware settings:\n"
    "RX:\t\t512\n"
    "RX Mini:\tn/a\n"
    "RX Jumbo:\tn/a\n"
    "TX:\t\t512\n";

}  // namespace

TEST_CASE("default target") {
  auto t = TuningTarget::defaults();
  REQUIRE(t.kernel_params.size() == 8);
  CHECK(t.kernel_params[0] == KernelParam{"net.core.rmem_max", "2147483647"});
  CHECK(t.kernel_params[2] == KernelParam{"net.ipv4.tcp_rmem", "4096 67108864 1073741824"});
  CHECK(t.ring_rx == 8160u);
  CHECK(t.ring_tx == 8160u);
  CHECK_NOTHROW(t.validate());
  CHECK(is_valid_key("net.ipv4.tcp_rmem"));
  CHECK_FALSE(is_valid_key("net/ipv4"));
  CHECK_FALSE(is_valid_key("../etc"));
  CHECK(normalize_value("  4096\t 87380   6291456 \n") == "4096 87380 6291456");
}

TEST_CASE("audit states") {
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  CommandRunner runner([](const auto&) { return CommandResult{1, "", "unexpected"}; });

  SUBCASE("stock host is untuned with rmem_max mismatched") {
    prepare(tree, kStock);
    auto r = audit(params_only(), tree, runner);
    CHECK(r.find("net.core.rmem_max")->state == MatchState::mismatch);
    CHECK(r.find("net.core.rmem_max")->current == "212992");
    CHECK(r.find("net.ipv4.tcp_congestion_control")->state == MatchState::match);
    CHECK(r.overall == Overall::partial);
  }
  SUBCASE("fully prepared host is tuned") {
    prepare(tree, target_values());
    auto r = audit(params_only(), tree, runner);
    CHECK(r.overall == Overall::tuned);
    CHECK(r.mismatched().empty());
  }
  SUBCASE("nothing matching is untuned") {
    auto stock = kStock;
    stock["net.ipv4.tcp_congestion_control"] = "reno";
    stock["net.ipv4.tcp_mtu_probing"] = "0";
    prepare(tree, stock);
    CHECK(audit(params_only(), tree, runner).overall == Overall::untuned);
  }
  SUBCASE("missing keys are unknown") {
    auto r = audit(params_only(), tree, runner);
    CHECK(r.find("net.core.rmem_max")->state == MatchState::unknown);
    CHECK(r.overall == Overall::untuned);
  }
  SUBCASE("empty target is vacuously tuned") {
    CHECK(audit(TuningTarget{}, tree, runner).overall == Overall::tuned);
  }
  SUBCASE("reverting one key is reported as exactly that key") {
    prepare(tree, target_values());
    testing::spit(tree.path_of("net.core.netdev_max_backlog"), "1000\n");
    auto r = audit(params_only(), tree, runner);
    CHECK(r.mismatched() == std::vector<std::string>{"net.core.netdev_max_backlog"});
    CHECK(r.overall == Overall::partial);
  }
}

TEST_CASE("dry run lists commands and changes nothing") {
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  prepare(tree, kStock);
  auto before = snapshot(tree, [] {
    std::vector<std::string> keys;
    for (const auto& [k, v] : kStock) keys.push_back(k);
    return keys;
  }());
  std::ostringstream out;
  auto runner = CommandRunner::dry_run(out);
  auto t = TuningTarget::defaults();
  t.ring_interface = "eth9";
  apply(t, Scope::dry_run, tree, runner, out);
  for (const auto& [k, v] : before) CHECK(tree.read(k) == v);
  auto text = out.str();
  CHECK(text.find("sysctl -w net.core.rmem_max=2147483647\n") != std::string::npos);
  CHECK(text.find("sysctl -w 'net.ipv4.tcp_rmem=4096 67108864 1073741824'\n") != std::string::npos);
  CHECK(text.find("ethtool -G eth9 rx 8160 tx 8160\n") != std::string::npos);
  CHECK(dry_run_commands(t).size() == 9);
}

TEST_CASE("runtime apply then audit is tuned") {
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  prepare(tree, kStock);
  CommandRunner runner([](const auto&) { return CommandResult{}; });
  std::ostringstream out;
  auto r = apply(params_only(), Scope::runtime, tree, runner, out);
  CHECK(r.overall == Overall::tuned);
  CHECK(r.rejected.empty());
  CHECK(tree.read("net.ipv4.tcp_wmem") == "4096 67108864 1073741824");
}

TEST_CASE("snapshot and restore") {
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  prepare(tree, kStock);
  auto snap = snapshot(tree, {"net.core.rmem_max", "net.ipv4.tcp_rmem"});
  tree.write("net.core.rmem_max", "1");
  tree.write("net.ipv4.tcp_rmem", "1 2 3");
  CHECK(restore(tree, snap).empty());
  CHECK(tree.read("net.core.rmem_max") == "212992");
  CHECK(tree.read("net.ipv4.tcp_rmem") == "4096 131072 6291456");
}

TEST_CASE("ethtool ring parsing") {
  auto r = parse_ethtool_rings(kEthtool);
  REQUIRE(r);
  CHECK(r->rx_max == 4096);
  CHECK(r->tx_max == 4096);
  CHECK(r->rx == 512);
  CHECK(r->tx == 512);
  CHECK_FALSE(parse_ethtool_rings("garbage"));
}

TEST_CASE("rings capped by hardware are reported partial with the effective value") {
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  prepare(tree, target_values());
  unsigned rx = 512, tx = 512;
  std::vector<std::string> seen;
  CommandRunner runner([&](const std::vector<std::string>& argv) {
    seen.push_back(render_command(argv));
    if (argv[1] == "-G") {
      rx = static_cast<unsigned>(std::stoul(argv[4]));
      tx = static_cast<unsigned>(std::stoul(argv[6]));
      return CommandResult{};
    }
    std::string text = kEthtool;
    auto pos = text.rfind("RX:\t\t512");
    text.replace(pos, 8, "RX:\t\t" + std::to_string(rx));
    pos = text.rfind("TX:\t\t512");
    text.replace(pos, 8, "TX:\t\t" + std::to_string(tx));
    return CommandResult{0, text, ""};
  });
  auto t = TuningTarget::defaults();
  t.ring_interface = "eth9";
  std::ostringstream out;
  auto r = apply(t, Scope::runtime, tree, runner, out);
  CHECK(std::find(seen.begin(), seen.end(), "ethtool -G eth9 rx 4096 tx 4096") != seen.end());
  REQUIRE(r.rings);
  CHECK(r.rings->current->rx == 4096);
  CHECK(r.rings->state == MatchState::mismatch);
  CHECK(r.overall == Overall::partial);
  CHECK(r.warnings.size() == 2);
}

TEST_CASE("missing ethtool degrades to a warning") {
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  prepare(tree, target_values());
  CommandRunner runner([](const auto&) -> CommandResult { throw CommandError("ethtool: not found"); });
  auto t = TuningTarget::defaults();
  t.ring_interface = "eth9";
  auto r = audit(t, tree, runner);
  REQUIRE(r.rings);
  CHECK(r.rings->state == MatchState::unknown);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("ethtool is not installed") != std::string::npos);
}

TEST_CASE("table rendering") {
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  prepare(tree, {{"net.core.rmem_max", "212992"}, {"net.ipv4.tcp_mtu_probing", "1"}});
  TuningTarget t;
  t.kernel_params = {{"net.core.rmem_max", "2147483647"}, {"net.ipv4.tcp_mtu_probing", "1"},
                     {"net.core.somaxconn", "4096"}};
  CommandRunner runner([](const auto&) { return CommandResult{}; });
  auto r = audit(t, tree, runner);
  CHECK(render_table(r) ==
        "PARAMETER                 CURRENT  TARGET      STATE\n"
        "net.core.rmem_max         212992   2147483647  mismatch\n"
        "net.ipv4.tcp_mtu_probing  1        1           match\n"
        "net.core.somaxconn        ?        4096        unknown\n"
        "overall: partial (1/3 match)\n");
  auto jsonl = render_jsonl(r);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 4);
  CHECK(jsonl.find("\"overall\":\"partial\"") != std::string::npos);
}

TEST_CASE("permission errors name every refused key") {
  if (::geteuid() == 0) {
    MESSAGE("skipped: root bypasses file permissions");
    return;
  }
  TempDir tmp("tune");
  SysctlTree tree(tmp.path());
  prepare(tree, kStock);
  fs::permissions(tree.path_of("net.core.rmem_max"), fs::perms::owner_read);
  CommandRunner runner([](const auto&) { return CommandResult{}; });
  std::ostringstream out;
  try {
    apply(params_only(), Scope::runtime, tree, runner, out);
    FAIL("expected PermissionError");
  } catch (const PermissionError& e) {
    CHECK(e.keys() == std::vector<std::string>{"net.core.rmem_max"});
  }
}
