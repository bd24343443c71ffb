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

#include <cstdlib>

#include "dmlab/config.hpp"
#include "support.hpp"

using namespace dmlab;
using namespace dmlab::config;
using dmlab::testing::TempDir;

namespace {

struct EnvGuard {
  std::string name;
  explicit EnvGuard(std::string n, const char* value) : name(std::move(n)) { ::setenv(name.c_str(), value, 1); }
  ~EnvGuard() { ::unsetenv(name.c_str()); }
};

}  // namespace

TEST_CASE("a minimal file yields the defaults") {
  auto r = parse_config("schema_version: 1\n", "/lab");
  LabConfig expected;
  expected.resolve_paths("/lab");
  CHECK(r.config == expected);
  CHECK(r.warnings.empty());
  CHECK(r.config.output_dir == fs::path("/lab/results"));
  CHECK(r.config.sysctl_root == fs::path("/proc/sys"));
  CHECK(r.config.tuning == tuning::TuningTarget::defaults());
}

TEST_CASE("to_yaml round-trips") {
  LabConfig c;
  c.peer = net::Endpoint{"10.0.0.2", 6000};
  c.listen = {"127.0.0.1", 7000};
  c.latencies = {std::chrono::milliseconds(5), std::chrono::microseconds(2500)};
  c.streams = 16;
  c.chunk_size = 8 * MiB;
  c.encryption = "tls";
  c.emulation_backend = "delay-line";
  c.tuning.ring_rx.reset();
  c.tuning.ring_interface = "eth0";
  c.resolve_paths("/lab");
  auto back = parse_config(to_yaml(c), "/elsewhere");
  CHECK(back.warnings.empty());
  CHECK(back.config == c);

  TempDir tmp("cfg");
  save_config(c, tmp / "lab.yaml");
  CHECK(load_config(tmp / "lab.yaml").config == c);
}

TEST_CASE("relative paths resolve against the file's directory") {
  TempDir tmp("cfg");
  testing::spit(tmp / "sub/lab.yaml", "schema_version: 1\nroots:\n  datasets: data\noutput_dir: ../out\n");
  auto c = load_config(tmp / "sub/lab.yaml").config;
  CHECK(c.dataset_root == tmp.path() / "sub/data");
  CHECK(c.output_dir.lexically_normal() == (tmp.path() / "out").lexically_normal());
}

TEST_CASE("unknown fields warn, missing version warns") {
  auto r = parse_config("schema_version: 1\ncolour: blue\n", "/", "lab.yaml");
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("lab.yaml:2") != std::string::npos);
  CHECK(r.warnings[0].find("colour") != std::string::npos);
  CHECK(parse_config("listen: 0.0.0.0:1\n", "/").warnings.size() == 1);
}

TEST_CASE("errors carry line and column") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text, "/", "lab.yaml");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message("schema_version: 1\ntransfer:\n  streams: 0\n").find("lab.yaml:3:") == 0);
  CHECK(message("schema_version: 1\ntransfer:\n  streams: 0\n").find("streams") != std::string::npos);
  CHECK(message("schema_version: 1\nlatencies: [10]\n").find("lab.yaml:2:") == 0);
  CHECK(message("schema_version: 99\n").find("schema_version") != std::string::npos);
  CHECK(message("peer: [unclosed\n").find("malformed YAML") != std::string::npos);
  CHECK(message("peer: nohost\n").find("peer") != std::string::npos);
}

TEST_CASE("peer requirement and environment overrides") {
  LabConfig c;
  try {
    c.require_peer("transfer");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    std::string what = e.what();
    CHECK(what.find("transfer") != std::string::npos);
    CHECK(what.find("--peer") != std::string::npos);
    CHECK(what.find("DMLAB_PEER") != std::string::npos);
  }
  {
    EnvGuard peer("DMLAB_PEER", "192.0.2.7:5300");
    EnvGuard out("DMLAB_OUTPUT_DIR", "/tmp/dmlab-out");
    c.peer = net::Endpoint{"10.0.0.1", 1};
    apply_environment(c);
    CHECK(c.require_peer("transfer").str() == "192.0.2.7:5300");
    CHECK(c.output_dir == fs::path("/tmp/dmlab-out"));
  }
  EnvGuard bad("DMLAB_PEER", "not an endpoint");
  CHECK_THROWS_AS(apply_environment(c), ConfigError);
}
