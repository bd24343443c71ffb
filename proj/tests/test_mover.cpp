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

#include <atomic>
#include <numeric>
#include <random>
#include <thread>

#include "dmlab/mover.hpp"
#include "support.hpp"

using namespace dmlab;
using namespace dmlab::mover;
using dmlab::testing::TempDir;
using namespace std::chrono_literals;

namespace {

struct Loopback {
  TempDir tmp{"mv"};
  Receiver rx;
  explicit Loopback(ServeConfig cfg = {}) : rx(start(tmp, std::move(cfg))) {}

  static Receiver start(const TempDir& tmp, ServeConfig cfg) {
    if (cfg.root.empty()) cfg.root = tmp / "sink";
    return serve({"127.0.0.1", 0}, std::move(cfg));
  }
  TransferSpec spec(std::uint16_t streams = 4) const {
    TransferSpec s;
    s.peer = rx.local_endpoint();
    s.stream_count = streams;
    return s;
  }
  fs::path sink() const { return tmp / "sink"; }
};

dataset::DatasetManifest make_source(const fs::path& root, ByteCount size, std::uint64_t count, std::uint64_t seed = 1) {
  dataset::DatasetSpec ds;
  ds.file_size = size;
  ds.file_count = count;
  ds.root_path = root;
  ds.content_seed = seed;
  return dataset::generate_dataset(ds);
}

ByteCount sum(const std::vector<ByteCount>& v) { return std::accumulate(v.begin(), v.end(), ByteCount{0}); }

void check_conservation(const TransferResult& r) { CHECK(sum(r.per_stream_bytes) == r.bytes_moved); }

void check_sink_matches(const dataset::DatasetManifest& m, const fs::path& sink) {
  auto report = dataset::verify_dataset(m, sink);
  CHECK(report.intact());
}

}  // namespace

TEST_CASE("spec validation") {
  TransferSpec s;
  s.peer = {"127.0.0.1", 1};
  s.source = SourceEndpoint::from_directory("/tmp");
  CHECK_NOTHROW(s.validate());
  s.stream_count = 0;
  CHECK_THROWS_AS(s.validate(), TransferError);
  s.stream_count = 1;
  s.chunk_size = 1024;
  CHECK_THROWS_AS(s.validate(), TransferError);
  s.chunk_size = 32 * MiB;
  CHECK_THROWS_AS(s.validate(), TransferError);
  s.chunk_size = kDefaultChunkSize;
  s.mode = SessionMode::streaming;
  s.source = SourceEndpoint::from_synthetic({});
  CHECK_THROWS_AS(s.validate(), TransferError);
  s.mode = SessionMode::bulk;
  s.sink = SinkEndpoint::directory("../escape");
  CHECK_THROWS_AS(s.validate(), TransferError);
}

TEST_CASE("LPT schedule balances bytes and covers every file once") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ByteCount> sizes(1 + rng() % 60);
    for (auto& s : sizes) s = rng() % (1 << 20);
    std::size_t streams = 1 + rng() % 8;
    auto plan = schedule_lpt(sizes, streams);
    REQUIRE(plan.size() == streams);
    std::vector<int> seen(sizes.size(), 0);
    std::vector<ByteCount> load(streams, 0);
    for (std::size_t s = 0; s < streams; ++s)
      for (auto i : plan[s]) {
        seen[i]++;
        load[s] += sizes[i];
      }
    for (int c : seen) CHECK(c == 1);
    // LPT bound: no stream exceeds the lightest by more than the largest file
    ByteCount biggest = *std::max_element(sizes.begin(), sizes.end());
    CHECK(*std::max_element(load.begin(), load.end()) - *std::min_element(load.begin(), load.end()) <= biggest);
  }
  std::vector<ByteCount> equal(8, 100);
  auto plan = schedule_lpt(equal, 4);
  for (const auto& s : plan) CHECK(s.size() == 2);
}

TEST_CASE("empty session moves nothing") {
  Loopback lb;
  auto spec = lb.spec(2);
  spec.source = SourceEndpoint::from_directory(lb.tmp / "empty");
  fs::create_directories(lb.tmp / "empty");
  auto r = transfer(spec, dataset::DatasetManifest{});
  CHECK(r.bytes_moved == 0);
  CHECK(r.files_ok == 0);
  CHECK(r.ok());
  CHECK(lb.rx.wait_for_sessions(1, 5s));
}

TEST_CASE("16-file dataset is delivered intact") {
  Loopback lb;
  auto m = make_source(lb.tmp / "src", 256 * KiB, 16);
  auto spec = lb.spec(4);
  spec.source = SourceEndpoint::from_directory(lb.tmp / "src");
  auto r = transfer(spec, m);
  CHECK(r.files_ok == 16);
  CHECK(r.files_failed == 0);
  CHECK(r.integrity == Integrity::verified);
  CHECK(r.bytes_moved == 16 * 256 * KiB);
  CHECK(r.throughput_bps > 0);
  CHECK(r.per_stream_bytes.size() == 4);
  check_conservation(r);
  check_sink_matches(m, lb.sink());
  REQUIRE(lb.rx.wait_for_sessions(1, 5s));
  auto sessions = lb.rx.sessions();
  CHECK(sessions[0].files_ok == 16);
  CHECK(sessions[0].bytes_verified == 16 * 256 * KiB);
}

TEST_CASE("zero-byte file") {
  Loopback lb;
  fs::create_directories(lb.tmp / "src");
  testing::spit(lb.tmp / "src" / "empty.bin", "");
  auto m = dataset::index_directory(lb.tmp / "src");
  auto spec = lb.spec(1);
  spec.source = SourceEndpoint::from_directory(lb.tmp / "src");
  auto r = transfer(spec, m);
  CHECK(r.ok());
  CHECK(r.bytes_moved == 0);
  CHECK(r.integrity == Integrity::verified);
  CHECK(fs::exists(lb.sink() / "empty.bin"));
}

TEST_CASE("discard sink with a synthetic 1 GiB source") {
  Loopback lb;
  dataset::DatasetSpec ds;
  ds.file_size = 64 * MiB;
  ds.file_count = 16;
  auto spec = lb.spec(4);
  spec.source = SourceEndpoint::from_synthetic(ds);
  spec.sink = SinkEndpoint::discard();
  auto r = transfer(spec);
  CHECK(r.ok());
  CHECK(r.bytes_moved == GiB);
  CHECK(r.integrity == Integrity::verified);
  check_conservation(r);
  CHECK_FALSE(fs::exists(lb.sink() / dataset::entry_path(0)));
}

TEST_CASE("1 and 8 streams deliver identical content") {
  Loopback lb;
  auto m = make_source(lb.tmp / "src", 64 * KiB, 24, 3);
  for (std::uint16_t n : {1, 8}) {
    auto spec = lb.spec(n);
    spec.source = SourceEndpoint::from_directory(lb.tmp / "src");
    spec.sink = SinkEndpoint::directory("s" + std::to_string(n));
    auto r = transfer(spec, m);
    CHECK(r.ok());
    CHECK(r.bytes_moved == m.total_bytes);
    check_conservation(r);
    check_sink_matches(m, lb.sink() / ("s" + std::to_string(n)));
  }
}

TEST_CASE("TLS sessions are intact") {
  Loopback lb;
  auto m = make_source(lb.tmp / "src", 128 * KiB, 8, 5);
  auto spec = lb.spec(2);
  spec.encryption = Encryption::tls;
  spec.source = SourceEndpoint::from_directory(lb.tmp / "src");
  auto r = transfer(spec, m);
  CHECK(r.ok());
  check_sink_matches(m, lb.sink());
  REQUIRE(lb.rx.wait_for_sessions(1, 5s));
  CHECK(lb.rx.sessions()[0].encryption == Encryption::tls);
}

TEST_CASE("a corrupted chunk is caught and resent once") {
  std::atomic<int> corrupted{0};
  ServeConfig cfg;
  cfg.chunk_hook = [&](std::uint64_t file, ByteCount offset, std::span<std::byte> data) {
    if (file == 3 && offset == 0 && !data.empty() && corrupted.fetch_add(1) == 0) data[0] ^= std::byte{1};
  };
  Loopback lb(cfg);
  auto m = make_source(lb.tmp / "src", 64 * KiB, 6, 8);
  auto spec = lb.spec(2);
  spec.source = SourceEndpoint::from_directory(lb.tmp / "src");
  auto r = transfer(spec, m);
  CHECK(corrupted.load() >= 1);
  CHECK(r.resends == 1);
  CHECK(r.ok());
  check_sink_matches(m, lb.sink());
}

TEST_CASE("persistent corruption fails the file and leaves no sink copy") {
  ServeConfig cfg;
  cfg.chunk_hook = [](std::uint64_t file, ByteCount, std::span<std::byte> data) {
    if (file == 1 && !data.empty()) data[data.size() / 2] ^= std::byte{0x80};
  };
  Loopback lb(cfg);
  auto m = make_source(lb.tmp / "src", 64 * KiB, 4, 9);
  auto spec = lb.spec(2);
  spec.source = SourceEndpoint::from_directory(lb.tmp / "src");
  auto r = transfer(spec, m);
  CHECK_FALSE(r.ok());
  CHECK(r.files_failed == 1);
  CHECK(r.files_ok == 3);
  CHECK(r.integrity == Integrity::failed);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].relative_path == m.entries[1].relative_path);
  CHECK_FALSE(fs::exists(lb.sink() / m.entries[1].relative_path));
}

TEST_CASE("source files must match the manifest") {
  Loopback lb;
  auto m = make_source(lb.tmp / "src", 64 * KiB, 2);
  fs::resize_file(lb.tmp / "src" / m.entries[0].relative_path, 10);
  auto spec = lb.spec(1);
  spec.source = SourceEndpoint::from_directory(lb.tmp / "src");
  CHECK_THROWS_AS(transfer(spec, m), TransferError);
}

TEST_CASE("unreachable receiver") {
  TransferSpec spec;
  spec.peer = {"127.0.0.1", 1};
  spec.connect_timeout = 1000ms;
  dataset::DatasetSpec ds;
  ds.file_size = KiB;
  spec.source = SourceEndpoint::from_synthetic(ds);
  CHECK_THROWS(transfer(spec));
}

TEST_CASE("streaming: a concurrent writer's files all arrive") {
  Loopback lb;
  fs::path watch = lb.tmp / "watch";
  StreamingWriter writer(watch);
  auto spec = lb.spec(4);
  spec.mode = SessionMode::streaming;
  spec.source = SourceEndpoint::from_directory(watch);
  std::thread producer([&] {
    std::vector<std::byte> buf(96 * KiB);
    for (int i = 0; i < 19; ++i) {
      dataset::fill_content(7, static_cast<std::uint64_t>(i), 0, buf);
      auto name = "f" + std::to_string(i) + ".bin";
      writer.append(name, std::span(buf).first(48 * KiB));
      std::this_thread::sleep_for(5ms);
      writer.append(name, std::span(buf).subspan(48 * KiB));
    }
    writer.complete();
  });
  auto r = transfer_streaming(spec, watch, 5000ms);
  producer.join();
  CHECK(r.ok());
  CHECK(r.files_ok == 19);
  CHECK(r.bytes_moved == 19 * 96 * KiB);
  check_conservation(r);
  check_sink_matches(dataset::index_directory(watch), lb.sink());
}

TEST_CASE("streaming: 4 MiB append steps deliver the final size") {
  Loopback lb;
  fs::path watch = lb.tmp / "watch";
  StreamingWriter writer(watch);
  auto spec = lb.spec(1);
  spec.mode = SessionMode::streaming;
  spec.source = SourceEndpoint::from_directory(watch);
  std::thread producer([&] {
    std::vector<std::byte> step(4 * MiB);
    for (ByteCount off = 0; off < 16 * MiB; off += step.size()) {
      dataset::fill_content(11, 0, off, step);
      writer.append("grow.bin", step);
      std::this_thread::sleep_for(20ms);
    }
    writer.complete();
  });
  auto r = transfer_streaming(spec, watch, 5000ms);
  producer.join();
  CHECK(r.ok());
  CHECK(fs::file_size(lb.sink() / "grow.bin") == 16 * MiB);
  CHECK(sha256_file(lb.sink() / "grow.bin") == dataset::content_digest(11, 0, 16 * MiB));
}

TEST_CASE("streaming: no growth ends after quiescence") {
  Loopback lb;
  fs::path watch = lb.tmp / "watch";
  fs::create_directories(watch);
  auto spec = lb.spec(2);
  spec.mode = SessionMode::streaming;
  spec.source = SourceEndpoint::from_directory(watch);
  auto t0 = std::chrono::steady_clock::now();
  auto r = transfer_streaming(spec, watch, 300ms);
  CHECK(std::chrono::steady_clock::now() - t0 >= 300ms);
  CHECK(r.bytes_moved == 0);
  CHECK(r.files_ok == 0);
  CHECK(r.ok());
}

TEST_CASE("socket options read back") {
  auto listener = net::listen_tcp({"127.0.0.1", 0});
  net::Endpoint ep{"127.0.0.1", net::local_port(listener)};
  auto sock = net::connect_tcp(ep);
  TransferSpec spec;
  auto available = net::available_congestion_controls();
  if (std::find(available.begin(), available.end(), "cubic") != available.end()) {
    spec.cca = "cubic";
    CHECK(apply_socket_options(sock, spec).effective_cca == "cubic");
  }
  spec.cca = "nonexistent";
  CHECK_THROWS_AS(apply_socket_options(sock, spec), TransferError);
  spec.cca.clear();
  spec.socket_buffer = 64 * KiB;
  auto rep = apply_socket_options(sock, spec);
  CHECK(rep.effective_send_buffer >= 64 * KiB);
  CHECK(rep.effective_receive_buffer >= 64 * KiB);
}
