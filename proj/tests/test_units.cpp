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

#include <random>

#include "dmlab/units.hpp"

using namespace dmlab;
using namespace std::chrono_literals;

TEST_CASE("byte quantities need a unit and keep binary and decimal apart") {
  CHECK(parse_bytes("4MiB") == 4 * MiB);
  CHECK(parse_bytes("4MB") == 4'000'000);
  CHECK(parse_bytes("1TiB") == TiB);
  CHECK(parse_bytes("1536B") == 1536);
  CHECK(parse_bytes(" 64KiB ") == 64 * KiB);
  CHECK_THROWS_AS(parse_bytes("4096"), QuantityError);
  CHECK_THROWS_AS(parse_bytes("4mib"), QuantityError);
  CHECK_THROWS_AS(parse_bytes("MiB"), QuantityError);
  CHECK_THROWS_AS(parse_bytes("-1MiB"), QuantityError);
  CHECK_THROWS_AS(parse_bytes("99999999999PiB"), QuantityError);
}

TEST_CASE("bandwidth is decimal bits per second") {
  CHECK(parse_bandwidth("1Gbps").bits_per_second == 1'000'000'000);
  CHECK(parse_bandwidth("100Gbps") == Bandwidth::gbps(100));
  CHECK(parse_bandwidth("5Mbps") == Bandwidth::mbps(5));
  CHECK(parse_bandwidth("7bps").bits_per_second == 7);
  CHECK_THROWS_AS(parse_bandwidth("1000"), QuantityError);
  CHECK_THROWS_AS(parse_bandwidth("1GiB"), QuantityError);
}

TEST_CASE("durations") {
  CHECK(parse_duration("100ms") == 100ms);
  CHECK(parse_duration("2s") == 2s);
  CHECK(parse_duration("1500us") == 1500us);
  CHECK_THROWS_AS(parse_duration("100"), QuantityError);
  CHECK_THROWS_AS(Rtt(std::chrono::microseconds(-1)), QuantityError);
}

TEST_CASE("ratios are confined to [0, 1]") {
  CHECK(PacketLossRate(0.0).ratio() == 0.0);
  CHECK(PacketLossRate(1.0).ratio() == 1.0);
  CHECK_THROWS_AS(PacketLossRate(1.5), QuantityError);
  CHECK_THROWS_AS(BitErrorRate(-1e-9), QuantityError);
}

TEST_CASE("formatting picks the largest exact unit") {
  CHECK(format_bytes(4 * MiB) == "4MiB");
  CHECK(format_bytes(1536) == "1536B");
  CHECK(format_bandwidth(Bandwidth::gbps(1)) == "1Gbps");
  CHECK(format_duration(100ms) == "100ms");
  CHECK(format_duration(1500us) == "1500us");
}

TEST_CASE("format and parse round-trip") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    ByteCount b = rng() >> (rng() % 64);
    b = b >> 10;  // stay clear of overflow in the largest unit
    CHECK(parse_bytes(format_bytes(b)) == b);
    Bandwidth bw{rng() >> (rng() % 64)};
    CHECK(parse_bandwidth(format_bandwidth(bw)) == bw);
    std::chrono::microseconds d(static_cast<std::int64_t>(rng() >> 20));
    CHECK(parse_duration(format_duration(d)) == d);
  }
  for (ByteCount p = 1; p != 0 && p <= 1024 * TiB; p <<= 1) CHECK(parse_bytes(format_bytes(p)) == p);
}
