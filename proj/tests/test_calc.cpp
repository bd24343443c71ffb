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

#include <cmath>
#include <random>

#include "dmlab/calc.hpp"

using namespace dmlab;
using namespace dmlab::calc;

namespace {

// Independent oracles: integer arithmetic in 128 bits, or long double.
std::uint64_t bdp_oracle(std::uint64_t bps, std::int64_t rtt_us) {
  unsigned __int128 bits = static_cast<unsigned __int128>(bps) * static_cast<std::uint64_t>(rtt_us);
  return static_cast<std::uint64_t>(bits / 8'000'000u);
}

long double ber_oracle(long double loss, long double frame) { return loss / (frame * 8.0L); }

}  // namespace

TEST_CASE("bandwidth-delay product") {
  CHECK(compute_bdp(Bandwidth::gbps(100), Rtt::ms(74)) == 925'000'000);
  CHECK(compute_bdp(Bandwidth::gbps(1), Rtt::ms(100)) == 12'500'000);
  CHECK(compute_bdp(Bandwidth::gbps(37), Rtt{}) == 0);
  CHECK(compute_bdp(Bandwidth::bps(7), Rtt(std::chrono::microseconds(1))) == 0);
}

TEST_CASE("bdp matches the 128-bit oracle and is monotone") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5000; ++i) {
    std::uint64_t bps = rng() % 400'000'000'000ULL;
    std::int64_t us = static_cast<std::int64_t>(rng() % 1'000'000);
    auto b = compute_bdp(Bandwidth{bps}, Rtt(std::chrono::microseconds(us)));
    REQUIRE(b == bdp_oracle(bps, us));
    CHECK(compute_bdp(Bandwidth{bps + 1000}, Rtt(std::chrono::microseconds(us))) >= b);
    CHECK(compute_bdp(Bandwidth{bps}, Rtt(std::chrono::microseconds(us + 1))) >= b);
  }
}

TEST_CASE("window ceiling") {
  CHECK(window_ceiling(64 * KiB, Rtt::ms(100)).bits_per_second == 5'242'880);
  CHECK(window_ceiling(925'000'000, Rtt::ms(74)) == Bandwidth::gbps(100));
  CHECK(window_ceiling(0, Rtt::ms(5)).bits_per_second == 0);
  CHECK_THROWS_AS(window_ceiling(64 * KiB, Rtt{}), CalcError);
  CHECK(window_ceiling_bps(64 * KiB, Rtt::ms(100)) == doctest::Approx(5'242'880.0));
}

TEST_CASE("ceiling inverts bdp within rounding") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    std::uint64_t bps = 1'000'000 + rng() % 100'000'000'000ULL;
    Rtt rtt(std::chrono::microseconds(1000 + rng() % 500'000));
    auto back = window_ceiling(compute_bdp(Bandwidth{bps}, rtt), rtt).bits_per_second;
    CHECK(back <= bps);
    CHECK(static_cast<double>(bps - back) <= 8.0 / rtt.seconds() + 1.0);
  }
}

TEST_CASE("bit error rate from packet loss") {
  auto ber = ber_from_packet_loss(PacketLossRate(4.6e-5), 1500).ratio();
  CHECK(ber >= 3.8e-9);
  CHECK(ber <= 4.0e-9);
  CHECK(ber == doctest::Approx(static_cast<double>(ber_oracle(4.6e-5L, 1500))).epsilon(1e-12));
  CHECK(ber_from_packet_loss(PacketLossRate(0.0), 1500).ratio() == 0.0);
  CHECK(ber_from_packet_loss(PacketLossRate(1.0 / 22000), 1500).ratio() == doctest::Approx(3.79e-9).epsilon(1e-3));
  CHECK_THROWS_AS(ber_from_packet_loss(PacketLossRate(0.1), 0), CalcError);
}

TEST_CASE("packet loss from bit error rate") {
  auto back = packet_loss_from_ber(BitErrorRate(3.83e-9), 1500);
  CHECK(back.rate.ratio() == doctest::Approx(4.6e-5).epsilon(1e-3));
  CHECK_FALSE(back.saturated);
  CHECK(packet_loss_from_ber(BitErrorRate(0.0), 9018).rate.ratio() == 0.0);
  CHECK(packet_loss_from_ber(BitErrorRate(1e-10), 9018).rate.ratio() == doctest::Approx(7.2e-6).epsilon(2e-3));
  auto sat = packet_loss_from_ber(BitErrorRate(0.5), 1500);
  CHECK(sat.saturated);
  CHECK(sat.rate.ratio() == 1.0);
}

TEST_CASE("loss conversions round-trip") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1e-3);
  for (int i = 0; i < 1000; ++i) {
    double loss = u(rng);
    std::uint64_t frame = 64 + rng() % 9000;
    auto ber = ber_from_packet_loss(PacketLossRate(loss), frame);
    CHECK(packet_loss_from_ber(ber, frame).rate.ratio() == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("daily volume") {
  CHECK(daily_volume(Bandwidth::gbps(1)) == 10'800'000'000'000ULL);
  CHECK(daily_volume(Bandwidth::gbps(10)) == 108'000'000'000'000ULL);
  CHECK(daily_volume(Bandwidth::gbps(100)) == 1'080'000'000'000'000ULL);
  CHECK(daily_volume(Bandwidth{}) == 0);
  CHECK(to_decimal_tb(daily_volume(Bandwidth::gbps(1))) == doctest::Approx(10.8));
  CHECK(rounded_tb(daily_volume(Bandwidth::gbps(1))) == 10);
  CHECK(rounded_tb(daily_volume(Bandwidth::gbps(10))) == 100);
  CHECK(rounded_tb(daily_volume(Bandwidth::gbps(100))) == 1000);
  CHECK(rounded_tb(0) == 0);
}
