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

#include "dmlab/calc.hpp"

#include <cmath>

namespace dmlab::calc {

namespace {
using u128 = unsigned __int128;

void require_frame(std::uint64_t frame_bytes) {
  if (frame_bytes == 0) throw CalcError("frame size must be at least one byte");
}
}  // namespace

ByteCount compute_bdp(Bandwidth bw, Rtt rtt) {
  u128 bits = static_cast<u128>(bw.bits_per_second) * static_cast<u128>(rtt.round_trip().count());
  return static_cast<ByteCount>(bits / 8'000'000u);
}

Bandwidth window_ceiling(ByteCount window, Rtt rtt) {
  auto us = rtt.round_trip().count();
  if (us <= 0) throw CalcError("window ceiling is undefined for a zero RTT");
  u128 bits = static_cast<u128>(window) * 8u * 1'000'000u;
  return Bandwidth{static_cast<std::uint64_t>(bits / static_cast<u128>(us))};
}

double window_ceiling_bps(ByteCount window, Rtt rtt) {
  if (rtt.round_trip().count() <= 0) throw CalcError("window ceiling is undefined for a zero RTT");
  return static_cast<double>(window) * 8.0 / rtt.seconds();
}

BitErrorRate ber_from_packet_loss(PacketLossRate loss, std::uint64_t frame_bytes) {
  require_frame(frame_bytes);
  return BitErrorRate(loss.ratio() / (static_cast<double>(frame_bytes) * 8.0));
}

LossEstimate packet_loss_from_ber(BitErrorRate ber, std::uint64_t frame_bytes) {
  require_frame(frame_bytes);
  double p = ber.ratio() * static_cast<double>(frame_bytes) * 8.0;
  if (p > 1.0) return {PacketLossRate(1.0), true};
  return {PacketLossRate(p), false};
}

ByteCount daily_volume(Bandwidth bw) {
  u128 bits = static_cast<u128>(bw.bits_per_second) * kSecondsPerDay;
  return static_cast<ByteCount>(bits / 8u);
}

double to_decimal_tb(ByteCount bytes) { return static_cast<double>(bytes) / 1e12; }

std::uint64_t rounded_tb(ByteCount bytes) {
  std::uint64_t tb = bytes / 1'000'000'000'000ULL;
  std::uint64_t scale = 1;
  while (tb / scale >= 10) scale *= 10;
  return tb / scale * scale;
}

}  // namespace dmlab::calc
