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

// Closed-form calculators for path sizing and link-quality arithmetic.
// All functions are pure.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "dmlab/units.hpp"

namespace dmlab::calc {

class CalcError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bandwidth-delay product: floor(bps * rtt / 8) bytes, the minimum TCP
/// window that keeps the path full.
ByteCount compute_bdp(Bandwidth bw, Rtt rtt);

/// Highest single-stream rate a window of `window` bytes can sustain over
/// `rtt`. Throws CalcError for a zero RTT.
Bandwidth window_ceiling(ByteCount window, Rtt rtt);

/// Same as window_ceiling without flooring to whole bits per second.
double window_ceiling_bps(ByteCount window, Rtt rtt);

BitErrorRate ber_from_packet_loss(PacketLossRate loss, std::uint64_t frame_bytes);

struct LossEstimate {
  PacketLossRate rate;
  // First-order conversion exceeded 1 and was clamped.
  bool saturated = false;
};

LossEstimate packet_loss_from_ber(BitErrorRate ber, std::uint64_t frame_bytes);

inline constexpr std::uint64_t kSecondsPerDay = 86'400;

/// Bytes moved in one day at a sustained `bw`: bps / 8 * 86400, exact.
/// Rates that are not a multiple of 8 bps are floored to whole bytes.
ByteCount daily_volume(Bandwidth bw);

/// Presentation helper: decimal terabytes (10^12) with no rounding.
double to_decimal_tb(ByteCount bytes);

/// Presentation helper reproducing the rounded "10 / 100 / 1000 TB" style:
/// the decimal-TB figure truncated to one significant digit.
std::uint64_t rounded_tb(ByteCount bytes);

}  // namespace dmlab::calc
