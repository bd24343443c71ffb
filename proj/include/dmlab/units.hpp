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

#include <chrono>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dmlab {

using ByteCount = std::uint64_t;

inline constexpr ByteCount KiB = 1024;
inline constexpr ByteCount MiB = 1024 * KiB;
inline constexpr ByteCount GiB = 1024 * MiB;
inline constexpr ByteCount TiB = 1024 * GiB;

/// Raised for malformed or out-of-range quantities.
class QuantityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Bandwidth {
  std::uint64_t bits_per_second = 0;

  static constexpr Bandwidth bps(std::uint64_t v) { return {v}; }
  static constexpr Bandwidth mbps(std::uint64_t v) { return {v * 1'000'000ULL}; }
  static constexpr Bandwidth gbps(std::uint64_t v) { return {v * 1'000'000'000ULL}; }

  friend constexpr auto operator<=>(const Bandwidth&, const Bandwidth&) = default;
};

/// Round-trip time, microsecond resolution.
class Rtt {
 public:
  constexpr Rtt() = default;
  explicit Rtt(std::chrono::microseconds round_trip) : round_trip_(round_trip) {
    if (round_trip.count() < 0) throw QuantityError("RTT must be non-negative");
  }
  static Rtt ms(std::int64_t v) { return Rtt(std::chrono::milliseconds(v)); }

  constexpr std::chrono::microseconds round_trip() const { return round_trip_; }
  constexpr double seconds() const { return static_cast<double>(round_trip_.count()) / 1e6; }

  friend constexpr auto operator<=>(const Rtt&, const Rtt&) = default;

 private:
  std::chrono::microseconds round_trip_{0};
};

/// A ratio constrained to [0, 1]; tag distinguishes the two error-rate domains.
template <typename Tag>
class UnitRatio {
 public:
  constexpr UnitRatio() = default;
  explicit UnitRatio(double ratio) : ratio_(ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw QuantityError("ratio must lie in [0, 1]");
  }
  constexpr double ratio() const { return ratio_; }

 private:
  double ratio_ = 0.0;
};

struct PacketLossTag {};
struct BitErrorTag {};
using PacketLossRate = UnitRatio<PacketLossTag>;
using BitErrorRate = UnitRatio<BitErrorTag>;

constexpr bool is_power_of_two(ByteCount v) { return v != 0 && (v & (v - 1)) == 0; }

// Parsing requires an explicit unit suffix; bare numbers are rejected.
//   bytes:     B, KiB, MiB, GiB, TiB, PiB (binary) and KB, MB, GB, TB (decimal)
//   bandwidth: bps, Kbps, Mbps, Gbps, Tbps (decimal)
//   duration:  us, ms, s
ByteCount parse_bytes(std::string_view text);
Bandwidth parse_bandwidth(std::string_view text);
std::chrono::microseconds parse_duration(std::string_view text);

std::string format_bytes(ByteCount v);          // "4MiB", "1536B"
std::string format_bandwidth(Bandwidth bw);     // "1Gbps", "5242880bps"
std::string format_duration(std::chrono::microseconds d);  // "100ms", "1500us"

}  // namespace dmlab
