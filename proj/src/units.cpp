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

#include "dmlab/units.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <limits>
#include <utility>

namespace dmlab {
namespace {

struct Split {
  std::uint64_t number;
  std::string_view suffix;
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

Split split_number(std::string_view text, std::string_view what) {
  text = trim(text);
  std::size_t i = 0;
  while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
  if (i == 0) throw QuantityError("expected a " + std::string(what) + " like '4MiB', got '" + std::string(text) + "'");
  std::uint64_t n = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + i, n);
  if (ec != std::errc{}) throw QuantityError(std::string(what) + " out of range: '" + std::string(text) + "'");
  auto suffix = trim(text.substr(i));
  if (suffix.empty())
    throw QuantityError("bare number '" + std::string(text) + "' rejected; a unit suffix is required for " +
                        std::string(what));
  return {n, suffix};
}

std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b, std::string_view text) {
  if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a)
    throw QuantityError("quantity overflows 64 bits: '" + std::string(text) + "'");
  return a * b;
}

template <std::size_t N>
std::uint64_t lookup(const std::array<std::pair<std::string_view, std::uint64_t>, N>& table, std::string_view suffix,
                     std::string_view text, std::string_view what) {
  for (const auto& [name, scale] : table)
    if (name == suffix) return scale;
  throw QuantityError("unknown " + std::string(what) + " unit in '" + std::string(text) + "'");
}

}  // namespace

ByteCount parse_bytes(std::string_view text) {
  static constexpr std::array<std::pair<std::string_view, std::uint64_t>, 10> units{{
      {"B", 1},
      {"KiB", KiB},
      {"MiB", MiB},
      {"GiB", GiB},
      {"TiB", TiB},
      {"PiB", 1024 * TiB},
      {"KB", 1'000ULL},
      {"MB", 1'000'000ULL},
      {"GB", 1'000'000'000ULL},
      {"TB", 1'000'000'000'000ULL},
  }};
  auto [n, suffix] = split_number(text, "byte count");
  return checked_mul(n, lookup(units, suffix, text, "byte"), text);
}

Bandwidth parse_bandwidth(std::string_view text) {
  static constexpr std::array<std::pair<std::string_view, std::uint64_t>, 5> units{{
      {"bps", 1},
      {"Kbps", 1'000ULL},
      {"Mbps", 1'000'000ULL},
      {"Gbps", 1'000'000'000ULL},
      {"Tbps", 1'000'000'000'000ULL},
  }};
  auto [n, suffix] = split_number(text, "bandwidth");
  return Bandwidth{checked_mul(n, lookup(units, suffix, text, "bandwidth"), text)};
}

std::chrono::microseconds parse_duration(std::string_view text) {
  static constexpr std::array<std::pair<std::string_view, std::uint64_t>, 3> units{{
      {"us", 1},
      {"ms", 1'000ULL},
      {"s", 1'000'000ULL},
  }};
  auto [n, suffix] = split_number(text, "duration");
  auto us = checked_mul(n, lookup(units, suffix, text, "duration"), text);
  if (us > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
    throw QuantityError("duration out of range: '" + std::string(text) + "'");
  return std::chrono::microseconds(static_cast<std::int64_t>(us));
}

std::string format_bytes(ByteCount v) {
  static constexpr std::array<std::pair<const char*, ByteCount>, 4> units{{
      {"TiB", TiB}, {"GiB", GiB}, {"MiB", MiB}, {"KiB", KiB}}};
  for (const auto& [name, scale] : units)
    if (v >= scale && v % scale == 0) return std::to_string(v / scale) + name;
  return std::to_string(v) + "B";
}

std::string format_bandwidth(Bandwidth bw) {
  static constexpr std::array<std::pair<const char*, std::uint64_t>, 4> units{{
      {"Tbps", 1'000'000'000'000ULL}, {"Gbps", 1'000'000'000ULL}, {"Mbps", 1'000'000ULL}, {"Kbps", 1'000ULL}}};
  auto v = bw.bits_per_second;
  for (const auto& [name, scale] : units)
    if (v >= scale && v % scale == 0) return std::to_string(v / scale) + name;
  return std::to_string(v) + "bps";
}

std::string format_duration(std::chrono::microseconds d) {
  auto v = d.count();
  if (v != 0 && v % 1'000'000 == 0) return std::to_string(v / 1'000'000) + "s";
  if (v % 1'000 == 0) return std::to_string(v / 1'000) + "ms";
  return std::to_string(v) + "us";
}

}  // namespace dmlab
