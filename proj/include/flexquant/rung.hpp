// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "flexquant/error.hpp"

namespace flexquant {

// Precision rung of a linear layer. The ladder is monotone: fp -> 8 -> 4.
enum class Rung : uint8_t { Fp = 0, Int8 = 1, Int4 = 2 };

// Bit-width used for memory-traffic and effective-bits accounting.
// The full-precision rung is accounted as 16-bit storage.
constexpr int accounting_bits(Rung r) {
  switch (r) {
    case Rung::Fp: return 16;
    case Rung::Int8: return 8;
    case Rung::Int4: return 4;
  }
  return 16;
}

// Integer bit-width of a quantized rung; throws for fp.
constexpr int quantized_bits(Rung r) {
  if (r == Rung::Int8) return 8;
  if (r == Rung::Int4) return 4;
  throw ConfigError("fp rung has no integer bit-width");
}

constexpr const char* to_string(Rung r) {
  switch (r) {
    case Rung::Fp: return "fp";
    case Rung::Int8: return "8";
    case Rung::Int4: return "4";
  }
  return "fp";
}

inline Rung parse_rung(std::string_view s) {
  if (s == "fp" || s == "fp16" || s == "16") return Rung::Fp;
  if (s == "8" || s == "int8") return Rung::Int8;
  if (s == "4" || s == "int4") return Rung::Int4;
  throw ConfigError("unknown precision rung '" + std::string(s) + "'");
}

// True if `to` is a strictly lower rung than `from` on the ladder.
constexpr bool is_downward(Rung from, Rung to) {
  return static_cast<uint8_t>(to) > static_cast<uint8_t>(from);
}

} // namespace flexquant
