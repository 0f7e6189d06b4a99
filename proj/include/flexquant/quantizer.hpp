// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flexquant/tensor.hpp"

namespace flexquant {

enum class QuantMode : uint8_t { Asymmetric = 0, Symmetric = 1 };

const char* to_string(QuantMode mode);

// Integer-quantized 2-D weight tensor with per-row scale and zero point.
//
// Asymmetric: codes are unsigned in [0, 2^n - 1], x_hat = (code - z) * s.
// Symmetric:  signed codes in [-(2^(n-1)-1), +(2^(n-1)-1)] are stored
//             offset by 2^(n-1)-1 so the payload stays unsigned; z = 0.
//
// 4-bit payloads pack two codes per byte over the flattened row-major
// element stream: low nibble = even element index, high nibble = odd.
struct QuantizedTensor {
  int bits = 8; // 4 or 8
  QuantMode mode = QuantMode::Asymmetric;
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<uint8_t> payload;
  std::vector<float> scale;       // one per row, always > 0
  std::vector<int32_t> zero_point; // one per row; 0 in symmetric mode

  int64_t numel() const { return rows * cols; }
  size_t expected_payload_bytes() const;

  // Unpacked stored (unsigned) code of element (r, c).
  uint32_t code_at(int64_t r, int64_t c) const;

  // Signed offset applied to stored codes in symmetric mode (2^(n-1)-1), 0 otherwise.
  int32_t stored_offset() const;

  // Throws FormatError / DimensionError if the structure is inconsistent.
  void validate() const;
};

// Lowest/highest unsigned stored code for a bit-width and mode.
uint32_t quant_code_max(int bits, QuantMode mode);

// Rounds to nearest, ties to even.
int64_t round_half_even(double v);

// Packs unsigned codes (each < 2^bits) into a byte payload; bits must be 4 or 8.
std::vector<uint8_t> pack_codes(std::span<const uint32_t> codes, int bits);

// Inverse of pack_codes.
std::vector<uint32_t> unpack_codes(std::span<const uint8_t> payload, int64_t count, int bits);

QuantizedTensor quantize_asymmetric(const Tensor& x, int bits);
QuantizedTensor quantize_symmetric(const Tensor& x, int bits);
QuantizedTensor quantize(const Tensor& x, int bits, QuantMode mode);

Tensor dequantize(const QuantizedTensor& q);

struct QuantErrorStats {
  double max_abs_err = 0.0;
  double mean_sq_err = 0.0;
};

QuantErrorStats quant_error_stats(const Tensor& x, const QuantizedTensor& q);

} // namespace flexquant
