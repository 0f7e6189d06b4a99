// SPDX-License-Identifier: Apache-2.0
#include "flexquant/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace flexquant {

const char* to_string(QuantMode mode) {
  return mode == QuantMode::Asymmetric ? "asymmetric" : "symmetric";
}

namespace {

void check_bits(int bits) {
  if (bits != 4 && bits != 8) throw ConfigError("unsupported bit-width " + std::to_string(bits));
}

} // namespace

uint32_t quant_code_max(int bits, QuantMode mode) {
  check_bits(bits);
  const uint32_t full = (1u << bits) - 1u;
  return mode == QuantMode::Asymmetric ? full : full - 1u;
}

int64_t round_half_even(double v) {
  // nearbyint honors the default FE_TONEAREST mode, which is ties-to-even.
  return static_cast<int64_t>(std::nearbyint(v));
}

size_t QuantizedTensor::expected_payload_bytes() const {
  return static_cast<size_t>((numel() * bits + 7) / 8);
}

int32_t QuantizedTensor::stored_offset() const {
  return mode == QuantMode::Symmetric ? (1 << (bits - 1)) - 1 : 0;
}

uint32_t QuantizedTensor::code_at(int64_t r, int64_t c) const {
  const int64_t idx = r * cols + c;
  if (bits == 8) return payload[static_cast<size_t>(idx)];
  const uint8_t byte = payload[static_cast<size_t>(idx / 2)];
  return (idx % 2 == 0) ? (byte & 0x0Fu) : (byte >> 4);
}

void QuantizedTensor::validate() const {
  check_bits(bits);
  if (rows < 0 || cols < 0) throw FormatError("quantized tensor has negative shape");
  if (payload.size() != expected_payload_bytes())
    throw FormatError("quantized tensor payload length " + std::to_string(payload.size()) +
                      " does not match expected " + std::to_string(expected_payload_bytes()));
  if (scale.size() != static_cast<size_t>(rows) || zero_point.size() != static_cast<size_t>(rows))
    throw FormatError("quantized tensor scale/zero-point length mismatch");
  for (float s : scale)
    if (!(s > 0.0f) || !std::isfinite(s)) throw FormatError("quantized tensor scale must be positive and finite");
}

std::vector<uint8_t> pack_codes(std::span<const uint32_t> codes, int bits) {
  check_bits(bits);
  if (bits == 8) {
    std::vector<uint8_t> out(codes.size());
    for (size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<uint8_t>(codes[i] & 0xFFu);
    return out;
  }
  std::vector<uint8_t> out((codes.size() + 1) / 2, 0);
  for (size_t i = 0; i < codes.size(); ++i) {
    const uint8_t nib = static_cast<uint8_t>(codes[i] & 0x0Fu);
    if (i % 2 == 0)
      out[i / 2] |= nib;
    else
      out[i / 2] |= static_cast<uint8_t>(nib << 4);
  }
  return out;
}

std::vector<uint32_t> unpack_codes(std::span<const uint8_t> payload, int64_t count, int bits) {
  check_bits(bits);
  const size_t expected = static_cast<size_t>((count * bits + 7) / 8);
  if (payload.size() != expected) throw FormatError("payload length does not match element count");
  std::vector<uint32_t> out(static_cast<size_t>(count));
  if (bits == 8) {
    for (int64_t i = 0; i < count; ++i) out[static_cast<size_t>(i)] = payload[static_cast<size_t>(i)];
    return out;
  }
  for (int64_t i = 0; i < count; ++i) {
    const uint8_t byte = payload[static_cast<size_t>(i / 2)];
    out[static_cast<size_t>(i)] = (i % 2 == 0) ? (byte & 0x0Fu) : (byte >> 4);
  }
  return out;
}

namespace {

struct RowRange {
  float lo = 0.0f;
  float hi = 0.0f;
};

RowRange row_range(const float* row, int64_t n) {
  RowRange r{row[0], row[0]};
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(row[i])) throw InputError("quantize: non-finite input value");
    r.lo = std::min(r.lo, row[i]);
    r.hi = std::max(r.hi, row[i]);
  }
  return r;
}

QuantizedTensor quantize_impl(const Tensor& x, int bits, QuantMode mode) {
  check_bits(bits);
  const int64_t rows = x.rows(), cols = x.cols();
  if (cols == 0) throw DimensionError("cannot quantize a tensor with zero columns");

  QuantizedTensor q;
  q.bits = bits;
  q.mode = mode;
  q.rows = rows;
  q.cols = cols;
  q.scale.resize(static_cast<size_t>(rows));
  q.zero_point.resize(static_cast<size_t>(rows));

  const int64_t qmax = quant_code_max(bits, mode);
  const int64_t signed_max = (1 << (bits - 1)) - 1; // symmetric code magnitude
  std::vector<uint32_t> codes(static_cast<size_t>(rows * cols));

  for (int64_t r = 0; r < rows; ++r) {
    const float* in = x.row(r);
    const RowRange range = row_range(in, cols);
    float s;
    int32_t z = 0;

    if (range.lo == range.hi) {
      // Constant row: pick scale/zero so dequantization is bit-exact.
      const float c = range.lo;
      if (mode == QuantMode::Asymmetric) {
        if (c == 0.0f) {
          s = 1.0f;
          z = 0;
        } else if (c > 0.0f) {
          s = c; // code 1 dequantizes to exactly c
          z = 0;
        } else {
          s = -c; // code 0 with z = 1 dequantizes to exactly c
          z = 1;
        }
        const uint32_t code = (c > 0.0f) ? 1u : 0u;
        for (int64_t i = 0; i < cols; ++i) codes[static_cast<size_t>(r * cols + i)] = code;
      } else {
        s = (c == 0.0f) ? 1.0f : std::fabs(c);
        const int32_t signed_code = (c > 0.0f) ? 1 : (c < 0.0f ? -1 : 0);
        const uint32_t stored = static_cast<uint32_t>(signed_code + signed_max);
        for (int64_t i = 0; i < cols; ++i) codes[static_cast<size_t>(r * cols + i)] = stored;
      }
      q.scale[static_cast<size_t>(r)] = s;
      q.zero_point[static_cast<size_t>(r)] = z;
      continue;
    }

    if (mode == QuantMode::Asymmetric) {
      s = static_cast<float>((static_cast<double>(range.hi) - static_cast<double>(range.lo)) /
                             static_cast<double>(qmax));
      const double sd = s;
      z = static_cast<int32_t>(round_half_even(0.0 - static_cast<double>(range.lo) / sd));
      for (int64_t i = 0; i < cols; ++i) {
        int64_t code = round_half_even(static_cast<double>(in[i]) / sd + static_cast<double>(z));
        code = std::clamp<int64_t>(code, 0, qmax);
        codes[static_cast<size_t>(r * cols + i)] = static_cast<uint32_t>(code);
      }
    } else {
      const double amax = std::max(std::fabs(static_cast<double>(range.lo)),
                                   std::fabs(static_cast<double>(range.hi)));
      s = static_cast<float>(amax / static_cast<double>(signed_max));
      const double sd = s;
      z = 0;
      for (int64_t i = 0; i < cols; ++i) {
        int64_t code = round_half_even(static_cast<double>(in[i]) / sd);
        code = std::clamp<int64_t>(code, -signed_max, signed_max);
        codes[static_cast<size_t>(r * cols + i)] = static_cast<uint32_t>(code + signed_max);
      }
    }
    q.scale[static_cast<size_t>(r)] = s;
    q.zero_point[static_cast<size_t>(r)] = z;
  }

  q.payload = pack_codes(codes, bits);
  return q;
}

} // namespace

QuantizedTensor quantize_asymmetric(const Tensor& x, int bits) {
  return quantize_impl(x, bits, QuantMode::Asymmetric);
}

QuantizedTensor quantize_symmetric(const Tensor& x, int bits) {
  return quantize_impl(x, bits, QuantMode::Symmetric);
}

QuantizedTensor quantize(const Tensor& x, int bits, QuantMode mode) {
  return quantize_impl(x, bits, mode);
}

Tensor dequantize(const QuantizedTensor& q) {
  q.validate();
  const std::vector<uint32_t> codes = unpack_codes(q.payload, q.numel(), q.bits);
  const int32_t offset = q.stored_offset();
  Tensor out({q.rows, q.cols});
  for (int64_t r = 0; r < q.rows; ++r) {
    const float s = q.scale[static_cast<size_t>(r)];
    const int32_t z = q.zero_point[static_cast<size_t>(r)] + offset;
    float* dst = out.row(r);
    const uint32_t* c = codes.data() + r * q.cols;
    for (int64_t i = 0; i < q.cols; ++i)
      dst[i] = static_cast<float>(static_cast<int32_t>(c[i]) - z) * s;
  }
  return out;
}

QuantErrorStats quant_error_stats(const Tensor& x, const QuantizedTensor& q) {
  if (x.rows() != q.rows || x.cols() != q.cols)
    throw DimensionError("quant_error_stats: shape mismatch");
  const Tensor xhat = dequantize(q);
  QuantErrorStats st;
  double sq = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double e = static_cast<double>(x.flat(i)) - static_cast<double>(xhat.flat(i));
    st.max_abs_err = std::max(st.max_abs_err, std::fabs(e));
    sq += e * e;
  }
  st.mean_sq_err = x.numel() > 0 ? sq / static_cast<double>(x.numel()) : 0.0;
  return st;
}

} // namespace flexquant
