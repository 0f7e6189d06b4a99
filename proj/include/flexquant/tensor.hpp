// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flexquant/error.hpp"

namespace flexquant {

// Dense row-major float tensor. The only numeric carrier in the library;
// no strides, no views, no broadcasting.
class Tensor {
public:
  Tensor() = default;

  // Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<int64_t> shape);

  static Tensor from_data(std::vector<int64_t> shape, std::vector<float> data);

  // 2-D convenience constructor.
  static Tensor zeros(int64_t rows, int64_t cols) { return Tensor({rows, cols}); }

  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  // Rows/cols of a 2-D tensor; throws DimensionError otherwise.
  int64_t rows() const;
  int64_t cols() const;

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<const float> values() const { return data_; }

  float& at(int64_t r, int64_t c);
  float at(int64_t r, int64_t c) const;
  float& flat(int64_t i) { return data_[static_cast<size_t>(i)]; }
  float flat(int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Pointer to the start of row r of a 2-D tensor.
  const float* row(int64_t r) const { return data_.data() + r * cols(); }
  float* row(int64_t r) { return data_.data() + r * cols(); }

  // Copy of row r as a 1xC tensor.
  Tensor row_copy(int64_t r) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

private:
  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

// a[m x k] * b[k x n] -> [m x n]. Accumulates in double, summing k
// left-to-right so results are reproducible run to run.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[m x k] * w[n x k]^T (+ bias[n] if nonempty) -> [m x n].
// Same accumulation discipline as matmul; this is the linear-layer path.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Softmax over the last axis, computed with max subtraction.
Tensor softmax(const Tensor& x);

// Per-row layer normalization of a 2-D tensor: (x - mean) / sqrt(var + eps) * gamma + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

// Elementwise sum; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise exact GELU (erf form).
Tensor gelu(const Tensor& x);

} // namespace flexquant
