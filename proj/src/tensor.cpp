// SPDX-License-Identifier: Apache-2.0
#include "flexquant/tensor.hpp"

#include <cmath>
#include <sstream>

namespace flexquant {

namespace {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape");
    n *= d;
  }
  return n;
}

} // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<float> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError("data length does not match shape");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

int64_t Tensor::rows() const {
  if (ndim() != 2) throw DimensionError("rows() requires a 2-D tensor, got " + shape_str());
  return shape_[0];
}

int64_t Tensor::cols() const {
  if (ndim() != 2) throw DimensionError("cols() requires a 2-D tensor, got " + shape_str());
  return shape_[1];
}

float& Tensor::at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
float Tensor::at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }

Tensor Tensor::row_copy(int64_t r) const {
  Tensor out({1, cols()});
  const float* src = row(r);
  for (int64_t c = 0; c < cols(); ++c) out.flat(c) = src[c];
  return out;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int64_t m = a.rows(), k = a.cols();
  if (b.rows() != k)
    throw DimensionError("matmul inner dimensions disagree: " + a.shape_str() + " x " + b.shape_str());
  const int64_t n = b.cols();
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const float* ai = a.row(i);
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += static_cast<double>(ai[p]) * static_cast<double>(b.at(p, j));
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const int64_t m = x.rows(), k = x.cols();
  if (w.cols() != k)
    throw DimensionError("linear: input width " + x.shape_str() + " does not match weight " + w.shape_str());
  const int64_t n = w.rows();
  const bool has_bias = bias.numel() != 0;
  if (has_bias && bias.numel() != n) throw DimensionError("linear: bias length mismatch");
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const float* xi = x.row(i);
    for (int64_t j = 0; j < n; ++j) {
      const float* wj = w.row(j);
      double acc = has_bias ? static_cast<double>(bias.flat(j)) : 0.0;
      for (int64_t p = 0; p < k; ++p) acc += static_cast<double>(xi[p]) * static_cast<double>(wj[p]);
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  if (x.ndim() == 0 || x.dim(x.ndim() - 1) == 0) throw DimensionError("softmax: empty last axis");
  const int64_t width = x.dim(x.ndim() - 1);
  const int64_t rows = x.numel() / width;
  Tensor out(x.shape());
  std::vector<double> e(static_cast<size_t>(width));
  for (int64_t r = 0; r < rows; ++r) {
    const float* in = x.data() + r * width;
    float* dst = out.data() + r * width;
    double mx = in[0];
    for (int64_t i = 1; i < width; ++i) mx = std::max(mx, static_cast<double>(in[i]));
    double sum = 0.0;
    for (int64_t i = 0; i < width; ++i) {
      e[static_cast<size_t>(i)] = std::exp(static_cast<double>(in[i]) - mx);
      sum += e[static_cast<size_t>(i)];
    }
    for (int64_t i = 0; i < width; ++i) dst[i] = static_cast<float>(e[static_cast<size_t>(i)] / sum);
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const int64_t n = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: parameter length mismatch");
  Tensor out({n, d});
  for (int64_t r = 0; r < n; ++r) {
    const float* in = x.row(r);
    double mean = 0.0;
    for (int64_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t c = 0; c < d; ++c) {
      const double dv = in[c] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
    float* dst = out.row(r);
    for (int64_t c = 0; c < d; ++c)
      dst[c] = static_cast<float>((in[c] - mean) * inv * gamma.flat(c) + beta.flat(c));
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw DimensionError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out.flat(i) = a.flat(i) + b.flat(i);
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.flat(i);
    out.flat(i) = static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
  }
  return out;
}

} // namespace flexquant
