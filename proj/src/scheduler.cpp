// SPDX-License-Identifier: Apache-2.0
#include "flexquant/scheduler.hpp"

#include <algorithm>
#include <cmath>

namespace flexquant {

namespace {

// Softmax of a logits row carried in double end to end; the scalar
// statistics below need more headroom than the float tensor path.
std::vector<double> softmax_double(const Tensor& logits) {
  const int64_t n = logits.numel();
  double mx = logits.flat(0);
  for (int64_t i = 1; i < n; ++i) mx = std::max(mx, static_cast<double>(logits.flat(i)));
  std::vector<double> p(static_cast<size_t>(n));
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    p[static_cast<size_t>(i)] = std::exp(static_cast<double>(logits.flat(i)) - mx);
    sum += p[static_cast<size_t>(i)];
  }
  for (double& v : p) v /= sum;
  return p;
}

} // namespace

double ppl_entropy(const Tensor& logits) {
  if (logits.numel() == 0) throw DimensionError("ppl_entropy: empty logits");
  double h = 0.0;
  for (const double pi : softmax_double(logits))
    if (pi > 0.0) h -= pi * std::log(pi);
  return std::exp(h);
}

double fault_tolerance(const Tensor& logits) {
  if (logits.numel() < 2) throw InputError("fault_tolerance: need at least two logits");
  double top1 = -1.0, top2 = -1.0;
  for (const double pi : softmax_double(logits)) {
    if (pi > top1) {
      top2 = top1;
      top1 = pi;
    } else if (pi > top2) {
      top2 = pi;
    }
  }
  return top1 - top2;
}

double derive_threshold(const Tensor& prefill_logits, int window_len, double theta) {
  if (prefill_logits.numel() == 0 || prefill_logits.rows() == 0)
    throw StateError("derive_threshold: no prefill logits");
  if (window_len < 1) throw ConfigError("derive_threshold: window length must be >= 1");
  const int64_t n = prefill_logits.rows();
  const int64_t k = std::min<int64_t>(window_len, n);
  double sum = 0.0;
  for (int64_t r = n - k; r < n; ++r) sum += ppl_entropy(prefill_logits.row_copy(r));
  return theta * (sum / static_cast<double>(k));
}

SchedulerState::SchedulerState(SchedulerConfig cfg, size_t plan_len)
    : cfg_(cfg), plan_len_(plan_len) {
  if (cfg_.window_len < 1) throw ConfigError("scheduler: window length must be >= 1");
  if (cfg_.layers_per_switch < 1) throw ConfigError("scheduler: layers_per_switch must be >= 1");
}

void SchedulerState::set_threshold(double thre) {
  threshold_ = thre;
  threshold_set_ = true;
}

double SchedulerState::threshold() const {
  if (!threshold_set_) throw StateError("scheduler: threshold not set");
  return threshold_;
}

std::optional<double> SchedulerState::moving_average() const {
  if (window_.size() < static_cast<size_t>(cfg_.window_len)) return std::nullopt;
  double sum = 0.0;
  for (double v : window_) sum += v;
  return sum / static_cast<double>(window_.size());
}

SchedulerState::Decision SchedulerState::observe(double ppl_entropy_value) {
  if (!threshold_set_) throw StateError("scheduler: observe called before a threshold was set");

  window_.push_back(ppl_entropy_value);
  if (window_.size() > static_cast<size_t>(cfg_.window_len)) window_.pop_front();
  if (cooldown_ > 0) --cooldown_;

  const std::optional<double> avg = moving_average();
  if (!avg || cooldown_ > 0 || !(*avg < threshold_) || plan_cursor_ >= plan_len_)
    return Decision{avg, 0, 0};

  Decision d;
  d.window_mean = avg;
  d.first_entry = plan_cursor_;
  d.count = std::min<size_t>(static_cast<size_t>(cfg_.layers_per_switch), plan_len_ - plan_cursor_);
  plan_cursor_ += d.count;
  window_.clear();
  cooldown_ = cfg_.window_len;
  return d;
}

} // namespace flexquant
