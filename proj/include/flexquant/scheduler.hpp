// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>

#include "flexquant/tensor.hpp"

namespace flexquant {

// Perplexity entropy of a logits row: exp of the entropy of the softmax
// distribution. Always in [1, V]; low values signal a confident model.
double ppl_entropy(const Tensor& logits);

// Gap between the highest and second-highest softmax probabilities; the
// headroom before perturbations flip the argmax. Requires V >= 2.
double fault_tolerance(const Tensor& logits);

enum class ThresholdMode : uint8_t { Prefill = 0, Absolute = 1 };

struct SchedulerConfig {
  int window_len = 20;          // sliding-window length W
  double theta = 1.0;           // threshold factor (prefill) or threshold value (absolute)
  ThresholdMode threshold_mode = ThresholdMode::Prefill;
  int layers_per_switch = 1;    // plan entries applied per trigger
};

// Mean PPLE over the last min(window_len, rows) rows of prefill logits,
// scaled by theta. This is the prefill-derived switching threshold.
double derive_threshold(const Tensor& prefill_logits, int window_len, double theta);

// Online switching policy: a sliding PPLE window, a fixed threshold, a
// cooldown after every switch, and a cursor into the switch plan.
// Switches fire only on a full window whose mean is strictly below the
// threshold; a switch empties the window and starts a cooldown of one
// full window so the statistic reflects only post-switch logits.
class SchedulerState {
public:
  struct Decision {
    std::optional<double> window_mean; // mean evaluated at this observation
    size_t first_entry = 0;            // index into the plan
    size_t count = 0;                  // 0 = no switch
  };

  SchedulerState(SchedulerConfig cfg, size_t plan_len);

  void set_threshold(double thre);
  bool threshold_set() const { return threshold_set_; }
  double threshold() const;

  // Pushes one PPLE observation and returns the switch decision.
  Decision observe(double ppl_entropy_value);

  // Mean of the window, or nullopt while it is still filling.
  std::optional<double> moving_average() const;

  size_t plan_cursor() const { return plan_cursor_; }
  size_t plan_length() const { return plan_len_; }
  int cooldown_remaining() const { return cooldown_; }
  const SchedulerConfig& config() const { return cfg_; }

private:
  SchedulerConfig cfg_;
  size_t plan_len_ = 0;
  std::deque<double> window_;
  double threshold_ = 0.0;
  bool threshold_set_ = false;
  int cooldown_ = 0;
  size_t plan_cursor_ = 0;
};

} // namespace flexquant
