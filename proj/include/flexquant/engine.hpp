// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flexquant/analyzer.hpp"
#include "flexquant/model.hpp"
#include "flexquant/scheduler.hpp"

namespace flexquant {

struct GenerationConfig {
  int64_t max_new_tokens = 64;
  std::optional<TokenId> eos_token;
  SchedulerConfig scheduler;
  Rung start_rung = Rung::Fp; // fp or 8
  std::string trace_path;     // empty = keep the trace in memory only
};

// One record per generated token. effective_bits and weight_bytes_touched
// describe the precision state that produced the token; switch_events
// list the plan entries applied right after it was observed.
struct TraceRecord {
  int64_t token_index = 0; // 1-based position in the generated sequence
  TokenId token_id = 0;
  double ppl_entropy = 0.0;
  double fault_tolerance = 0.0;
  std::optional<double> moving_average; // null while the window fills
  double effective_bits = 0.0;
  double weight_bytes_touched = 0.0;
  uint64_t elapsed_ns = 0;
  StepStats buckets; // timing breakdown (weight_bytes mirrors weight_bytes_touched)
  uint64_t ns_ppl = 0;
  std::vector<SwitchEvent> switch_events;
};

struct DecodeTrace {
  std::vector<TraceRecord> records;

  size_t size() const { return records.size(); }
};

struct GenerationResult {
  std::vector<TokenId> sequence; // generated tokens only (prompt excluded)
  DecodeTrace trace;
  double threshold = 0.0;
};

// Dynamic-precision generation: prefill at the starting rung, derive the
// switching threshold, then greedy decode with per-token PPLE observation
// and KL-plan-ordered precision switching.
GenerationResult generate(std::span<const TokenId> prompt, Model& model, const SwitchPlan& plan,
                          const GenerationConfig& cfg);

// Static baseline: all layers pinned to `rung`, scheduler inert.
GenerationResult generate_static(std::span<const TokenId> prompt, Model& model, Rung rung,
                                 const GenerationConfig& cfg);

// One row of the switching-speed sweep.
struct SweepRow {
  int64_t speed = 0; // tokens between forced switches
  double final_effective_bits = 0.0;
  double mean_bytes_per_token = 0.0;
  double agreement_vs_fp = 0.0;
  std::optional<size_t> first_divergence;
  double rouge_l_vs_fp = 0.0;
  DecodeTrace trace;
};

// Forced schedule: one plan entry applied after every `speed` tokens,
// ignoring PPLE. Each run starts from cfg.start_rung; results are
// compared against the full-precision static generation.
std::vector<SweepRow> sweep_switch_speed(std::span<const TokenId> prompt, Model& model,
                                         const SwitchPlan& plan, std::span<const int64_t> speeds,
                                         const GenerationConfig& cfg);

std::string sweep_csv_header();
std::string sweep_csv_row(const std::string& prompt_name, const SweepRow& row);

// Aggregate traffic and latency breakdown of a trace.
struct TrafficReport {
  double total_weight_bytes = 0.0;
  double mean_bytes_per_token = 0.0;
  uint64_t ns_fp = 0;
  uint64_t ns_int8 = 0;
  uint64_t ns_int4 = 0;
  uint64_t ns_attention_cache = 0; // forward time outside the linear layers
  uint64_t ns_ppl = 0;
  uint64_t ns_total = 0;           // sum of per-token elapsed_ns
  double bucket_sum_over_total = 0.0;
  double ppl_share = 0.0;
};

TrafficReport traffic_report(const DecodeTrace& trace);
std::string format_traffic_report(const TrafficReport& r);

// Trace serialization: one JSON object per line. Timing fields
// (elapsed_ns and the bucket object) vary run to run; everything else is
// bit-exact for identical inputs.
void save_trace(const DecodeTrace& trace, std::ostream& os);
void save_trace_file(const DecodeTrace& trace, const std::string& path);
DecodeTrace load_trace_file(const std::string& path);

// Renders a trace as CSV for plotting.
std::string trace_to_csv(const DecodeTrace& trace);

// Greedy pick: index of the highest logit, lowest index on ties.
TokenId argmax_token(const Tensor& logits_row);

} // namespace flexquant
