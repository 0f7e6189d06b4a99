// SPDX-License-Identifier: Apache-2.0
#include "flexquant/engine.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

#include "flexquant/metrics.hpp"

namespace flexquant {

namespace {

using json = nlohmann::ordered_json;

uint64_t now_ns() {
  return static_cast<uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

void apply_entry(Model& model, const SwitchEntry& entry, std::vector<SwitchEvent>& events) {
  const MultiPrecisionLayer* layer = model.find_layer(entry.layer_id);
  if (!layer) throw StateError("switch: unknown layer '" + entry.layer_id + "'");
  if (layer->current() != entry.from)
    throw StateError("switch: layer '" + entry.layer_id + "' is at '" +
                     to_string(layer->current()) + "', plan entry expects '" +
                     to_string(entry.from) + "'");
  if (auto ev = model.set_precision(entry.layer_id, entry.to)) events.push_back(*ev);
}

void validate_plan(const SwitchPlan& plan, const Model& model, Rung start_rung) {
  std::map<std::string, Rung> state;
  for (const SwitchEntry& e : plan.entries) {
    if (!model.find_layer(e.layer_id))
      throw ConfigError("plan references unknown layer '" + e.layer_id + "'");
    const auto it = state.find(e.layer_id);
    const Rung from = it == state.end() ? start_rung : it->second;
    if (e.from != from)
      throw ConfigError("plan entry for '" + e.layer_id + "' starts at '" + to_string(e.from) +
                        "' but the layer would be at '" + to_string(from) + "'");
    if (!is_downward(e.from, e.to))
      throw ConfigError("plan entry for '" + e.layer_id + "' is not a downward switch");
    state[e.layer_id] = e.to;
  }
}

// Core loop shared by generate, generate_static and the speed sweep.
// forced_speed > 0 replaces the PPLE policy with a fixed cadence of one
// plan entry every forced_speed tokens.
GenerationResult run_generation(std::span<const TokenId> prompt, Model& model,
                                const SwitchPlan& plan, const GenerationConfig& cfg,
                                int64_t forced_speed) {
  if (prompt.empty()) throw InputError("generate: empty prompt");
  if (cfg.max_new_tokens < 1) throw ConfigError("generate: max_new_tokens must be >= 1");
  if (static_cast<int64_t>(prompt.size()) > model.config().max_seq_len)
    throw CapacityError("generate: prompt longer than max sequence length");
  validate_plan(plan, model, cfg.start_rung);

  model.set_all_precision(cfg.start_rung);
  KvCache cache = model.make_cache();
  SchedulerState sched(cfg.scheduler, plan.size());
  std::deque<double> forced_window; // telemetry-only window in forced mode
  size_t forced_cursor = 0;

  GenerationResult result;
  uint64_t step_start = now_ns();
  model.reset_step_stats();
  const Tensor prefill_logits = model.forward_prefill(prompt, cache);

  double thre;
  if (cfg.scheduler.threshold_mode == ThresholdMode::Prefill)
    thre = derive_threshold(prefill_logits, cfg.scheduler.window_len, cfg.scheduler.theta);
  else
    thre = cfg.scheduler.theta;
  sched.set_threshold(thre);
  result.threshold = thre;

  Tensor row = prefill_logits.row_copy(prefill_logits.rows() - 1);

  for (int64_t t = 1; t <= cfg.max_new_tokens; ++t) {
    const TokenId token = argmax_token(row);

    TraceRecord rec;
    rec.token_index = t;
    rec.token_id = token;
    rec.fault_tolerance = fault_tolerance(row);
    rec.effective_bits = model.effective_bits();
    rec.buckets = model.step_stats();
    rec.weight_bytes_touched = rec.buckets.weight_bytes;

    const uint64_t ppl_start = now_ns();
    rec.ppl_entropy = ppl_entropy(row);
    rec.ns_ppl = now_ns() - ppl_start;

    // Observe and switch after the token is emitted.
    if (forced_speed > 0) {
      forced_window.push_back(rec.ppl_entropy);
      if (forced_window.size() > static_cast<size_t>(cfg.scheduler.window_len))
        forced_window.pop_front();
      if (forced_window.size() == static_cast<size_t>(cfg.scheduler.window_len)) {
        double sum = 0.0;
        for (double v : forced_window) sum += v;
        rec.moving_average = sum / static_cast<double>(forced_window.size());
      }
      if (t % forced_speed == 0 && forced_cursor < plan.size()) {
        const SwitchEntry& e = plan.entries[forced_cursor++];
        apply_entry(model, e, rec.switch_events);
      }
    } else {
      const SchedulerState::Decision d = sched.observe(rec.ppl_entropy);
      rec.moving_average = d.window_mean;
      for (size_t i = 0; i < d.count; ++i)
        apply_entry(model, plan.entries[d.first_entry + i], rec.switch_events);
    }

    rec.elapsed_ns = now_ns() - step_start;
    result.trace.records.push_back(std::move(rec));
    result.sequence.push_back(token);

    if (cfg.eos_token && token == *cfg.eos_token) break;
    if (t == cfg.max_new_tokens) break;
    if (cache.length() >= model.config().max_seq_len) break; // no room for another position

    step_start = now_ns();
    model.reset_step_stats();
    row = model.forward_decode(token, cache);
  }

  if (!cfg.trace_path.empty()) save_trace_file(result.trace, cfg.trace_path);
  return result;
}

} // namespace

TokenId argmax_token(const Tensor& logits_row) {
  if (logits_row.numel() == 0) throw DimensionError("argmax: empty logits");
  TokenId best = 0;
  float best_v = logits_row.flat(0);
  for (int64_t i = 1; i < logits_row.numel(); ++i) {
    if (logits_row.flat(i) > best_v) {
      best_v = logits_row.flat(i);
      best = static_cast<TokenId>(i);
    }
  }
  return best;
}

GenerationResult generate(std::span<const TokenId> prompt, Model& model, const SwitchPlan& plan,
                          const GenerationConfig& cfg) {
  if (cfg.start_rung == Rung::Int4)
    throw ConfigError("generate: starting rung must be fp or 8");
  return run_generation(prompt, model, plan, cfg, 0);
}

GenerationResult generate_static(std::span<const TokenId> prompt, Model& model, Rung rung,
                                 const GenerationConfig& cfg) {
  GenerationConfig pinned = cfg;
  pinned.start_rung = rung;
  pinned.scheduler.threshold_mode = ThresholdMode::Absolute;
  pinned.scheduler.theta = 0.0; // PPLE >= 1, so the policy can never fire
  return run_generation(prompt, model, SwitchPlan{}, pinned, 0);
}

std::vector<SweepRow> sweep_switch_speed(std::span<const TokenId> prompt, Model& model,
                                         const SwitchPlan& plan, std::span<const int64_t> speeds,
                                         const GenerationConfig& cfg) {
  for (int64_t s : speeds)
    if (s < 1) throw ConfigError("sweep: speeds must be positive");

  const GenerationResult fp_baseline = generate_static(prompt, model, Rung::Fp, cfg);

  std::vector<SweepRow> rows;
  for (int64_t s : speeds) {
    GenerationResult r = run_generation(prompt, model, plan, cfg, s);
    SweepRow row;
    row.speed = s;
    row.final_effective_bits = model.effective_bits();
    double bytes = 0.0;
    for (const TraceRecord& rec : r.trace.records) bytes += rec.weight_bytes_touched;
    row.mean_bytes_per_token = bytes / static_cast<double>(r.trace.records.size());
    const Agreement agr = agreement_rate(r.sequence, fp_baseline.sequence);
    row.agreement_vs_fp = agr.rate;
    row.first_divergence = agr.divergence_index;
    row.rouge_l_vs_fp = rouge_l(r.sequence, fp_baseline.sequence);
    row.trace = std::move(r.trace);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv_header() {
  return "prompt,speed,final_effective_bits,mean_bytes_per_token,agreement_vs_fp,"
         "first_divergence,rouge_l_vs_fp\n";
}

std::string sweep_csv_row(const std::string& prompt_name, const SweepRow& row) {
  char buf[256];
  std::string div = row.first_divergence ? std::to_string(*row.first_divergence) : "";
  std::snprintf(buf, sizeof(buf), "%s,%lld,%.6f,%.3f,%.6f,%s,%.4f\n", prompt_name.c_str(),
                static_cast<long long>(row.speed), row.final_effective_bits,
                row.mean_bytes_per_token, row.agreement_vs_fp, div.c_str(), row.rouge_l_vs_fp);
  return buf;
}

TrafficReport traffic_report(const DecodeTrace& trace) {
  if (trace.records.empty()) throw InputError("traffic_report: empty trace");
  TrafficReport r;
  for (const TraceRecord& rec : trace.records) {
    r.total_weight_bytes += rec.weight_bytes_touched;
    r.ns_fp += rec.buckets.ns_fp;
    r.ns_int8 += rec.buckets.ns_int8;
    r.ns_int4 += rec.buckets.ns_int4;
    const uint64_t linear = rec.buckets.ns_fp + rec.buckets.ns_int8 + rec.buckets.ns_int4;
    r.ns_attention_cache += rec.buckets.ns_forward > linear ? rec.buckets.ns_forward - linear : 0;
    r.ns_ppl += rec.ns_ppl;
    r.ns_total += rec.elapsed_ns;
  }
  r.mean_bytes_per_token = r.total_weight_bytes / static_cast<double>(trace.records.size());
  const uint64_t bucket_sum = r.ns_fp + r.ns_int8 + r.ns_int4 + r.ns_attention_cache + r.ns_ppl;
  r.bucket_sum_over_total =
      r.ns_total > 0 ? static_cast<double>(bucket_sum) / static_cast<double>(r.ns_total) : 0.0;
  r.ppl_share = r.ns_total > 0 ? static_cast<double>(r.ns_ppl) / static_cast<double>(r.ns_total) : 0.0;
  return r;
}

std::string format_traffic_report(const TrafficReport& r) {
  std::ostringstream os;
  os << "total_weight_bytes=" << r.total_weight_bytes << "\n"
     << "mean_bytes_per_token=" << r.mean_bytes_per_token << "\n"
     << "ns_fp=" << r.ns_fp << "\n"
     << "ns_int8=" << r.ns_int8 << "\n"
     << "ns_int4=" << r.ns_int4 << "\n"
     << "ns_attention_cache=" << r.ns_attention_cache << "\n"
     << "ns_ppl=" << r.ns_ppl << "\n"
     << "ns_total=" << r.ns_total << "\n"
     << "bucket_sum_over_total=" << r.bucket_sum_over_total << "\n"
     << "ppl_share=" << r.ppl_share << "\n";
  return os.str();
}

namespace {

json record_to_json(const TraceRecord& rec) {
  json j;
  j["token_index"] = rec.token_index;
  j["token_id"] = rec.token_id;
  j["ppl_entropy"] = rec.ppl_entropy;
  j["fault_tolerance"] = rec.fault_tolerance;
  if (rec.moving_average)
    j["moving_average"] = *rec.moving_average;
  else
    j["moving_average"] = nullptr;
  j["effective_bits"] = rec.effective_bits;
  j["weight_bytes_touched"] = rec.weight_bytes_touched;
  j["elapsed_ns"] = rec.elapsed_ns;
  j["buckets"] = {{"ns_fp", rec.buckets.ns_fp},
                  {"ns_int8", rec.buckets.ns_int8},
                  {"ns_int4", rec.buckets.ns_int4},
                  {"ns_forward", rec.buckets.ns_forward},
                  {"ns_ppl", rec.ns_ppl}};
  if (!rec.switch_events.empty()) {
    json evs = json::array();
    for (const SwitchEvent& ev : rec.switch_events)
      evs.push_back({{"layer_id", ev.layer_id},
                     {"from_bits", to_string(ev.from)},
                     {"to_bits", to_string(ev.to)}});
    j["switch_events"] = std::move(evs);
  }
  return j;
}

TraceRecord record_from_json(const json& j) {
  TraceRecord rec;
  rec.token_index = j.at("token_index").get<int64_t>();
  rec.token_id = j.at("token_id").get<TokenId>();
  rec.ppl_entropy = j.at("ppl_entropy").get<double>();
  rec.fault_tolerance = j.at("fault_tolerance").get<double>();
  if (!j.at("moving_average").is_null()) rec.moving_average = j.at("moving_average").get<double>();
  rec.effective_bits = j.at("effective_bits").get<double>();
  rec.weight_bytes_touched = j.at("weight_bytes_touched").get<double>();
  rec.elapsed_ns = j.at("elapsed_ns").get<uint64_t>();
  if (j.contains("buckets")) {
    const json& b = j.at("buckets");
    rec.buckets.ns_fp = b.value("ns_fp", 0ull);
    rec.buckets.ns_int8 = b.value("ns_int8", 0ull);
    rec.buckets.ns_int4 = b.value("ns_int4", 0ull);
    rec.buckets.ns_forward = b.value("ns_forward", 0ull);
    rec.ns_ppl = b.value("ns_ppl", 0ull);
  }
  rec.buckets.weight_bytes = rec.weight_bytes_touched;
  if (j.contains("switch_events")) {
    for (const json& ev : j.at("switch_events"))
      rec.switch_events.push_back(SwitchEvent{ev.at("layer_id").get<std::string>(),
                                              parse_rung(ev.at("from_bits").get<std::string>()),
                                              parse_rung(ev.at("to_bits").get<std::string>())});
  }
  return rec;
}

} // namespace

void save_trace(const DecodeTrace& trace, std::ostream& os) {
  for (const TraceRecord& rec : trace.records) os << record_to_json(rec).dump() << "\n";
}

void save_trace_file(const DecodeTrace& trace, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open trace file for writing: " + path);
  save_trace(trace, os);
}

DecodeTrace load_trace_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open trace file: " + path);
  DecodeTrace trace;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      trace.records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("trace file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trace;
}

std::string trace_to_csv(const DecodeTrace& trace) {
  std::ostringstream os;
  os << "token_index,token_id,ppl_entropy,fault_tolerance,moving_average,effective_bits,"
        "weight_bytes_touched,elapsed_ns,ns_fp,ns_int8,ns_int4,ns_forward,ns_ppl,switches\n";
  char buf[512];
  for (const TraceRecord& rec : trace.records) {
    std::string avg;
    if (rec.moving_average) {
      std::snprintf(buf, sizeof(buf), "%.17g", *rec.moving_average);
      avg = buf;
    }
    std::string switches;
    for (const SwitchEvent& ev : rec.switch_events) {
      if (!switches.empty()) switches += ';';
      switches += ev.layer_id;
      switches += ':';
      switches += to_string(ev.from);
      switches += "->";
      switches += to_string(ev.to);
    }
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g,%.17g,%s,%.17g,%.17g,%llu,%llu,%llu,%llu,%llu,%llu,%s\n",
                  static_cast<long long>(rec.token_index), rec.token_id, rec.ppl_entropy,
                  rec.fault_tolerance, avg.c_str(), rec.effective_bits, rec.weight_bytes_touched,
                  static_cast<unsigned long long>(rec.elapsed_ns),
                  static_cast<unsigned long long>(rec.buckets.ns_fp),
                  static_cast<unsigned long long>(rec.buckets.ns_int8),
                  static_cast<unsigned long long>(rec.buckets.ns_int4),
                  static_cast<unsigned long long>(rec.buckets.ns_forward),
                  static_cast<unsigned long long>(rec.ns_ppl), switches.c_str());
    os << buf;
  }
  return os.str();
}

} // namespace flexquant
