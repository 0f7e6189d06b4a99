// SPDX-License-Identifier: Apache-2.0
#include "flexquant/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <set>
#include <sstream>

#include "flexquant/model.hpp"

namespace flexquant {

std::vector<double> uniform_edges(double lo, double hi, int bins) {
  if (bins < 1) throw InputError("uniform_edges: need at least one bin");
  if (!(hi > lo)) {
    // Degenerate range: pad so the edges stay strictly increasing.
    lo -= 0.5;
    hi += 0.5;
  }
  std::vector<double> edges(static_cast<size_t>(bins) + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (int i = 0; i <= bins; ++i) edges[static_cast<size_t>(i)] = lo + width * i;
  edges.back() = hi;
  return edges;
}

std::vector<double> weight_histogram(const Tensor& w, std::span<const double> edges) {
  if (w.numel() == 0) throw InputError("weight_histogram: empty tensor");
  if (edges.size() < 2) throw InputError("weight_histogram: need at least two edges");
  for (size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw InputError("weight_histogram: edges must be strictly increasing");

  const size_t bins = edges.size() - 1;
  std::vector<double> counts(bins, 0.0);
  for (int64_t i = 0; i < w.numel(); ++i) {
    const double v = w.flat(i);
    // Bin b holds [edges[b], edges[b+1]); the last bin is closed. Values
    // outside the range are clamped into the boundary bins. upper_bound
    // keeps the assignment purely comparison-based.
    size_t b;
    if (v < edges[1]) {
      b = 0;
    } else if (v >= edges[bins - 1]) {
      b = bins - 1;
    } else {
      const auto it = std::upper_bound(edges.begin(), edges.end(), v);
      b = static_cast<size_t>(it - edges.begin()) - 1;
    }
    counts[b] += 1.0;
  }

  double total = 0.0;
  for (double& c : counts) {
    c += kHistogramSmoothing;
    total += c;
  }
  for (double& c : counts) c /= total;
  return counts;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
  double sp = 0.0, sq = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0) || !(q[i] > 0.0))
      throw InputError("kl_divergence: entries must be strictly positive");
    sp += p[i];
    sq += q[i];
  }
  if (std::fabs(sp - 1.0) > 1e-6 || std::fabs(sq - 1.0) > 1e-6)
    throw InputError("kl_divergence: inputs must sum to 1");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

namespace {

double layer_kl(const MultiPrecisionLayer& layer, Rung target, int bins) {
  const Tensor& w = layer.fp_weight();
  float lo = w.flat(0), hi = w.flat(0);
  for (int64_t i = 1; i < w.numel(); ++i) {
    lo = std::min(lo, w.flat(i));
    hi = std::max(hi, w.flat(i));
  }
  const std::vector<double> edges = uniform_edges(lo, hi, bins);
  const std::vector<double> p = weight_histogram(w, edges);
  const std::vector<double> q = weight_histogram(dequantize(layer.quantized(target)), edges);
  return kl_divergence(p, q);
}

} // namespace

std::vector<LayerKlReport> analyze_model(const Model& model, Rung target_bits, int bins) {
  if (bins < 2) throw InputError("analyze_model: need at least two bins");
  if (target_bits == Rung::Fp) throw ConfigError("analyze_model: target must be a quantized rung");

  const std::vector<const MultiPrecisionLayer*> layers = model.linear_layers();
  std::vector<LayerKlReport> reports;
  std::vector<std::future<double>> pending(layers.size());

  for (size_t i = 0; i < layers.size(); ++i) {
    const MultiPrecisionLayer* l = layers[i];
    if (l->param_count() == 0) {
      std::cerr << "warning: skipping zero-parameter layer '" << l->id() << "'\n";
      continue;
    }
    pending[i] = std::async(std::launch::async, [l, target_bits, bins] {
      return layer_kl(*l, target_bits, bins);
    });
  }
  for (size_t i = 0; i < layers.size(); ++i) {
    if (!pending[i].valid()) continue;
    reports.push_back(LayerKlReport{layers[i]->id(), target_bits, pending[i].get(),
                                    layers[i]->param_count()});
  }
  return reports;
}

SwitchPlan build_switch_plan(std::span<const LayerKlReport> reports, Rung from_bits, Rung to_bits) {
  if (reports.empty()) throw InputError("build_switch_plan: no reports");
  std::set<std::string> seen;
  SwitchPlan plan;
  plan.entries.reserve(reports.size());
  for (const LayerKlReport& r : reports) {
    if (!seen.insert(r.layer_id).second)
      throw InputError("build_switch_plan: duplicate layer id '" + r.layer_id + "'");
    plan.entries.push_back(SwitchEntry{r.layer_id, from_bits, to_bits, r.kl});
  }
  std::sort(plan.entries.begin(), plan.entries.end(), [](const SwitchEntry& a, const SwitchEntry& b) {
    if (a.kl != b.kl) return a.kl < b.kl;
    return a.layer_id < b.layer_id;
  });
  return plan;
}

SwitchPlan build_ladder_plan(const Model& model, std::span<const Rung> rungs, int bins) {
  if (rungs.empty()) throw InputError("build_ladder_plan: no target rungs");
  SwitchPlan ladder;
  Rung from = Rung::Fp;
  for (Rung to : rungs) {
    if (!is_downward(from, to))
      throw ConfigError(std::string("build_ladder_plan: rung sequence must descend, got '") +
                        to_string(from) + "' -> '" + to_string(to) + "'");
    const std::vector<LayerKlReport> reports = analyze_model(model, to, bins);
    SwitchPlan step = build_switch_plan(reports, from, to);
    ladder.entries.insert(ladder.entries.end(), step.entries.begin(), step.entries.end());
    from = to;
  }
  return ladder;
}

void save_plan(const SwitchPlan& plan, std::ostream& os) {
  os << "flexquant-plan v1\n";
  char buf[64];
  for (const SwitchEntry& e : plan.entries) {
    std::snprintf(buf, sizeof(buf), "%.17g", e.kl);
    os << "entry layer_id=" << e.layer_id << " from=" << to_string(e.from)
       << " to=" << to_string(e.to) << " kl=" << buf << "\n";
  }
}

void save_plan_file(const SwitchPlan& plan, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open plan file for writing: " + path);
  save_plan(plan, os);
}

namespace {

std::string expect_kv(std::istringstream& is, const std::string& key, const std::string& line) {
  std::string tok;
  if (!(is >> tok) || tok.rfind(key + "=", 0) != 0)
    throw FormatError("plan entry missing '" + key + "': " + line);
  return tok.substr(key.size() + 1);
}

} // namespace

SwitchPlan load_plan(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "flexquant-plan v1")
    throw FormatError("plan file: bad or missing header");
  SwitchPlan plan;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "entry") throw FormatError("plan file: unexpected record '" + line + "'");
    SwitchEntry e;
    e.layer_id = expect_kv(ls, "layer_id", line);
    e.from = parse_rung(expect_kv(ls, "from", line));
    e.to = parse_rung(expect_kv(ls, "to", line));
    try {
      e.kl = std::stod(expect_kv(ls, "kl", line));
    } catch (const std::exception&) {
      throw FormatError("plan file: bad kl value in '" + line + "'");
    }
    plan.entries.push_back(std::move(e));
  }
  return plan;
}

SwitchPlan load_plan_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open plan file: " + path);
  return load_plan(is);
}

} // namespace flexquant
