// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "flexquant/quantizer.hpp"
#include "flexquant/rung.hpp"
#include "flexquant/tensor.hpp"

namespace flexquant {

class Model;

// Divergence of one linear layer's weight distribution under quantization
// to a target bit-width.
struct LayerKlReport {
  std::string layer_id;
  Rung bits = Rung::Int8;
  double kl = 0.0;
  int64_t param_count = 0;
};

// One precision transition of one linear layer.
struct SwitchEntry {
  std::string layer_id;
  Rung from = Rung::Fp;
  Rung to = Rung::Int8;
  double kl = 0.0;

  bool operator==(const SwitchEntry&) const = default;
};

// Ordered list of layer transitions the engine walks during decoding.
// Within one (from -> to) transition, entries are sorted by KL ascending,
// ties broken by layer_id, so the least-disturbed layers step down first.
struct SwitchPlan {
  std::vector<SwitchEntry> entries;

  size_t size() const { return entries.size(); }
  bool operator==(const SwitchPlan&) const = default;
};

// Default bin count used by analyze_model and the analyze CLI.
inline constexpr int kDefaultHistogramBins = 2048;

// Additive smoothing applied to every histogram bin before normalization.
inline constexpr double kHistogramSmoothing = 1e-10;

// Normalized histogram of w over the given bin edges. Bin i covers
// [edges[i], edges[i+1]); the last bin is closed on the right. Values
// outside the edge range are clamped into the boundary bins. Every bin
// receives kHistogramSmoothing additive mass, then the vector is
// renormalized to sum 1.
std::vector<double> weight_histogram(const Tensor& w, std::span<const double> edges);

// Uniform bin edges: bins+1 values spanning [lo, hi].
std::vector<double> uniform_edges(double lo, double hi, int bins);

// KL(p || q) in nats. Both vectors must have equal length, sum to 1
// within 1e-6, and be strictly positive.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Per-layer KL between the full-precision weight histogram and the
// histogram of its dequantized rung at target_bits, over shared bin
// edges spanning the full-precision range. Layers with zero parameters
// are skipped with a warning.
std::vector<LayerKlReport> analyze_model(const Model& model, Rung target_bits, int bins);

// Sorts reports into a plan for a single (from -> to) transition.
// Throws InputError on an empty report list or duplicate layer ids.
SwitchPlan build_switch_plan(std::span<const LayerKlReport> reports, Rung from_bits, Rung to_bits);

// Full precision ladder: one transition per consecutive pair of
// fp -> rungs[0] -> rungs[1] -> ..., each KL-ordered independently.
SwitchPlan build_ladder_plan(const Model& model, std::span<const Rung> rungs, int bins);

// Plan file, human-readable, versioned "flexquant-plan v1".
void save_plan(const SwitchPlan& plan, std::ostream& os);
void save_plan_file(const SwitchPlan& plan, const std::string& path);
SwitchPlan load_plan(std::istream& is);
SwitchPlan load_plan_file(const std::string& path);

} // namespace flexquant
