// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "flexquant/analyzer.hpp"
#include "flexquant/fixture.hpp"
#include "flexquant/model.hpp"

using namespace flexquant;

namespace {

// Naive counting oracle: linear scan over the edges per element.
std::vector<double> counting_oracle(const Tensor& w, const std::vector<double>& edges) {
  const size_t bins = edges.size() - 1;
  std::vector<double> counts(bins, 0.0);
  for (int64_t i = 0; i < w.numel(); ++i) {
    double v = w.flat(i);
    v = std::max(v, edges.front());
    v = std::min(v, edges.back());
    size_t b = bins - 1;
    for (size_t j = 0; j + 1 < edges.size(); ++j) {
      if (v >= edges[j] && (v < edges[j + 1] || j == bins - 1)) {
        b = j;
        break;
      }
    }
    counts[b] += 1.0;
  }
  double total = 0.0;
  for (double& c : counts) {
    c += 1e-10;
    total += c;
  }
  for (double& c : counts) c /= total;
  return counts;
}

double kl_oracle_longdouble(const std::vector<double>& p, const std::vector<double>& q) {
  long double kl = 0.0L;
  for (size_t i = 0; i < p.size(); ++i)
    kl += static_cast<long double>(p[i]) * logl(static_cast<long double>(p[i]) / q[i]);
  return static_cast<double>(kl);
}

// Independent per-layer divergence computation used to cross-check
// analyze_model: same definition, separate code path.
double scalar_layer_kl(const MultiPrecisionLayer& layer, Rung target, int bins) {
  const Tensor& w = layer.fp_weight();
  float lo = w.flat(0), hi = w.flat(0);
  for (int64_t i = 1; i < w.numel(); ++i) {
    lo = std::min(lo, w.flat(i));
    hi = std::max(hi, w.flat(i));
  }
  // Shares the edge definition with the implementation; counting,
  // smoothing and the divergence itself are computed independently.
  const std::vector<double> edges = uniform_edges(lo, hi, bins);
  const std::vector<double> p = counting_oracle(w, edges);
  const std::vector<double> q = counting_oracle(dequantize(layer.quantized(target)), edges);
  return kl_oracle_longdouble(p, q);
}

} // namespace

TEST_CASE("histogram single bin") {
  const Tensor w = Tensor::from_data({1}, {0.5f});
  const std::vector<double> edges{0.0, 1.0};
  const std::vector<double> h = weight_histogram(w, edges);
  REQUIRE(h.size() == 1);
  CHECK(h[0] == 1.0);
}

TEST_CASE("histogram splits balanced mass evenly") {
  std::vector<float> vals;
  for (int i = 0; i < 100; ++i) vals.push_back(i < 50 ? 0.25f : 0.75f);
  const Tensor w = Tensor::from_data({100}, vals);
  const std::vector<double> h = weight_histogram(w, std::vector<double>{0.0, 0.5, 1.0});
  CHECK(h[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(h[1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("histogram matches counting oracle bin by bin") {
  std::mt19937_64 rng(71);
  for (int it = 0; it < 20; ++it) {
    Tensor w({64});
    for (int64_t i = 0; i < 64; ++i) w.flat(i) = uniform_signed(rng, 2.0f);
    const int bins = 2 + int(rng() % 40);
    const std::vector<double> edges = uniform_edges(-2.0, 2.0, bins);
    const std::vector<double> got = weight_histogram(w, edges);
    const std::vector<double> want = counting_oracle(w, edges);
    double sum = 0.0;
    for (size_t b = 0; b < got.size(); ++b) {
      CHECK(std::fabs(got[b] - want[b]) <= 1e-12);
      sum += got[b];
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("histogram rejects bad input") {
  CHECK_THROWS_AS(weight_histogram(Tensor({0}), std::vector<double>{0.0, 1.0}), InputError);
  CHECK_THROWS_AS(weight_histogram(Tensor::from_data({1}, {0.5f}), std::vector<double>{1.0, 0.0}),
                  InputError);
}

TEST_CASE("kl of identical distributions is zero") {
  const std::vector<double> p{0.25, 0.25, 0.5};
  CHECK(std::fabs(kl_divergence(p, p)) <= 1e-12);
}

TEST_CASE("kl of near-disjoint distributions matches direct evaluation") {
  const double eps = 1e-9;
  const std::vector<double> p{1.0 - eps, eps};
  const std::vector<double> q{eps, 1.0 - eps};
  const double got = kl_divergence(p, q);
  const double want = kl_oracle_longdouble(p, q);
  CHECK(got > 10.0);
  CHECK(std::fabs(got - want) <= 1e-9);
}

TEST_CASE("kl closed-form hand example") {
  const double got = kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.25, 0.75});
  const double want = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(std::fabs(got - want) <= 1e-12);
  CHECK(got == doctest::Approx(0.14384).epsilon(1e-4));
}

TEST_CASE("kl nonnegativity on random distributions") {
  std::mt19937_64 rng(73);
  for (int it = 0; it < 200; ++it) {
    const size_t n = 2 + rng() % 64;
    std::vector<double> p(n), q(n);
    double sp = 0.0, sq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      p[i] = 1e-6 + double(rng() % 1000);
      q[i] = 1e-6 + double(rng() % 1000);
      sp += p[i];
      sq += q[i];
    }
    for (size_t i = 0; i < n; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    CHECK(kl_divergence(p, q) >= -1e-12);
  }
}

TEST_CASE("kl input validation") {
  CHECK_THROWS_AS(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}),
                  DimensionError);
  CHECK_THROWS_AS(kl_divergence(std::vector<double>{0.7, 0.7}, std::vector<double>{0.5, 0.5}),
                  InputError);
  CHECK_THROWS_AS(kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}),
                  InputError);
}

TEST_CASE("grid-exact layers have (near) zero divergence") {
  const Model model = make_grid_exact_model(micro_config(), 3);
  for (const LayerKlReport& r : analyze_model(model, Rung::Int8, 256))
    CHECK(r.kl <= 1e-9);
}

TEST_CASE("4-bit divergence dominates 8-bit divergence per layer") {
  const Model model = make_fixture_model(micro_config(), 5);
  const std::vector<LayerKlReport> r8 = analyze_model(model, Rung::Int8, 512);
  const std::vector<LayerKlReport> r4 = analyze_model(model, Rung::Int4, 512);
  REQUIRE(r8.size() == r4.size());
  for (size_t i = 0; i < r8.size(); ++i) {
    CHECK(r8[i].layer_id == r4[i].layer_id);
    CHECK(r4[i].kl >= r8[i].kl);
  }
}

TEST_CASE("analyze_model matches an independent scalar computation") {
  ModelConfig cfg = micro_config();
  const Model model = make_fixture_model(cfg, 9);
  const int bins = 128;
  const std::vector<LayerKlReport> reports = analyze_model(model, Rung::Int4, bins);
  REQUIRE(reports.size() == model.linear_layers().size());
  for (const LayerKlReport& r : reports) {
    const MultiPrecisionLayer* layer = model.find_layer(r.layer_id);
    REQUIRE(layer != nullptr);
    const double want = scalar_layer_kl(*layer, Rung::Int4, bins);
    CHECK(r.kl == doctest::Approx(want).epsilon(1e-9));
    CHECK(r.param_count == layer->param_count());
  }
}

TEST_CASE("analysis is deterministic") {
  const Model model = make_fixture_model(micro_config(), 5);
  const SwitchPlan a = build_ladder_plan(model, std::vector<Rung>{Rung::Int8, Rung::Int4}, 128);
  const SwitchPlan b = build_ladder_plan(model, std::vector<Rung>{Rung::Int8, Rung::Int4}, 128);
  CHECK(a == b);
}

TEST_CASE("switch plan ordering") {
  std::vector<LayerKlReport> reports{
      {"layer1", Rung::Int4, 0.3, 10},
      {"layer2", Rung::Int4, 0.1, 10},
      {"layer3", Rung::Int4, 0.2, 10},
  };
  const SwitchPlan plan = build_switch_plan(reports, Rung::Int8, Rung::Int4);
  REQUIRE(plan.size() == 3);
  CHECK(plan.entries[0].layer_id == "layer2");
  CHECK(plan.entries[1].layer_id == "layer3");
  CHECK(plan.entries[2].layer_id == "layer1");
  CHECK(plan.entries[0].from == Rung::Int8);
  CHECK(plan.entries[0].to == Rung::Int4);
}

TEST_CASE("switch plan ties break lexicographically") {
  std::vector<LayerKlReport> reports{
      {"beta", Rung::Int4, 0.5, 10},
      {"alpha", Rung::Int4, 0.5, 10},
  };
  const SwitchPlan plan = build_switch_plan(reports, Rung::Int8, Rung::Int4);
  CHECK(plan.entries[0].layer_id == "alpha");
  CHECK(plan.entries[1].layer_id == "beta");
}

TEST_CASE("switch plan rejects duplicates and empties") {
  std::vector<LayerKlReport> dup{
      {"a", Rung::Int4, 0.5, 10},
      {"a", Rung::Int4, 0.6, 10},
  };
  CHECK_THROWS_AS(build_switch_plan(dup, Rung::Int8, Rung::Int4), InputError);
  CHECK_THROWS_AS(build_switch_plan(std::vector<LayerKlReport>{}, Rung::Int8, Rung::Int4),
                  InputError);
}

TEST_CASE("plan file round-trip is identity") {
  SwitchPlan plan;
  plan.entries = {
      {"blocks.0.attn.wq", Rung::Fp, Rung::Int8, 0.12345678901234567},
      {"blocks.1.ffn.w2", Rung::Int8, Rung::Int4, 3.9e-5},
      {"head", Rung::Int8, Rung::Int4, 7.0},
  };
  std::stringstream ss;
  save_plan(plan, ss);
  const SwitchPlan back = load_plan(ss);
  CHECK(back == plan);
}

TEST_CASE("plan file rejects bad headers and records") {
  {
    std::stringstream ss("not-a-plan\n");
    CHECK_THROWS_AS(load_plan(ss), FormatError);
  }
  {
    std::stringstream ss("flexquant-plan v1\nbogus line\n");
    CHECK_THROWS_AS(load_plan(ss), FormatError);
  }
  {
    std::stringstream ss("flexquant-plan v1\nentry layer_id=a from=fp kl=1\n");
    CHECK_THROWS_AS(load_plan(ss), FormatError);
  }
}
