// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "flexquant/fixture.hpp"
#include "flexquant/scheduler.hpp"

using namespace flexquant;

namespace {

Tensor logits_from_probs(const std::vector<double>& probs) {
  Tensor t({int64_t(probs.size())});
  for (size_t i = 0; i < probs.size(); ++i) t.flat(int64_t(i)) = float(std::log(probs[i]));
  return t;
}

double ppl_oracle_longdouble(const Tensor& logits) {
  long double mx = logits.flat(0);
  for (int64_t i = 1; i < logits.numel(); ++i) mx = std::max<long double>(mx, logits.flat(i));
  long double sum = 0.0L;
  for (int64_t i = 0; i < logits.numel(); ++i) sum += expl((long double)logits.flat(i) - mx);
  long double h = 0.0L;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const long double p = expl((long double)logits.flat(i) - mx) / sum;
    if (p > 0.0L) h -= p * logl(p);
  }
  return double(expl(h));
}

} // namespace

TEST_CASE("ppl_entropy of uniform logits equals vocabulary size") {
  for (int64_t v : {2, 50, 256}) {
    const Tensor logits({v});
    CHECK(std::fabs(ppl_entropy(logits) - double(v)) <= 1e-9 * double(v));
  }
}

TEST_CASE("ppl_entropy of a dominated distribution is one") {
  Tensor logits({8});
  logits.flat(3) = 1000.0f;
  CHECK(std::fabs(ppl_entropy(logits) - 1.0) <= 1e-6);
}

TEST_CASE("ppl_entropy hand example") {
  const Tensor logits = logits_from_probs({0.7, 0.2, 0.1});
  const double want = ppl_oracle_longdouble(logits);
  CHECK(std::fabs(ppl_entropy(logits) - want) <= 1e-9);
  // exp(-(0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1))
  CHECK(ppl_entropy(logits) == doctest::Approx(2.2295918739204163).epsilon(1e-7));
}

TEST_CASE("ppl_entropy stays within [1, V]") {
  std::mt19937_64 rng(79);
  for (int it = 0; it < 200; ++it) {
    const int64_t v = 2 + int64_t(rng() % 100);
    Tensor logits({v});
    for (int64_t i = 0; i < v; ++i) logits.flat(i) = uniform_signed(rng, 20.0f);
    const double p = ppl_entropy(logits);
    CHECK(p >= 1.0 - 1e-9);
    CHECK(p <= double(v) * (1.0 + 1e-9));
  }
}

TEST_CASE("ppl_entropy invariant to constant logit shifts") {
  // Grid-valued logits with integer shifts keep x + shift exact in float.
  std::mt19937_64 rng(83);
  for (int it = 0; it < 100; ++it) {
    Tensor a({32});
    for (int64_t i = 0; i < 32; ++i) a.flat(i) = float(int64_t(rng() % 1024)) / 64.0f - 8.0f;
    Tensor b = a;
    const float shift = float(int64_t(rng() % 161)) - 80.0f;
    for (int64_t i = 0; i < 32; ++i) b.flat(i) += shift;
    CHECK(std::fabs(ppl_entropy(a) - ppl_entropy(b)) <= 1e-7 * ppl_entropy(a));
  }
}

TEST_CASE("mean-preserving spread never decreases ppl_entropy") {
  std::mt19937_64 rng(89);
  for (int it = 0; it < 100; ++it) {
    const size_t v = 4 + rng() % 16;
    std::vector<double> p(v);
    double sum = 0.0;
    for (double& x : p) {
      x = 0.05 + double(rng() % 1000);
      sum += x;
    }
    for (double& x : p) x /= sum;
    size_t imax = 0, imin = 0;
    for (size_t i = 1; i < v; ++i) {
      if (p[i] > p[imax]) imax = i;
      if (p[i] < p[imin]) imin = i;
    }
    if (imax == imin) continue;
    const double before = ppl_entropy(logits_from_probs(p));
    const double delta = 0.25 * (p[imax] - p[imin]);
    p[imax] -= delta;
    p[imin] += delta;
    const double after = ppl_entropy(logits_from_probs(p));
    CHECK(after >= before - 1e-9);
  }
}

TEST_CASE("fault_tolerance hand examples") {
  CHECK(std::fabs(fault_tolerance(logits_from_probs({0.7, 0.2, 0.1})) - 0.5) <= 1e-7);
  CHECK(std::fabs(fault_tolerance(Tensor({16}))) <= 1e-9); // uniform
}

TEST_CASE("fault_tolerance matches a full-sort oracle") {
  std::mt19937_64 rng(97);
  for (int it = 0; it < 100; ++it) {
    Tensor logits({40});
    for (int64_t i = 0; i < 40; ++i) logits.flat(i) = uniform_signed(rng, 6.0f);
    // Full-sort oracle over an independently computed distribution.
    long double mx = logits.flat(0);
    for (int64_t i = 1; i < 40; ++i) mx = std::max<long double>(mx, logits.flat(i));
    long double z = 0.0L;
    for (int64_t i = 0; i < 40; ++i) z += expl((long double)logits.flat(i) - mx);
    std::vector<long double> sorted;
    for (int64_t i = 0; i < 40; ++i) sorted.push_back(expl((long double)logits.flat(i) - mx) / z);
    std::sort(sorted.rbegin(), sorted.rend());
    CHECK(std::fabs(fault_tolerance(logits) - double(sorted[0] - sorted[1])) <= 1e-9);
  }
}

TEST_CASE("fault_tolerance needs two entries") {
  CHECK_THROWS_AS(fault_tolerance(Tensor({1})), InputError);
}

TEST_CASE("derive_threshold") {
  SUBCASE("constant rows yield the single row value") {
    Tensor logits({4, 8});
    for (int64_t r = 0; r < 4; ++r)
      for (int64_t c = 0; c < 8; ++c) logits.at(r, c) = float(c);
    const double one = ppl_entropy(logits.row_copy(0));
    CHECK(derive_threshold(logits, 20, 1.0) == doctest::Approx(one).epsilon(1e-12));
  }
  SUBCASE("theta zero disables switching") {
    Tensor logits({2, 4});
    CHECK(derive_threshold(logits, 20, 0.0) == 0.0);
  }
  SUBCASE("mean of known row values") {
    // Row 0: uniform over 4 -> PPLE 4. Row 1: two live logits -> PPLE 2.
    Tensor logits({2, 4});
    logits.at(1, 2) = -10000.0f;
    logits.at(1, 3) = -10000.0f;
    CHECK(derive_threshold(logits, 20, 1.0) == doctest::Approx(3.0).epsilon(1e-6));
  }
  SUBCASE("only the trailing window rows count") {
    Tensor logits({3, 4});
    logits.at(0, 0) = 500.0f; // would give PPLE 1 if included
    CHECK(derive_threshold(logits, 2, 1.0) == doctest::Approx(4.0).epsilon(1e-6));
  }
  SUBCASE("empty prefill throws") {
    CHECK_THROWS_AS(derive_threshold(Tensor{}, 20, 1.0), StateError);
  }
}

namespace {

// Hand-written reference state machine, structured differently from the
// implementation (explicit counters, no deque).
struct ReplaySim {
  int w;
  double thre;
  size_t plan_len;
  std::vector<double> buf;
  int cooldown = 0;
  size_t cursor = 0;

  // returns true if a switch fires at this observation
  bool step(double v) {
    buf.push_back(v);
    if (int(buf.size()) > w) buf.erase(buf.begin());
    if (cooldown > 0) cooldown--;
    if (int(buf.size()) < w || cooldown > 0 || cursor >= plan_len) return false;
    double mean = 0.0;
    for (double x : buf) mean += x;
    mean /= double(w);
    if (!(mean < thre)) return false;
    cursor++;
    buf.clear();
    cooldown = w;
    return true;
  }
};

} // namespace

TEST_CASE("window must fill before the first switch") {
  SchedulerConfig cfg;
  cfg.window_len = 20;
  SchedulerState st(cfg, 10);
  st.set_threshold(5.0);
  for (int i = 1; i <= 19; ++i) {
    CHECK(st.observe(5.0 - 1e-6).count == 0);
    CHECK(!st.moving_average().has_value());
  }
  const auto d = st.observe(5.0 - 1e-6);
  CHECK(d.count == 1);
  CHECK(d.first_entry == 0);
  CHECK(d.window_mean.has_value());
}

TEST_CASE("values exactly at the threshold never trigger") {
  SchedulerConfig cfg;
  cfg.window_len = 5;
  SchedulerState st(cfg, 10);
  st.set_threshold(3.0);
  for (int i = 0; i < 50; ++i) CHECK(st.observe(3.0).count == 0);
  CHECK(st.plan_cursor() == 0);
}

TEST_CASE("cooldown and window refill gate the second switch") {
  SchedulerConfig cfg;
  cfg.window_len = 20;
  SchedulerState st(cfg, 10);
  st.set_threshold(10.0);
  for (int i = 0; i < 19; ++i) CHECK(st.observe(1.0).count == 0);
  CHECK(st.observe(1.0).count == 1); // 20th observation switches
  for (int i = 0; i < 19; ++i) CHECK(st.observe(1.0).count == 0);
  CHECK(st.observe(1.0).count == 1); // 20th post-switch observation
}

TEST_CASE("replay against the reference state machine") {
  std::mt19937_64 rng(101);
  for (int it = 0; it < 20; ++it) {
    SchedulerConfig cfg;
    cfg.window_len = 1 + int(rng() % 8);
    const double thre = 2.0 + double(rng() % 5);
    const size_t plan_len = rng() % 6;
    SchedulerState st(cfg, plan_len);
    st.set_threshold(thre);
    ReplaySim sim{cfg.window_len, thre, plan_len, {}, 0, 0};
    for (int i = 0; i < 300; ++i) {
      const double v = 1.0 + double(rng() % 500) / 100.0;
      const bool got = st.observe(v).count > 0;
      const bool want = sim.step(v);
      CHECK(got == want);
      CHECK(st.plan_cursor() == sim.cursor);
    }
  }
}

TEST_CASE("identical streams yield identical decision sequences") {
  std::mt19937_64 rng(103);
  std::vector<double> stream;
  for (int i = 0; i < 200; ++i) stream.push_back(1.0 + double(rng() % 300) / 50.0);
  SchedulerConfig cfg;
  cfg.window_len = 7;
  SchedulerState a(cfg, 12), b(cfg, 12);
  a.set_threshold(4.0);
  b.set_threshold(4.0);
  for (double v : stream) {
    const auto da = a.observe(v);
    const auto db = b.observe(v);
    CHECK(da.count == db.count);
    CHECK(da.first_entry == db.first_entry);
    CHECK(da.window_mean == db.window_mean);
  }
}

TEST_CASE("multiple entries per trigger") {
  SchedulerConfig cfg;
  cfg.window_len = 3;
  cfg.layers_per_switch = 4;
  SchedulerState st(cfg, 10);
  st.set_threshold(100.0);
  st.observe(1.0);
  st.observe(1.0);
  const auto d1 = st.observe(1.0); // window full on the 3rd observation
  CHECK(d1.count == 4);
  CHECK(st.plan_cursor() == 4);
  st.observe(1.0);
  st.observe(1.0);
  const auto d2 = st.observe(1.0); // 3rd post-switch observation fires again
  CHECK(d2.count == 4);
  CHECK(st.plan_cursor() == 8);
  st.observe(1.0);
  st.observe(1.0);
  const auto d3 = st.observe(1.0); // only two entries remain
  CHECK(d3.count == 2);
  CHECK(st.plan_cursor() == 10);
  st.observe(1.0);
  st.observe(1.0);
  CHECK(st.observe(1.0).count == 0); // plan exhausted
}

TEST_CASE("observe before threshold derivation throws") {
  SchedulerState st(SchedulerConfig{}, 5);
  CHECK_THROWS_AS(st.observe(2.0), StateError);
}
