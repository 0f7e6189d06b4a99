// SPDX-License-Identifier: Apache-2.0
#include "flexquant/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <vector>

namespace flexquant {

double perplexity_from_logits(const Tensor& logits, std::span<const TokenId> stream) {
  if (stream.size() < 2) throw InputError("perplexity: stream must contain at least two tokens");
  const int64_t predicted = static_cast<int64_t>(stream.size()) - 1;
  if (logits.rows() < predicted) throw DimensionError("perplexity: not enough logits rows");

  const int64_t v = logits.cols();
  double nll = 0.0;
  for (int64_t i = 0; i < predicted; ++i) {
    const TokenId next = stream[static_cast<size_t>(i + 1)];
    if (next < 0 || next >= v) throw InputError("perplexity: token id out of vocabulary");
    // log-probability via a double log-sum-exp over the row
    const float* row = logits.row(i);
    double mx = row[0];
    for (int64_t c = 1; c < v; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double sum = 0.0;
    for (int64_t c = 0; c < v; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
    double prob = std::exp(static_cast<double>(row[next]) - mx) / sum;
    if (prob < 1e-12) {
      std::cerr << "warning: perplexity probability floored at 1e-12 (position " << i << ")\n";
      prob = 1e-12;
    }
    nll -= std::log(prob);
  }
  return std::exp(nll / static_cast<double>(predicted));
}

double corpus_perplexity(const Model& model, std::span<const TokenId> stream) {
  if (stream.size() < 2) throw InputError("corpus_perplexity: stream must contain at least two tokens");
  KvCache cache = model.make_cache();
  const Tensor logits = model.forward_prefill(stream, cache);
  return perplexity_from_logits(logits, stream);
}

int64_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  if (candidate.empty() || reference.empty()) throw InputError("rouge_l: empty sequence");
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double recall = lcs / static_cast<double>(reference.size());
  const double precision = lcs / static_cast<double>(candidate.size());
  return 100.0 * (2.0 * recall * precision) / (recall + precision);
}

Agreement agreement_rate(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.empty() && b.empty()) throw InputError("agreement_rate: both sequences empty");
  const size_t n = std::min(a.size(), b.size());
  Agreement out;
  size_t equal = 0;
  for (size_t i = 0; i < n; ++i) {
    if (a[i] == b[i]) {
      ++equal;
    } else if (!out.divergence_index) {
      out.divergence_index = i;
    }
  }
  if (!out.divergence_index && a.size() != b.size()) out.divergence_index = n;
  out.rate = n > 0 ? static_cast<double>(equal) / static_cast<double>(n) : 0.0;
  return out;
}

std::string format_eval_report(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "flexquant-eval v1\n"
                "effective_bits_final=%.6f\n"
                "effective_bits_mean=%.6f\n"
                "rouge_l=%.4f\n"
                "agreement_rate=%.6f\n"
                "perplexity=%.6f\n"
                "bytes_per_token_mean=%.3f\n",
                r.effective_bits_final, r.effective_bits_mean, r.rouge_l, r.agreement_rate,
                r.perplexity, r.bytes_per_token_mean);
  return buf;
}

} // namespace flexquant
