// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "flexquant/model.hpp"
#include "flexquant/tensor.hpp"

namespace flexquant {

// exp of the mean negative log-likelihood of stream[i] under the row of
// `logits` at position i-1 (teacher forcing). logits must have at least
// len(stream)-1 rows; probabilities are floored at 1e-12 with a warning.
double perplexity_from_logits(const Tensor& logits, std::span<const TokenId> stream);

// Teacher-forced corpus perplexity of the model over a token stream at
// its current precision state. Requires stream length >= 2.
double corpus_perplexity(const Model& model, std::span<const TokenId> stream);

// Rouge-L F-measure over token ids, scaled to [0, 100].
double rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference);

// Longest common subsequence length (dynamic programming).
int64_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

struct Agreement {
  double rate = 0.0;                      // equal positions / compared positions
  std::optional<size_t> divergence_index; // first differing position, if any
};

// Position-wise agreement over the common prefix length. If one sequence
// is a strict prefix of the other, the divergence index is that length.
Agreement agreement_rate(std::span<const TokenId> a, std::span<const TokenId> b);

// Aggregated evaluation summary, serialized by the eval CLI.
struct EvalReport {
  double effective_bits_final = 0.0;
  double effective_bits_mean = 0.0;
  double rouge_l = 0.0;
  double agreement_rate = 0.0;
  double perplexity = 0.0;
  double bytes_per_token_mean = 0.0;
};

std::string format_eval_report(const EvalReport& r);

} // namespace flexquant
