// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flexquant/model.hpp"

namespace flexquant {

// Seeded pseudo-random models used by tests, the acceptance suite and
// the make-fixture CLI. Byte-level vocabulary (V = 256) throughout so
// any text prompt is a valid token stream.

// 4-block model: d_model 64, 4 heads, ffn 128, max_seq_len 512.
ModelConfig tiny_config();

// 2-block model for long-schedule and brute-force comparisons:
// d_model 32, 2 heads, ffn 64, max_seq_len 1280.
ModelConfig micro_config();

// Deterministic random weights; the same (config, seed, mode) always
// builds the identical model.
Model make_fixture_model(const ModelConfig& cfg, uint64_t seed,
                         QuantMode mode = QuantMode::Asymmetric);

// All-zero weights: every logits row is constant, softmax is uniform.
Model make_zero_model(const ModelConfig& cfg);

// Random weights snapped to the 8-bit quantization grid, so the int8
// rung dequantizes bit-exactly to the fp weights.
Model make_grid_exact_model(const ModelConfig& cfg, uint64_t seed,
                            QuantMode mode = QuantMode::Asymmetric);

// Byte-level tokenizer: identity mapping byte <-> token id.
std::vector<TokenId> bytes_to_tokens(std::string_view text);
std::string tokens_to_bytes(std::span<const TokenId> tokens);

// Uniform random token ids in [0, vocab).
std::vector<TokenId> random_tokens(int64_t n, int64_t vocab, uint64_t seed);

// Deterministic uniform float in [-a, a) from a mt19937_64 stream.
float uniform_signed(std::mt19937_64& rng, float a);

} // namespace flexquant
