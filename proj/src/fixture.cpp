// SPDX-License-Identifier: Apache-2.0
#include "flexquant/fixture.hpp"

#include <cmath>

namespace flexquant {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 256;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.head_dim = 16;
  cfg.n_layers = 4;
  cfg.ffn_dim = 128;
  cfg.max_seq_len = 512;
  return cfg;
}

ModelConfig micro_config() {
  ModelConfig cfg;
  cfg.vocab_size = 256;
  cfg.d_model = 32;
  cfg.n_heads = 2;
  cfg.head_dim = 16;
  cfg.n_layers = 2;
  cfg.ffn_dim = 64;
  cfg.max_seq_len = 1280;
  return cfg;
}

float uniform_signed(std::mt19937_64& rng, float a) {
  // 24 explicit mantissa bits; avoids the stdlib distributions so the
  // stream is identical across standard library implementations.
  const uint64_t r = rng() >> 40;
  const float u = static_cast<float>(r) * (1.0f / 16777216.0f); // [0, 1)
  return a * (2.0f * u - 1.0f);
}

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::vector<int64_t> shape, float a) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.flat(i) = uniform_signed(rng, a);
  return t;
}

Tensor ones(int64_t n) {
  Tensor t({n});
  for (int64_t i = 0; i < n; ++i) t.flat(i) = 1.0f;
  return t;
}

Model build_model(const ModelConfig& cfg, uint64_t seed, QuantMode mode, bool zero,
                  bool grid_exact) {
  std::mt19937_64 rng(seed);
  Model model(cfg);

  const float emb_scale = zero ? 0.0f : 0.10f;
  const float proj_scale = zero ? 0.0f : 1.0f / std::sqrt(static_cast<float>(cfg.d_model));
  const float ffn_scale = zero ? 0.0f : 1.0f / std::sqrt(static_cast<float>(cfg.ffn_dim));
  const float head_scale = zero ? 0.0f : 1.8f / std::sqrt(static_cast<float>(cfg.d_model));

  auto maybe_snap = [&](Tensor w) {
    if (!grid_exact || zero) return w;
    return dequantize(quantize(w, 8, mode));
  };
  auto make_layer = [&](const std::string& id, int64_t out, int64_t in, float a) {
    MultiPrecisionLayer l(id, maybe_snap(random_tensor(rng, {out, in}, a)), Tensor({out}));
    l.quantize_rungs(mode);
    return l;
  };

  model.tok_embedding() = random_tensor(rng, {cfg.vocab_size, cfg.d_model}, emb_scale);
  model.pos_embedding() = random_tensor(rng, {cfg.max_seq_len, cfg.d_model}, emb_scale);

  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    Model::Block& b = model.blocks()[static_cast<size_t>(i)];
    const std::string p = "blocks." + std::to_string(i) + ".";
    b.ln1.gamma = ones(cfg.d_model);
    b.ln1.beta = Tensor({cfg.d_model});
    b.wq = make_layer(p + "attn.wq", cfg.d_model, cfg.d_model, proj_scale);
    b.wk = make_layer(p + "attn.wk", cfg.d_model, cfg.d_model, proj_scale);
    b.wv = make_layer(p + "attn.wv", cfg.d_model, cfg.d_model, proj_scale);
    b.wo = make_layer(p + "attn.wo", cfg.d_model, cfg.d_model, proj_scale);
    b.ln2.gamma = ones(cfg.d_model);
    b.ln2.beta = Tensor({cfg.d_model});
    b.w1 = make_layer(p + "ffn.w1", cfg.ffn_dim, cfg.d_model, proj_scale);
    b.w2 = make_layer(p + "ffn.w2", cfg.d_model, cfg.ffn_dim, ffn_scale);
  }
  model.final_norm().gamma = ones(cfg.d_model);
  model.final_norm().beta = Tensor({cfg.d_model});
  if (!cfg.tie_embeddings) {
    MultiPrecisionLayer head("head", maybe_snap(random_tensor(rng, {cfg.vocab_size, cfg.d_model}, head_scale)),
                             Tensor({cfg.vocab_size}));
    head.quantize_rungs(mode);
    model.head() = std::move(head);
  }
  return model;
}

} // namespace

Model make_fixture_model(const ModelConfig& cfg, uint64_t seed, QuantMode mode) {
  return build_model(cfg, seed, mode, /*zero=*/false, /*grid_exact=*/false);
}

Model make_zero_model(const ModelConfig& cfg) {
  return build_model(cfg, 0, QuantMode::Asymmetric, /*zero=*/true, /*grid_exact=*/false);
}

Model make_grid_exact_model(const ModelConfig& cfg, uint64_t seed, QuantMode mode) {
  return build_model(cfg, seed, mode, /*zero=*/false, /*grid_exact=*/true);
}

std::vector<TokenId> bytes_to_tokens(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

std::string tokens_to_bytes(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t < 0 || t > 255) throw InputError("tokens_to_bytes: token outside byte range");
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

std::vector<TokenId> random_tokens(int64_t n, int64_t vocab, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenId> out(static_cast<size_t>(n));
  for (auto& t : out) t = static_cast<TokenId>(rng() % static_cast<uint64_t>(vocab));
  return out;
}

} // namespace flexquant
