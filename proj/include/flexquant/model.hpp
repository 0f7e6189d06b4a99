// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flexquant/quantizer.hpp"
#include "flexquant/rung.hpp"
#include "flexquant/tensor.hpp"

namespace flexquant {

using TokenId = int32_t;

struct ModelConfig {
  int64_t vocab_size = 0;
  int64_t d_model = 0;
  int64_t n_heads = 0;
  int64_t head_dim = 0;
  int64_t n_layers = 0;
  int64_t ffn_dim = 0;
  int64_t max_seq_len = 0;
  bool tie_embeddings = false;

  void validate() const;
};

// Per-forward-pass accounting: weight bytes touched and wall time split
// into the buckets the latency breakdown reports.
struct StepStats {
  double weight_bytes = 0.0;
  uint64_t ns_fp = 0;
  uint64_t ns_int8 = 0;
  uint64_t ns_int4 = 0;
  uint64_t ns_forward = 0; // whole forward pass, superset of the linear buckets

  void reset() { *this = StepStats{}; }
};

// A linear layer whose weight is held at several precisions at once.
// Switching the active rung never touches the stored payloads.
class MultiPrecisionLayer {
public:
  MultiPrecisionLayer() = default;

  // Holds the full-precision weight only; call quantize_rungs or
  // set_quantized to populate the integer rungs.
  MultiPrecisionLayer(std::string id, Tensor weight, Tensor bias);

  // Builds the 8- and 4-bit rungs from the fp weight (round-to-nearest).
  void quantize_rungs(QuantMode mode);

  const std::string& id() const { return id_; }
  int64_t out_features() const { return fp_.rows(); }
  int64_t in_features() const { return fp_.cols(); }
  int64_t param_count() const { return fp_.numel(); }

  Rung current() const { return current_; }
  void set_current(Rung r);
  bool has(Rung r) const;

  const Tensor& fp_weight() const { return fp_; }
  const Tensor& bias() const { return bias_; }
  const QuantizedTensor& quantized(Rung r) const;
  void set_quantized(Rung r, QuantizedTensor q);

  // y = x * W_active^T + bias, dequantizing on use. Accounts
  // param_count * accounting_bits(current)/8 bytes into `stats`.
  Tensor forward(const Tensor& x, StepStats* stats) const;

  double active_weight_bytes() const {
    return static_cast<double>(param_count()) * accounting_bits(current_) / 8.0;
  }

private:
  std::string id_;
  Tensor fp_;
  Tensor bias_;
  QuantizedTensor w8_;
  QuantizedTensor w4_;
  Rung current_ = Rung::Fp;
};

// Single-head scaled dot-product attention over visible (non-future)
// keys. Query row i sits at absolute position causal_offset + i and may
// attend keys at positions <= causal_offset + i.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t causal_offset);

// Per-layer key/value history. Grows by one position per decode step.
class KvCache {
public:
  KvCache() = default;
  KvCache(int64_t n_layers, int64_t d_model, int64_t max_seq_len);

  int64_t length() const { return length_; }
  int64_t max_length() const { return max_len_; }

  // Appends `rows` positions of k/v (each rows x d_model) for one layer.
  // Layers must be appended in order for each position batch.
  void append(int64_t layer, const Tensor& k, const Tensor& v);

  // Commits an append round: bumps the shared length by `rows`.
  void commit(int64_t rows);

  // Key/value history of a layer as (length x d_model) tensors.
  Tensor keys(int64_t layer) const;
  Tensor values(int64_t layer) const;

private:
  struct LayerKv {
    std::vector<float> k;
    std::vector<float> v;
  };
  std::vector<LayerKv> layers_;
  int64_t d_model_ = 0;
  int64_t max_len_ = 0;
  int64_t length_ = 0;
};

struct SwitchEvent {
  std::string layer_id;
  Rung from = Rung::Fp;
  Rung to = Rung::Int8;
};

// Decoder-only transformer: learned token + position embeddings,
// pre-norm blocks (attention + GELU FFN), final norm, linear head.
// All projection weights are MultiPrecisionLayers; embeddings, norms
// and biases stay in full precision.
class Model {
public:
  struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
  };

  struct Block {
    LayerNormParams ln1;
    MultiPrecisionLayer wq, wk, wv, wo;
    LayerNormParams ln2;
    MultiPrecisionLayer w1, w2;
  };

  Model() = default;
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  KvCache make_cache() const { return KvCache(cfg_.n_layers, cfg_.d_model, cfg_.max_seq_len); }

  // Logits for every prompt position (n x V); fills the cache.
  Tensor forward_prefill(std::span<const TokenId> tokens, KvCache& cache) const;

  // Next-token logits (1 x V); appends one cache position.
  Tensor forward_decode(TokenId token, KvCache& cache) const;

  // Changes the active rung of one layer. Returns the event, or nullopt
  // if the layer was already at `bits`.
  std::optional<SwitchEvent> set_precision(std::string_view layer_id, Rung bits);
  void set_all_precision(Rung bits);

  // Parameter-weighted mean bit-width over the switchable linear layers,
  // with fp accounted as 16 bits.
  double effective_bits() const;

  // Weight bytes one forward pass touches at the current precisions.
  double weight_bytes_per_pass() const;

  std::vector<const MultiPrecisionLayer*> linear_layers() const;
  std::vector<MultiPrecisionLayer*> linear_layers();
  const MultiPrecisionLayer* find_layer(std::string_view id) const;
  MultiPrecisionLayer* find_layer(std::string_view id);

  const StepStats& step_stats() const { return stats_; }
  void reset_step_stats() { stats_.reset(); }

  // Mutable access for builders and the weight-file loader.
  Tensor& tok_embedding() { return tok_emb_; }
  Tensor& pos_embedding() { return pos_emb_; }
  const Tensor& tok_embedding() const { return tok_emb_; }
  const Tensor& pos_embedding() const { return pos_emb_; }
  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  LayerNormParams& final_norm() { return ln_f_; }
  const LayerNormParams& final_norm() const { return ln_f_; }
  MultiPrecisionLayer& head() { return head_; }
  const MultiPrecisionLayer& head() const { return head_; }

private:
  // Runs the block stack over x (rows at positions pos0..pos0+n-1),
  // appending to the cache, and returns logits for every row.
  Tensor forward_rows(const Tensor& x, int64_t pos0, KvCache& cache) const;

  ModelConfig cfg_;
  Tensor tok_emb_; // V x d_model
  Tensor pos_emb_; // max_seq_len x d_model
  std::vector<Block> blocks_;
  LayerNormParams ln_f_;
  MultiPrecisionLayer head_; // V x d_model; unused when embeddings are tied
  mutable StepStats stats_;
};

// Parameter-weighted mean bit-width of a set of layers (fp counted as 16).
double effective_bits(std::span<const MultiPrecisionLayer* const> layers);

// Weight container file, versioned "flexquant-weights v1".
void save_model_file(const Model& model, const std::string& path);
Model load_model_file(const std::string& path);

} // namespace flexquant
