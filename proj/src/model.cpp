// SPDX-License-Identifier: Apache-2.0
#include "flexquant/model.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>

namespace flexquant {

namespace {

uint64_t now_ns() {
  return static_cast<uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

} // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_heads < 1 || head_dim < 1 || n_layers < 1 || ffn_dim < 1 ||
      max_seq_len < 1)
    throw ConfigError("model config: all dimensions must be >= 1");
  if (d_model != n_heads * head_dim)
    throw ConfigError("model config: d_model must equal n_heads * head_dim");
}

MultiPrecisionLayer::MultiPrecisionLayer(std::string id, Tensor weight, Tensor bias)
    : id_(std::move(id)), fp_(std::move(weight)), bias_(std::move(bias)) {
  if (bias_.numel() != 0 && bias_.numel() != fp_.rows())
    throw DimensionError("layer " + id_ + ": bias length does not match output features");
}

void MultiPrecisionLayer::quantize_rungs(QuantMode mode) {
  w8_ = quantize(fp_, 8, mode);
  w4_ = quantize(fp_, 4, mode);
}

bool MultiPrecisionLayer::has(Rung r) const {
  switch (r) {
    case Rung::Fp: return fp_.numel() > 0;
    case Rung::Int8: return w8_.numel() > 0;
    case Rung::Int4: return w4_.numel() > 0;
  }
  return false;
}

void MultiPrecisionLayer::set_current(Rung r) {
  if (!has(r))
    throw StateError("layer " + id_ + ": precision '" + to_string(r) + "' not available");
  current_ = r;
}

const QuantizedTensor& MultiPrecisionLayer::quantized(Rung r) const {
  if (r == Rung::Int8 && w8_.numel() > 0) return w8_;
  if (r == Rung::Int4 && w4_.numel() > 0) return w4_;
  throw StateError("layer " + id_ + ": no quantized payload for rung '" + to_string(r) + "'");
}

void MultiPrecisionLayer::set_quantized(Rung r, QuantizedTensor q) {
  q.validate();
  if (q.rows != fp_.rows() || q.cols != fp_.cols())
    throw DimensionError("layer " + id_ + ": quantized payload shape mismatch");
  if (r == Rung::Int8) {
    if (q.bits != 8) throw ConfigError("layer " + id_ + ": expected 8-bit payload");
    w8_ = std::move(q);
  } else if (r == Rung::Int4) {
    if (q.bits != 4) throw ConfigError("layer " + id_ + ": expected 4-bit payload");
    w4_ = std::move(q);
  } else {
    throw ConfigError("layer " + id_ + ": fp rung is not a quantized payload");
  }
}

Tensor MultiPrecisionLayer::forward(const Tensor& x, StepStats* stats) const {
  if (!has(current_)) throw StateError("layer " + id_ + ": active precision has no payload");
  const uint64_t t0 = now_ns();
  Tensor y;
  if (current_ == Rung::Fp) {
    y = linear(x, fp_, bias_);
  } else {
    // Dequantize on use so traffic accounting tracks the active bit-width.
    const Tensor w = dequantize(quantized(current_));
    y = linear(x, w, bias_);
  }
  if (stats) {
    const uint64_t dt = now_ns() - t0;
    switch (current_) {
      case Rung::Fp: stats->ns_fp += dt; break;
      case Rung::Int8: stats->ns_int8 += dt; break;
      case Rung::Int4: stats->ns_int4 += dt; break;
    }
    stats->weight_bytes += active_weight_bytes();
  }
  return y;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t causal_offset) {
  const int64_t n_q = q.rows(), d_k = q.cols();
  const int64_t n_k = k.rows();
  if (n_k == 0) throw StateError("attention: no keys visible");
  if (k.cols() != d_k) throw DimensionError("attention: query/key width mismatch");
  if (v.rows() != n_k) throw DimensionError("attention: key/value count mismatch");
  if (causal_offset < 0) throw StateError("attention: negative causal offset");

  const int64_t d_v = v.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  Tensor out({n_q, d_v});
  std::vector<double> scores(static_cast<size_t>(n_k));
  std::vector<double> probs(static_cast<size_t>(n_k));

  for (int64_t i = 0; i < n_q; ++i) {
    const int64_t visible = std::min<int64_t>(n_k, causal_offset + i + 1);
    if (visible <= 0) throw StateError("attention: query sees no keys");
    const float* qi = q.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < visible; ++j) {
      const float* kj = k.row(j);
      double dot = 0.0;
      for (int64_t p = 0; p < d_k; ++p) dot += static_cast<double>(qi[p]) * static_cast<double>(kj[p]);
      scores[static_cast<size_t>(j)] = dot * scale;
      mx = std::max(mx, scores[static_cast<size_t>(j)]);
    }
    double sum = 0.0;
    for (int64_t j = 0; j < visible; ++j) {
      probs[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
      sum += probs[static_cast<size_t>(j)];
    }
    float* dst = out.row(i);
    for (int64_t c = 0; c < d_v; ++c) {
      double acc = 0.0;
      for (int64_t j = 0; j < visible; ++j)
        acc += (probs[static_cast<size_t>(j)] / sum) * static_cast<double>(v.at(j, c));
      dst[c] = static_cast<float>(acc);
    }
  }
  return out;
}

KvCache::KvCache(int64_t n_layers, int64_t d_model, int64_t max_seq_len)
    : layers_(static_cast<size_t>(n_layers)), d_model_(d_model), max_len_(max_seq_len) {}

void KvCache::append(int64_t layer, const Tensor& k, const Tensor& v) {
  auto& slot = layers_.at(static_cast<size_t>(layer));
  if (k.cols() != d_model_ || v.cols() != d_model_ || k.rows() != v.rows())
    throw DimensionError("kv cache append: shape mismatch");
  slot.k.insert(slot.k.end(), k.data(), k.data() + k.numel());
  slot.v.insert(slot.v.end(), v.data(), v.data() + v.numel());
}

void KvCache::commit(int64_t rows) {
  length_ += rows;
  for (const auto& slot : layers_)
    if (static_cast<int64_t>(slot.k.size()) != length_ * d_model_)
      throw StateError("kv cache commit: layer history out of sync");
  if (length_ > max_len_) throw CapacityError("kv cache exceeded max sequence length");
}

Tensor KvCache::keys(int64_t layer) const {
  const auto& slot = layers_.at(static_cast<size_t>(layer));
  const int64_t rows = static_cast<int64_t>(slot.k.size()) / d_model_;
  return Tensor::from_data({rows, d_model_}, slot.k);
}

Tensor KvCache::values(int64_t layer) const {
  const auto& slot = layers_.at(static_cast<size_t>(layer));
  const int64_t rows = static_cast<int64_t>(slot.v.size()) / d_model_;
  return Tensor::from_data({rows, d_model_}, slot.v);
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  blocks_.resize(static_cast<size_t>(cfg_.n_layers));
}

namespace {

// Columns [h*d, (h+1)*d) of a 2-D tensor as a copy.
Tensor head_slice(const Tensor& x, int64_t h, int64_t d) {
  Tensor out({x.rows(), d});
  for (int64_t r = 0; r < x.rows(); ++r) {
    const float* src = x.row(r) + h * d;
    float* dst = out.row(r);
    for (int64_t c = 0; c < d; ++c) dst[c] = src[c];
  }
  return out;
}

} // namespace

Tensor Model::forward_rows(const Tensor& x_in, int64_t pos0, KvCache& cache) const {
  const uint64_t t0 = now_ns();
  const int64_t n = x_in.rows();
  Tensor x = x_in;

  for (int64_t li = 0; li < cfg_.n_layers; ++li) {
    const Block& blk = blocks_[static_cast<size_t>(li)];
    const Tensor h = layer_norm(x, blk.ln1.gamma, blk.ln1.beta);
    const Tensor q = blk.wq.forward(h, &stats_);
    const Tensor k = blk.wk.forward(h, &stats_);
    const Tensor v = blk.wv.forward(h, &stats_);
    cache.append(li, k, v);

    const Tensor k_all = cache.keys(li);
    const Tensor v_all = cache.values(li);
    Tensor att({n, cfg_.d_model});
    for (int64_t hh = 0; hh < cfg_.n_heads; ++hh) {
      const Tensor qh = head_slice(q, hh, cfg_.head_dim);
      const Tensor kh = head_slice(k_all, hh, cfg_.head_dim);
      const Tensor vh = head_slice(v_all, hh, cfg_.head_dim);
      const Tensor oh = attention(qh, kh, vh, pos0);
      for (int64_t r = 0; r < n; ++r) {
        float* dst = att.row(r) + hh * cfg_.head_dim;
        const float* src = oh.row(r);
        for (int64_t c = 0; c < cfg_.head_dim; ++c) dst[c] = src[c];
      }
    }
    x = add(x, blk.wo.forward(att, &stats_));

    const Tensor h2 = layer_norm(x, blk.ln2.gamma, blk.ln2.beta);
    const Tensor up = gelu(blk.w1.forward(h2, &stats_));
    x = add(x, blk.w2.forward(up, &stats_));
  }
  cache.commit(n);

  const Tensor xf = layer_norm(x, ln_f_.gamma, ln_f_.beta);
  Tensor logits;
  if (cfg_.tie_embeddings) {
    logits = linear(xf, tok_emb_, Tensor{});
  } else {
    logits = head_.forward(xf, &stats_);
  }
  stats_.ns_forward += now_ns() - t0;
  return logits;
}

Tensor Model::forward_prefill(std::span<const TokenId> tokens, KvCache& cache) const {
  const int64_t n = static_cast<int64_t>(tokens.size());
  if (n < 1) throw InputError("prefill: empty prompt");
  if (cache.length() != 0) throw StateError("prefill: cache already populated");
  if (n > cfg_.max_seq_len) throw CapacityError("prefill: prompt longer than max sequence length");

  Tensor x({n, cfg_.d_model});
  for (int64_t i = 0; i < n; ++i) {
    const TokenId t = tokens[static_cast<size_t>(i)];
    if (t < 0 || t >= cfg_.vocab_size) throw InputError("prefill: token id out of vocabulary");
    const float* emb = tok_emb_.row(t);
    const float* pos = pos_emb_.row(i);
    float* dst = x.row(i);
    for (int64_t c = 0; c < cfg_.d_model; ++c) dst[c] = emb[c] + pos[c];
  }
  return forward_rows(x, 0, cache);
}

Tensor Model::forward_decode(TokenId token, KvCache& cache) const {
  if (token < 0 || token >= cfg_.vocab_size) throw InputError("decode: token id out of vocabulary");
  if (cache.length() >= cfg_.max_seq_len) throw CapacityError("decode: cache is full");
  const int64_t pos = cache.length();
  Tensor x({1, cfg_.d_model});
  const float* emb = tok_emb_.row(token);
  const float* pe = pos_emb_.row(pos);
  for (int64_t c = 0; c < cfg_.d_model; ++c) x.flat(c) = emb[c] + pe[c];
  return forward_rows(x, pos, cache);
}

std::optional<SwitchEvent> Model::set_precision(std::string_view layer_id, Rung bits) {
  MultiPrecisionLayer* layer = find_layer(layer_id);
  if (!layer) throw StateError("set_precision: unknown layer '" + std::string(layer_id) + "'");
  if (!layer->has(bits))
    throw StateError("set_precision: layer '" + std::string(layer_id) + "' has no rung '" +
                     to_string(bits) + "'");
  if (layer->current() == bits) return std::nullopt;
  SwitchEvent ev{layer->id(), layer->current(), bits};
  layer->set_current(bits);
  return ev;
}

void Model::set_all_precision(Rung bits) {
  for (MultiPrecisionLayer* l : linear_layers()) l->set_current(bits);
}

double effective_bits(std::span<const MultiPrecisionLayer* const> layers) {
  double num = 0.0, den = 0.0;
  for (const MultiPrecisionLayer* l : layers) {
    num += static_cast<double>(l->param_count()) * accounting_bits(l->current());
    den += static_cast<double>(l->param_count());
  }
  return den > 0.0 ? num / den : 0.0;
}

double Model::effective_bits() const {
  const auto layers = linear_layers();
  return flexquant::effective_bits(layers);
}

double Model::weight_bytes_per_pass() const {
  double bytes = 0.0;
  for (const MultiPrecisionLayer* l : linear_layers()) bytes += l->active_weight_bytes();
  return bytes;
}

std::vector<const MultiPrecisionLayer*> Model::linear_layers() const {
  std::vector<const MultiPrecisionLayer*> out;
  for (const Block& b : blocks_) {
    out.push_back(&b.wq);
    out.push_back(&b.wk);
    out.push_back(&b.wv);
    out.push_back(&b.wo);
    out.push_back(&b.w1);
    out.push_back(&b.w2);
  }
  if (!cfg_.tie_embeddings) out.push_back(&head_);
  return out;
}

std::vector<MultiPrecisionLayer*> Model::linear_layers() {
  std::vector<MultiPrecisionLayer*> out;
  for (Block& b : blocks_) {
    out.push_back(&b.wq);
    out.push_back(&b.wk);
    out.push_back(&b.wv);
    out.push_back(&b.wo);
    out.push_back(&b.w1);
    out.push_back(&b.w2);
  }
  if (!cfg_.tie_embeddings) out.push_back(&head_);
  return out;
}

const MultiPrecisionLayer* Model::find_layer(std::string_view id) const {
  for (const MultiPrecisionLayer* l : linear_layers())
    if (l->id() == id) return l;
  return nullptr;
}

MultiPrecisionLayer* Model::find_layer(std::string_view id) {
  for (MultiPrecisionLayer* l : linear_layers())
    if (l->id() == id) return l;
  return nullptr;
}

} // namespace flexquant
