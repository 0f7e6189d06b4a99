// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flexquant/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

namespace flexquant {

namespace {

constexpr uint8_t kDtypeF32 = 0;
constexpr uint8_t kDtypeQuantized = 1;

void write_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

uint8_t read_u8(std::istream& is) {
  char c;
  if (!is.get(c)) throw FormatError("weights file: unexpected end of file");
  return static_cast<uint8_t>(c);
}

uint32_t read_u32(std::istream& is) {
  uint32_t v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw FormatError("weights file: unexpected end of file");
  return v;
}

void read_bytes(std::istream& is, void* p, size_t n) {
  if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n)))
    throw FormatError("weights file: unexpected end of file");
}

void write_named_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  write_bytes(os, name.data(), name.size());
  write_u8(os, kDtypeF32);
  write_u32(os, static_cast<uint32_t>(t.ndim()));
  for (int64_t i = 0; i < t.ndim(); ++i) write_u32(os, static_cast<uint32_t>(t.dim(i)));
  write_bytes(os, t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
}

void write_named_quantized(std::ostream& os, const std::string& name, const QuantizedTensor& q) {
  write_u32(os, static_cast<uint32_t>(name.size()));
  write_bytes(os, name.data(), name.size());
  write_u8(os, kDtypeQuantized);
  write_u8(os, static_cast<uint8_t>(q.bits));
  write_u8(os, static_cast<uint8_t>(q.mode));
  write_u32(os, static_cast<uint32_t>(q.rows));
  write_u32(os, static_cast<uint32_t>(q.cols));
  write_bytes(os, q.scale.data(), sizeof(float) * q.scale.size());
  write_bytes(os, q.zero_point.data(), sizeof(int32_t) * q.zero_point.size());
  write_bytes(os, q.payload.data(), q.payload.size());
}

struct NamedPayload {
  std::string name;
  Tensor tensor;
  QuantizedTensor quantized;
  bool is_quantized = false;
};

NamedPayload read_named(std::istream& is) {
  NamedPayload out;
  const uint32_t name_len = read_u32(is);
  if (name_len > 4096) throw FormatError("weights file: unreasonable tensor name length");
  out.name.resize(name_len);
  read_bytes(is, out.name.data(), name_len);
  const uint8_t dtype = read_u8(is);
  if (dtype == kDtypeF32) {
    const uint32_t ndim = read_u32(is);
    if (ndim == 0 || ndim > 4) throw FormatError("weights file: bad tensor rank");
    std::vector<int64_t> shape(ndim);
    int64_t numel = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
      shape[i] = read_u32(is);
      numel *= shape[i];
    }
    std::vector<float> data(static_cast<size_t>(numel));
    read_bytes(is, data.data(), sizeof(float) * data.size());
    out.tensor = Tensor::from_data(std::move(shape), std::move(data));
  } else if (dtype == kDtypeQuantized) {
    QuantizedTensor q;
    q.bits = read_u8(is);
    const uint8_t mode = read_u8(is);
    if (mode > 1) throw FormatError("weights file: bad quantization mode");
    q.mode = static_cast<QuantMode>(mode);
    q.rows = read_u32(is);
    q.cols = read_u32(is);
    q.scale.resize(static_cast<size_t>(q.rows));
    q.zero_point.resize(static_cast<size_t>(q.rows));
    read_bytes(is, q.scale.data(), sizeof(float) * q.scale.size());
    read_bytes(is, q.zero_point.data(), sizeof(int32_t) * q.zero_point.size());
    q.payload.resize(q.expected_payload_bytes());
    read_bytes(is, q.payload.data(), q.payload.size());
    q.validate();
    out.quantized = std::move(q);
    out.is_quantized = true;
  } else {
    throw FormatError("weights file: unknown dtype tag");
  }
  return out;
}

std::string block_prefix(int64_t i) { return "blocks." + std::to_string(i) + "."; }

int64_t parse_config_field(const std::string& line, const char* key) {
  const std::string needle = std::string(key) + "=";
  const size_t pos = line.find(needle);
  if (pos == std::string::npos)
    throw FormatError(std::string("weights file: config field '") + key + "' missing");
  return std::stoll(line.substr(pos + needle.size()));
}

} // namespace

void save_model_file(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open weights file for writing: " + path);
  const ModelConfig& c = model.config();

  os << "flexquant-weights v1\n";
  os << "vocab_size=" << c.vocab_size << " d_model=" << c.d_model << " n_heads=" << c.n_heads
     << " head_dim=" << c.head_dim << " n_layers=" << c.n_layers << " ffn_dim=" << c.ffn_dim
     << " max_seq_len=" << c.max_seq_len << " tie_embeddings=" << (c.tie_embeddings ? 1 : 0)
     << "\n";

  size_t count = 2 + 2; // embeddings + final norm
  count += static_cast<size_t>(c.n_layers) * (4 + 6 * 2); // norms + 6 layers with biases
  const bool has_head = !c.tie_embeddings;
  if (has_head) count += 2;
  const size_t n_linear = model.linear_layers().size();
  count += n_linear * 2; // w8 + w4 rungs
  os << "tensor_count=" << count << "\n";

  write_named_tensor(os, "tok_emb", model.tok_embedding());
  write_named_tensor(os, "pos_emb", model.pos_embedding());

  auto write_mp = [&os](const MultiPrecisionLayer& l) {
    write_named_tensor(os, l.id(), l.fp_weight());
    write_named_tensor(os, l.id() + ".bias", l.bias());
    write_named_quantized(os, l.id() + ".w8", l.quantized(Rung::Int8));
    write_named_quantized(os, l.id() + ".w4", l.quantized(Rung::Int4));
  };

  for (int64_t i = 0; i < c.n_layers; ++i) {
    const Model::Block& b = model.blocks()[static_cast<size_t>(i)];
    const std::string p = block_prefix(i);
    write_named_tensor(os, p + "ln1.gamma", b.ln1.gamma);
    write_named_tensor(os, p + "ln1.beta", b.ln1.beta);
    write_mp(b.wq);
    write_mp(b.wk);
    write_mp(b.wv);
    write_mp(b.wo);
    write_named_tensor(os, p + "ln2.gamma", b.ln2.gamma);
    write_named_tensor(os, p + "ln2.beta", b.ln2.beta);
    write_mp(b.w1);
    write_mp(b.w2);
  }
  write_named_tensor(os, "ln_f.gamma", model.final_norm().gamma);
  write_named_tensor(os, "ln_f.beta", model.final_norm().beta);
  if (has_head) write_mp(model.head());
  if (!os) throw FormatError("failed writing weights file: " + path);
}

Model load_model_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open weights file: " + path);

  std::string line;
  if (!std::getline(is, line) || line != "flexquant-weights v1")
    throw FormatError("weights file: bad or missing header");
  if (!std::getline(is, line)) throw FormatError("weights file: missing config line");

  ModelConfig cfg;
  cfg.vocab_size = parse_config_field(line, "vocab_size");
  cfg.d_model = parse_config_field(line, "d_model");
  cfg.n_heads = parse_config_field(line, "n_heads");
  cfg.head_dim = parse_config_field(line, "head_dim");
  cfg.n_layers = parse_config_field(line, "n_layers");
  cfg.ffn_dim = parse_config_field(line, "ffn_dim");
  cfg.max_seq_len = parse_config_field(line, "max_seq_len");
  cfg.tie_embeddings = parse_config_field(line, "tie_embeddings") != 0;

  if (!std::getline(is, line)) throw FormatError("weights file: missing tensor count line");
  const int64_t tensor_count = parse_config_field(line, "tensor_count");

  Model model(cfg);

  // First pass: collect everything by name.
  std::vector<NamedPayload> payloads;
  payloads.reserve(static_cast<size_t>(tensor_count));
  for (int64_t i = 0; i < tensor_count; ++i) payloads.push_back(read_named(is));

  auto take_tensor = [&payloads](const std::string& name) -> Tensor {
    for (NamedPayload& p : payloads)
      if (!p.is_quantized && p.name == name) return std::move(p.tensor);
    throw FormatError("weights file: tensor '" + name + "' missing");
  };
  auto maybe_quantized = [&payloads](const std::string& name) -> const QuantizedTensor* {
    for (const NamedPayload& p : payloads)
      if (p.is_quantized && p.name == name) return &p.quantized;
    return nullptr;
  };

  auto load_mp = [&](const std::string& id) -> MultiPrecisionLayer {
    MultiPrecisionLayer l(id, take_tensor(id), take_tensor(id + ".bias"));
    const QuantizedTensor* q8 = maybe_quantized(id + ".w8");
    const QuantizedTensor* q4 = maybe_quantized(id + ".w4");
    if (q8 && q4) {
      l.set_quantized(Rung::Int8, *q8);
      l.set_quantized(Rung::Int4, *q4);
    } else {
      // Files without stored rungs get round-to-nearest ones at load time.
      l.quantize_rungs(QuantMode::Asymmetric);
    }
    return l;
  };

  model.tok_embedding() = take_tensor("tok_emb");
  model.pos_embedding() = take_tensor("pos_emb");
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    Model::Block& b = model.blocks()[static_cast<size_t>(i)];
    const std::string p = block_prefix(i);
    b.ln1.gamma = take_tensor(p + "ln1.gamma");
    b.ln1.beta = take_tensor(p + "ln1.beta");
    b.wq = load_mp(p + "attn.wq");
    b.wk = load_mp(p + "attn.wk");
    b.wv = load_mp(p + "attn.wv");
    b.wo = load_mp(p + "attn.wo");
    b.ln2.gamma = take_tensor(p + "ln2.gamma");
    b.ln2.beta = take_tensor(p + "ln2.beta");
    b.w1 = load_mp(p + "ffn.w1");
    b.w2 = load_mp(p + "ffn.w2");
  }
  model.final_norm().gamma = take_tensor("ln_f.gamma");
  model.final_norm().beta = take_tensor("ln_f.beta");
  if (!cfg.tie_embeddings) model.head() = load_mp("head");

  if (model.tok_embedding().rows() != cfg.vocab_size || model.tok_embedding().cols() != cfg.d_model)
    throw FormatError("weights file: token embedding shape mismatch");
  if (model.pos_embedding().rows() != cfg.max_seq_len || model.pos_embedding().cols() != cfg.d_model)
    throw FormatError("weights file: position embedding shape mismatch");
  return model;
}

} // namespace flexquant
