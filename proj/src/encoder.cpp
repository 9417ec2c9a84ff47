#include "mlec/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mlec/rng.hpp"

namespace mlec {

Parameter make_parameter(std::string name, Tensor value) {
  value.set_requires_grad(true);
  return Parameter{std::move(name), std::move(value), false};
}

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

std::string to_string(Positional p) { return p == Positional::Sinusoidal ? "sinusoidal" : "learned"; }

Positional positional_from_string(const std::string& s) {
  if (s == "sinusoidal") return Positional::Sinusoidal;
  if (s == "learned") return Positional::Learned;
  throw std::invalid_argument("unknown positional encoding '" + s + "' (expected sinusoidal or learned)");
}

void EncoderConfig::validate() const {
  if (vocab_size < TokenVocab::kReserved) throw std::invalid_argument("encoder: vocab_size too small");
  if (embed_dim == 0) throw std::invalid_argument("encoder: embed_dim must be positive");
  if (max_len == 0) throw std::invalid_argument("encoder: max_len must be positive");
  if (num_layers > 0 && (num_heads == 0 || embed_dim % num_heads != 0)) {
    throw std::invalid_argument("encoder: embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                                std::to_string(num_heads) + " heads");
  }
  if (num_layers > 0 && feedforward_dim == 0) throw std::invalid_argument("encoder: feedforward_dim must be positive");
}

void check_prefix_mask(const Tensor& mask) {
  if (mask.rank() != 2) throw std::invalid_argument("malformed mask: expected [B x T], got " + shape_str(mask.shape()));
  const std::size_t B = mask.dim(0), T = mask.dim(1);
  const auto m = mask.data();
  for (std::size_t b = 0; b < B; ++b) {
    bool in_prefix = true;
    for (std::size_t t = 0; t < T; ++t) {
      const double v = m[b * T + t];
      if (v != 0.0 && v != 1.0) throw std::invalid_argument("malformed mask: non-binary value in row " + std::to_string(b));
      if (v == 1.0 && !in_prefix) throw std::invalid_argument("malformed mask: row " + std::to_string(b) + " is not a prefix of ones");
      if (v == 0.0) in_prefix = false;
    }
    if (T == 0 || m[b * T] != 1.0) throw std::invalid_argument("malformed mask: row " + std::to_string(b) + " has no active position");
  }
}

EncodedBatch make_encoded_batch(const std::vector<EncodedSample>& samples, const std::vector<std::size_t>& rows,
                                bool trim) {
  if (rows.empty()) throw std::invalid_argument("make_encoded_batch: empty batch");
  const std::size_t full = samples.at(rows.front()).length();
  std::size_t length = trim ? 0 : full;
  for (auto r : rows) {
    if (samples.at(r).length() != full) throw std::invalid_argument("make_encoded_batch: samples differ in length");
    if (trim) length = std::max(length, samples[r].active());
  }
  EncodedBatch batch;
  batch.batch = rows.size();
  batch.length = length;
  batch.ids.reserve(rows.size() * length);
  std::vector<double> mask;
  mask.reserve(rows.size() * length);
  for (auto r : rows) {
    const auto& s = samples[r];
    batch.ids.insert(batch.ids.end(), s.input_ids.begin(), s.input_ids.begin() + static_cast<std::ptrdiff_t>(length));
    for (std::size_t t = 0; t < length; ++t) mask.push_back(s.attention_mask[t]);
  }
  batch.mask = Tensor::from_vector({rows.size(), length}, std::move(mask));
  return batch;
}

namespace {

Tensor sinusoid_table(std::size_t max_len, std::size_t d) {
  std::vector<double> v(max_len * d);
  for (std::size_t t = 0; t < max_len; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      v[t * d + i] = (i % 2 == 0) ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  }
  return Tensor::from_vector({max_len, d}, std::move(v));
}

Tensor linear(const Tensor& x, const Parameter& w, const Parameter& b) { return add_rowwise(matmul(x, w.value), b.value); }

Parameter clone_param(const Parameter& p) { return Parameter{p.name, p.value.clone(), p.frozen}; }

}  // namespace

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.embed_dim;
  token_embedding_ = make_parameter("encoder.token_embedding", normal_init({cfg_.vocab_size, d}, 1.0, rng));
  if (cfg_.positional == Positional::Learned) {
    position_embedding_ = make_parameter("encoder.position_embedding", normal_init({cfg_.max_len, d}, 0.02, rng));
  } else {
    sinusoid_ = sinusoid_table(cfg_.max_len, d);
  }
  const double bound_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double bound_ff = 1.0 / std::sqrt(static_cast<double>(cfg_.feedforward_dim));
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l) + ".";
    const std::size_t ff = cfg_.feedforward_dim;
    layers_.push_back(EncoderLayerParams{
        make_parameter(p + "wq", uniform_init({d, d}, bound_d, rng)),
        make_parameter(p + "bq", Tensor::zeros({d})),
        make_parameter(p + "wk", uniform_init({d, d}, bound_d, rng)),
        make_parameter(p + "bk", Tensor::zeros({d})),
        make_parameter(p + "wv", uniform_init({d, d}, bound_d, rng)),
        make_parameter(p + "bv", Tensor::zeros({d})),
        make_parameter(p + "wo", uniform_init({d, d}, bound_d, rng)),
        make_parameter(p + "bo", Tensor::zeros({d})),
        make_parameter(p + "norm1_gamma", Tensor::full({d}, 1.0)),
        make_parameter(p + "norm1_beta", Tensor::zeros({d})),
        make_parameter(p + "ff1_w", uniform_init({d, ff}, bound_d, rng)),
        make_parameter(p + "ff1_b", Tensor::zeros({ff})),
        make_parameter(p + "ff2_w", uniform_init({ff, d}, bound_ff, rng)),
        make_parameter(p + "ff2_b", Tensor::zeros({d})),
        make_parameter(p + "norm2_gamma", Tensor::full({d}, 1.0)),
        make_parameter(p + "norm2_beta", Tensor::zeros({d})),
    });
  }
}

EncoderOutput Encoder::forward(const EncodedBatch& batch) const {
  const std::size_t B = batch.batch, T = batch.length, d = cfg_.embed_dim;
  if (batch.ids.size() != B * T) throw std::invalid_argument("encoder: ids do not match batch shape");
  if (T > cfg_.max_len) throw std::invalid_argument("encoder: sequence length " + std::to_string(T) + " exceeds max_len");
  for (auto id : batch.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
      throw std::out_of_range("encoder: token id " + std::to_string(id) + " out of range for vocabulary of " +
                              std::to_string(cfg_.vocab_size));
    }
  }

  Tensor x = embedding(token_embedding_.value, batch.ids);  // [BT x d]
  std::vector<std::int32_t> positions(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) positions[b * T + t] = static_cast<std::int32_t>(t);
  if (cfg_.positional == Positional::Learned) {
    x = add(x, embedding(position_embedding_.value, positions));
  } else {
    x = add(x, embedding(sinusoid_, positions));
  }

  for (const auto& layer : layers_) {
    const Tensor q = reshape(linear(x, layer.wq, layer.bq), {B, T, d});
    const Tensor k = reshape(linear(x, layer.wk, layer.bk), {B, T, d});
    const Tensor v = reshape(linear(x, layer.wv, layer.bv), {B, T, d});
    const Tensor attended = reshape(multi_head_attention(q, k, v, batch.mask, cfg_.num_heads), {B * T, d});
    x = layer_norm(add(x, linear(attended, layer.wo, layer.bo)), layer.norm1_gamma.value, layer.norm1_beta.value);
    const Tensor ff = linear(relu(linear(x, layer.ff1_w, layer.ff1_b)), layer.ff2_w, layer.ff2_b);
    x = layer_norm(add(x, ff), layer.norm2_gamma.value, layer.norm2_beta.value);
  }
  return EncoderOutput{reshape(x, {B, T, d})};
}

ParameterRefs Encoder::parameters() {
  ParameterRefs refs{&token_embedding_};
  if (cfg_.positional == Positional::Learned) refs.push_back(&position_embedding_);
  for (auto& l : layers_) {
    for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.norm1_gamma, &l.norm1_beta,
                         &l.ff1_w, &l.ff1_b, &l.ff2_w, &l.ff2_b, &l.norm2_gamma, &l.norm2_beta}) {
      refs.push_back(p);
    }
  }
  return refs;
}

void Encoder::freeze(bool frozen) {
  for (auto* p : parameters()) p->frozen = frozen;
}

bool Encoder::frozen() const {
  return token_embedding_.frozen;
}

Encoder Encoder::clone() const {
  Encoder copy;
  copy.cfg_ = cfg_;
  copy.token_embedding_ = clone_param(token_embedding_);
  if (position_embedding_.value.defined()) copy.position_embedding_ = clone_param(position_embedding_);
  if (sinusoid_.defined()) copy.sinusoid_ = sinusoid_.detach();
  for (const auto& l : layers_) {
    copy.layers_.push_back(EncoderLayerParams{
        clone_param(l.wq), clone_param(l.bq), clone_param(l.wk), clone_param(l.bk),
        clone_param(l.wv), clone_param(l.bv), clone_param(l.wo), clone_param(l.bo),
        clone_param(l.norm1_gamma), clone_param(l.norm1_beta), clone_param(l.ff1_w), clone_param(l.ff1_b),
        clone_param(l.ff2_w), clone_param(l.ff2_b), clone_param(l.norm2_gamma), clone_param(l.norm2_beta)});
  }
  return copy;
}

EncoderOutput encode_batch(const EncodedBatch& batch, const Encoder& encoder) {
  check_prefix_mask(batch.mask);
  return encoder.forward(batch);
}

void freeze(ParameterRefs params) {
  for (auto* p : params) p->frozen = true;
}

}  // namespace mlec
