#include "mlec/model.hpp"

#include "mlec/rng.hpp"

namespace mlec {

namespace {

ModelConfig aligned(ModelConfig cfg) {
  cfg.decoder.input_dim = cfg.encoder.embed_dim;
  return cfg;
}

}  // namespace

Model::Model(const ModelConfig& cfg, Rng& rng)
    : cfg_(aligned(cfg)), encoder_(cfg_.encoder, rng), decoder_(cfg_.decoder, rng) {
  encoder_.freeze(cfg_.freeze_encoder);
}

Model::Model(ModelConfig cfg, Encoder encoder, Decoder decoder)
    : cfg_(std::move(cfg)), encoder_(std::move(encoder)), decoder_(std::move(decoder)) {}

DecoderOutput Model::forward(const EncodedBatch& batch, bool training, Rng& rng) const {
  const EncoderOutput enc = encode_batch(batch, encoder_);
  return decoder_.forward(enc.hidden, batch.mask, training, rng);
}

ParameterRefs Model::parameters() {
  ParameterRefs refs = encoder_.parameters();
  for (auto* p : decoder_.parameters()) refs.push_back(p);
  return refs;
}

ParameterRefs Model::trainable_parameters() {
  ParameterRefs refs;
  for (auto* p : parameters())
    if (!p->frozen) refs.push_back(p);
  return refs;
}

void Model::zero_grad() {
  for (auto* p : parameters()) p->value.zero_grad();
}

Model Model::clone() const { return Model(cfg_, encoder_.clone(), decoder_.clone()); }

}  // namespace mlec
