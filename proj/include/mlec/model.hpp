#pragma once

#include "mlec/decoder.hpp"
#include "mlec/encoder.hpp"

namespace mlec {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  /// Keeps encoder weights fixed during training; they still run forward.
  bool freeze_encoder = false;
};

/// Encoder followed by a recurrent decoder head.
class Model {
 public:
  /// decoder.input_dim is taken from encoder.embed_dim.
  Model(const ModelConfig& cfg, Rng& init_rng);

  /// Checks the mask, trims nothing, and returns logits and probabilities.
  DecoderOutput forward(const EncodedBatch& batch, bool training, Rng& rng) const;

  const ModelConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  const Decoder& decoder() const { return decoder_; }

  /// Encoder parameters first, then decoder parameters.
  ParameterRefs parameters();
  /// Parameters an optimizer should update.
  ParameterRefs trainable_parameters();
  void zero_grad();

  Model clone() const;

 private:
  Model(ModelConfig cfg, Encoder encoder, Decoder decoder);

  ModelConfig cfg_;
  Encoder encoder_;
  Decoder decoder_;
};

}  // namespace mlec
