#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mlec/parameters.hpp"
#include "mlec/tensor.hpp"
#include "mlec/tokenizer.hpp"

namespace mlec {

class Rng;

enum class Positional { Sinusoidal, Learned };

std::string to_string(Positional p);
Positional positional_from_string(const std::string& s);

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t feedforward_dim = 128;
  Positional positional = Positional::Sinusoidal;
  /// Longest sequence the positional table covers.
  std::size_t max_len = kDefaultMaxLen;

  void validate() const;
};

/// Token ids and mask for a batch, batch-major.
struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;  // batch * length
  Tensor mask;                    // [batch x length], 0/1 values
};

/// Packs samples into a batch. With trim, the length is cut to the longest
/// active row, which changes nothing downstream because PAD positions are
/// masked everywhere.
EncodedBatch make_encoded_batch(const std::vector<EncodedSample>& samples, const std::vector<std::size_t>& rows,
                                bool trim = true);

/// Throws std::invalid_argument unless every mask row is a non-empty prefix of ones.
void check_prefix_mask(const Tensor& mask);

struct EncoderOutput {
  Tensor hidden;  // [B x T x d]
};

struct EncoderLayerParams {
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;
  Parameter norm1_gamma, norm1_beta;
  Parameter ff1_w, ff1_b, ff2_w, ff2_b;
  Parameter norm2_gamma, norm2_beta;
};

/// Small transformer encoder: token embedding plus positions, then
/// post-norm self-attention blocks. Returns the full sequence of hidden states.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, Rng& init_rng);

  EncoderOutput forward(const EncodedBatch& batch) const;

  const EncoderConfig& config() const { return cfg_; }
  ParameterRefs parameters();
  /// Excludes (or re-admits) every encoder parameter from optimizer updates.
  void freeze(bool frozen = true);
  bool frozen() const;

  Encoder clone() const;

 private:
  Encoder() = default;

  EncoderConfig cfg_;
  Parameter token_embedding_;
  Parameter position_embedding_;  // learned positions only
  Tensor sinusoid_;               // [max_len x d] constant
  std::vector<EncoderLayerParams> layers_;
};

/// Functional form: checks ids and mask, then runs `encoder`.
EncoderOutput encode_batch(const EncodedBatch& batch, const Encoder& encoder);

/// Marks every parameter in `params` as frozen.
void freeze(ParameterRefs params);

}  // namespace mlec
