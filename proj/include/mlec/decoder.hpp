#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mlec/parameters.hpp"
#include "mlec/tensor.hpp"

namespace mlec {

class Rng;

enum class DecoderKind { GRU, LSTM, BiLSTM, BiLSTM_A };

std::string to_string(DecoderKind kind);
/// Accepts gru, lstm, bilstm, bilstm-a (case-insensitive; '_' works for '-').
DecoderKind decoder_kind_from_string(const std::string& s);

enum class CellKind { GRU, LSTM };

struct DecoderConfig {
  DecoderKind kind = DecoderKind::GRU;
  std::size_t hidden_size = 128;
  std::size_t num_layers = 1;
  /// Only read for GRU and LSTM; BiLSTM and BiLSTM-A always run both directions.
  bool bidirectional = false;
  /// Applied to the summary before the dense layer and between stacked layers.
  double dropout = 0.17;
  /// Optional dropout on the encoder states entering the first recurrent layer.
  double input_dropout = 0.0;
  std::size_t label_count = 11;
  std::size_t input_dim = 64;

  CellKind cell() const { return kind == DecoderKind::GRU ? CellKind::GRU : CellKind::LSTM; }
  bool is_bidirectional() const;
  std::size_t directions() const { return is_bidirectional() ? 2 : 1; }
  /// Width of per-step states and of the summary.
  std::size_t output_dim() const { return directions() * hidden_size; }
  void validate() const;
};

/// One direction of one recurrent layer. Gate blocks are laid out side by
/// side: GRU [z | r | n], LSTM [i | f | o | g].
///   w_x: [in x G*h]   b: [G*h]
///   GRU:  u_zr: [h x 2h], u_n: [h x h]
///   LSTM: u: [h x 4h]
struct RnnCellParams {
  CellKind kind = CellKind::GRU;
  std::size_t input_dim = 0;
  std::size_t hidden_size = 0;
  Parameter w_x, b;
  Parameter u_zr, u_n;  // GRU
  Parameter u;          // LSTM

  static RnnCellParams init(CellKind kind, std::size_t input_dim, std::size_t hidden_size, const std::string& prefix,
                            Rng& rng);
  ParameterRefs refs();
};

/// Recurrent state for a batch: h [B x h]; c [B x h] for LSTM only.
struct CellState {
  Tensor h;
  Tensor c;

  static CellState zeros(CellKind kind, std::size_t batch, std::size_t hidden);
};

/// One recurrence step on x [B x in] (or a single vector [in]).
CellState rnn_cell_step(const CellState& prev, const Tensor& x, const RnnCellParams& params);

/// Same step when the input projection x W_x + b is already computed.
CellState rnn_cell_step_projected(const CellState& prev, const Tensor& x_proj, const RnnCellParams& params);

struct SequenceOutput {
  Tensor states;   // [B x T x h_out], zero at masked steps
  Tensor summary;  // [B x h_out]
};

/// Runs the stacked recurrence of `layers` (one entry per layer, one or two
/// directions each) over H [B x T x d]. Masked steps leave the state as is.
SequenceOutput run_sequence(const Tensor& H, const Tensor& mask, const DecoderConfig& cfg,
                            const std::vector<std::vector<RnnCellParams>>& layers, bool training, Rng& rng);

struct AttentionParams {
  Parameter w_a;  // [h_out x a]
  Parameter b_a;  // [a]
  Parameter v;    // [a x 1]
};

struct AttentionPool {
  Tensor context;  // [B x h_out]
  Tensor weights;  // [B x T]
};

/// Additive attention: e_t = v . tanh(W_a h_t + b_a), masked softmax over t,
/// context = sum_t alpha_t h_t.
AttentionPool attention_pool(const Tensor& states, const Tensor& mask, const AttentionParams& params);

struct DecoderOutput {
  Tensor logits;         // [B x L]
  Tensor probabilities;  // [B x L]
  std::optional<Tensor> attention_weights;
};

/// dropout(c) -> c W + b -> sigmoid.
DecoderOutput classify(const Tensor& summary, const Parameter& w, const Parameter& b, double dropout_p, bool training,
                       Rng& rng);

class Decoder {
 public:
  Decoder(const DecoderConfig& cfg, Rng& init_rng);

  /// H [B x T x d] from the encoder; mask [B x T].
  DecoderOutput forward(const Tensor& H, const Tensor& mask, bool training, Rng& rng) const;

  const DecoderConfig& config() const { return cfg_; }
  ParameterRefs parameters();
  Decoder clone() const;

 private:
  Decoder() = default;

  DecoderConfig cfg_;
  std::vector<std::vector<RnnCellParams>> layers_;
  std::optional<AttentionParams> attention_;
  Parameter head_w_;
  Parameter head_b_;
};

}  // namespace mlec
