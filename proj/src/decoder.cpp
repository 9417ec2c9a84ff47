#include "mlec/decoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "mlec/rng.hpp"

namespace mlec {

std::string to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::GRU: return "gru";
    case DecoderKind::LSTM: return "lstm";
    case DecoderKind::BiLSTM: return "bilstm";
    case DecoderKind::BiLSTM_A: return "bilstm-a";
  }
  return "?";
}

DecoderKind decoder_kind_from_string(const std::string& s) {
  std::string k;
  for (char c : s) k.push_back(c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (k == "gru") return DecoderKind::GRU;
  if (k == "lstm") return DecoderKind::LSTM;
  if (k == "bilstm") return DecoderKind::BiLSTM;
  if (k == "bilstm-a") return DecoderKind::BiLSTM_A;
  throw std::invalid_argument("unknown decoder kind '" + s + "' (expected gru, lstm, bilstm or bilstm-a)");
}

bool DecoderConfig::is_bidirectional() const {
  return kind == DecoderKind::BiLSTM || kind == DecoderKind::BiLSTM_A || bidirectional;
}

void DecoderConfig::validate() const {
  if (hidden_size == 0) throw std::invalid_argument("decoder: hidden_size must be positive");
  if (num_layers < 1 || num_layers > 2) throw std::invalid_argument("decoder: num_layers must be 1 or 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("decoder: dropout must be in [0, 1)");
  if (!(input_dropout >= 0.0 && input_dropout < 1.0)) throw std::invalid_argument("decoder: input_dropout must be in [0, 1)");
  if (label_count == 0) throw std::invalid_argument("decoder: label_count must be positive");
  if (input_dim == 0) throw std::invalid_argument("decoder: input_dim must be positive");
}

namespace {

Parameter clone_param(const Parameter& p) {
  if (!p.value.defined()) return p;
  return Parameter{p.name, p.value.clone(), p.frozen};
}

RnnCellParams clone_cell(const RnnCellParams& p) {
  RnnCellParams c = p;
  c.w_x = clone_param(p.w_x);
  c.b = clone_param(p.b);
  c.u_zr = clone_param(p.u_zr);
  c.u_n = clone_param(p.u_n);
  c.u = clone_param(p.u);
  return c;
}

std::size_t gate_count(CellKind kind) { return kind == CellKind::GRU ? 3 : 4; }

}  // namespace

RnnCellParams RnnCellParams::init(CellKind kind, std::size_t input_dim, std::size_t hidden_size,
                                  const std::string& prefix, Rng& rng) {
  RnnCellParams p;
  p.kind = kind;
  p.input_dim = input_dim;
  p.hidden_size = hidden_size;
  const std::size_t h = hidden_size;
  const std::size_t width = gate_count(kind) * h;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  p.w_x = make_parameter(prefix + "w_x", uniform_init({input_dim, width}, bound, rng));
  if (kind == CellKind::GRU) {
    p.u_zr = make_parameter(prefix + "u_zr", uniform_init({h, 2 * h}, bound, rng));
    p.u_n = make_parameter(prefix + "u_n", uniform_init({h, h}, bound, rng));
    p.b = make_parameter(prefix + "b", Tensor::zeros({width}));
  } else {
    p.u = make_parameter(prefix + "u", uniform_init({h, width}, bound, rng));
    Tensor b = Tensor::zeros({width});
    auto bv = b.mutable_data();
    std::fill(bv.begin() + static_cast<std::ptrdiff_t>(h), bv.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0);
    p.b = make_parameter(prefix + "b", b);
  }
  return p;
}

ParameterRefs RnnCellParams::refs() {
  if (kind == CellKind::GRU) return {&w_x, &u_zr, &u_n, &b};
  return {&w_x, &u, &b};
}

CellState CellState::zeros(CellKind kind, std::size_t batch, std::size_t hidden) {
  CellState s{Tensor::zeros({batch, hidden}), {}};
  if (kind == CellKind::LSTM) s.c = Tensor::zeros({batch, hidden});
  return s;
}

CellState rnn_cell_step_projected(const CellState& prev, const Tensor& xp, const RnnCellParams& p) {
  const std::size_t h = p.hidden_size;
  if (xp.rank() != 2 || xp.dim(1) != gate_count(p.kind) * h || prev.h.rank() != 2 || prev.h.dim(1) != h ||
      prev.h.dim(0) != xp.dim(0)) {
    throw ShapeError("rnn_cell_step: state " + shape_str(prev.h.shape()) + " and projection " + shape_str(xp.shape()) +
                     " do not fit hidden size " + std::to_string(h));
  }
  const Tensor& hp = prev.h;
  if (p.kind == CellKind::GRU) {
    const Tensor zr = sigmoid(add(narrow(xp, 1, 0, 2 * h), matmul(hp, p.u_zr.value)));
    const Tensor z = narrow(zr, 1, 0, h);
    const Tensor r = narrow(zr, 1, h, h);
    const Tensor n = tanh(add(narrow(xp, 1, 2 * h, h), matmul(mul(r, hp), p.u_n.value)));
    return CellState{add(n, mul(z, sub(hp, n))), {}};
  }
  if (!prev.c.defined() || prev.c.shape() != hp.shape()) throw ShapeError("rnn_cell_step: LSTM needs a cell state");
  const Tensor gates = add(xp, matmul(hp, p.u.value));
  const Tensor ifo = sigmoid(narrow(gates, 1, 0, 3 * h));
  const Tensor i = narrow(ifo, 1, 0, h);
  const Tensor f = narrow(ifo, 1, h, h);
  const Tensor o = narrow(ifo, 1, 2 * h, h);
  const Tensor g = tanh(narrow(gates, 1, 3 * h, h));
  const Tensor c = add(mul(f, prev.c), mul(i, g));
  return CellState{mul(o, tanh(c)), c};
}

CellState rnn_cell_step(const CellState& prev, const Tensor& x, const RnnCellParams& p) {
  const bool vector_form = x.rank() == 1;
  const Tensor x2 = vector_form ? reshape(x, {1, x.dim(0)}) : x;
  if (x2.rank() != 2 || x2.dim(1) != p.input_dim) {
    throw ShapeError("rnn_cell_step: input " + shape_str(x.shape()) + " for input size " + std::to_string(p.input_dim));
  }
  CellState prev2 = prev;
  if (vector_form) {
    if (prev.h.rank() != 1) throw ShapeError("rnn_cell_step: vector input needs a vector state");
    prev2.h = reshape(prev.h, {1, prev.h.dim(0)});
    if (prev.c.defined()) prev2.c = reshape(prev.c, {1, prev.c.dim(0)});
  }
  CellState next = rnn_cell_step_projected(prev2, add_rowwise(matmul(x2, p.w_x.value), p.b.value), p);
  if (vector_form) {
    next.h = reshape(next.h, {p.hidden_size});
    if (next.c.defined()) next.c = reshape(next.c, {p.hidden_size});
  }
  return next;
}

namespace {

struct DirectionOutput {
  std::vector<Tensor> steps;  // per t, [B x h], zero where masked
  Tensor last;                // state after the whole sweep
};

DirectionOutput run_direction(const Tensor& X, const Tensor& mask, const RnnCellParams& p, bool reverse) {
  const std::size_t B = X.dim(0), T = X.dim(1), in = X.dim(2), h = p.hidden_size;
  if (in != p.input_dim) {
    throw ShapeError("run_sequence: input width " + std::to_string(in) + " but cell expects " + std::to_string(p.input_dim));
  }
  const std::size_t width = gate_count(p.kind) * h;
  const Tensor proj = reshape(add_rowwise(matmul(reshape(X, {B * T, in}), p.w_x.value), p.b.value), {B, T, width});
  const Tensor zero = Tensor::zeros({B, h});
  CellState state = CellState::zeros(p.kind, B, h);
  DirectionOutput out;
  out.steps.resize(T);
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t t = reverse ? T - 1 - i : i;
    const Tensor keep = select(mask, 1, t);
    const CellState next = rnn_cell_step_projected(state, select(proj, 1, t), p);
    state.h = masked_update(state.h, next.h, keep);
    if (p.kind == CellKind::LSTM) state.c = masked_update(state.c, next.c, keep);
    out.steps[t] = masked_update(zero, state.h, keep);
  }
  out.last = state.h;
  return out;
}

}  // namespace

SequenceOutput run_sequence(const Tensor& H, const Tensor& mask, const DecoderConfig& cfg,
                            const std::vector<std::vector<RnnCellParams>>& layers, bool training, Rng& rng) {
  if (H.rank() != 3) throw ShapeError("run_sequence: expected [B x T x d], got " + shape_str(H.shape()));
  if (mask.rank() != 2 || mask.dim(0) != H.dim(0) || mask.dim(1) != H.dim(1)) {
    throw ShapeError("run_sequence: mask " + shape_str(mask.shape()) + " for input " + shape_str(H.shape()));
  }
  if (layers.empty()) throw std::invalid_argument("run_sequence: no layers");
  Tensor X = H;
  SequenceOutput out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0) X = dropout(X, cfg.dropout, training, rng);
    const auto& dirs = layers[l];
    DirectionOutput fwd = run_direction(X, mask, dirs.at(0), false);
    if (dirs.size() == 1) {
      out.states = stack(fwd.steps, 1);
      out.summary = fwd.last;
    } else {
      DirectionOutput bwd = run_direction(X, mask, dirs.at(1), true);
      std::vector<Tensor> both(fwd.steps.size());
      for (std::size_t t = 0; t < both.size(); ++t) both[t] = concat({fwd.steps[t], bwd.steps[t]}, 1);
      out.states = stack(both, 1);
      out.summary = concat({fwd.last, bwd.last}, 1);
    }
    X = out.states;
  }
  return out;
}

AttentionPool attention_pool(const Tensor& states, const Tensor& mask, const AttentionParams& p) {
  if (states.rank() != 3) throw ShapeError("attention_pool: expected [B x T x h], got " + shape_str(states.shape()));
  const std::size_t B = states.dim(0), T = states.dim(1), H = states.dim(2);
  if (mask.shape() != Shape{B, T}) throw ShapeError("attention_pool: mask " + shape_str(mask.shape()));
  const Tensor hidden = tanh(add_rowwise(matmul(reshape(states, {B * T, H}), p.w_a.value), p.b_a.value));
  const Tensor scores = reshape(matmul(hidden, p.v.value), {B, T});
  for (std::size_t b = 0; b < B; ++b) {
    bool any = false;
    for (std::size_t t = 0; t < T && !any; ++t) any = mask.data()[b * T + t] != 0.0;
    if (!any) throw std::invalid_argument("attention_pool: row " + std::to_string(b) + " is fully masked");
  }
  const Tensor alpha = softmax(scores, 1, mask);
  const Tensor context = reshape(bmm(reshape(alpha, {B, 1, T}), states), {B, H});
  return AttentionPool{context, alpha};
}

DecoderOutput classify(const Tensor& summary, const Parameter& w, const Parameter& b, double dropout_p, bool training,
                       Rng& rng) {
  if (summary.rank() != 2 || summary.dim(1) != w.value.dim(0)) {
    throw ShapeError("classify: summary " + shape_str(summary.shape()) + " vs weight " + shape_str(w.value.shape()));
  }
  const Tensor logits = add_rowwise(matmul(dropout(summary, dropout_p, training, rng), w.value), b.value);
  return DecoderOutput{logits, sigmoid(logits), std::nullopt};
}

Decoder::Decoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t h = cfg_.hidden_size;
  std::size_t in = cfg_.input_dim;
  for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
    std::vector<RnnCellParams> dirs;
    for (std::size_t d = 0; d < cfg_.directions(); ++d) {
      const std::string prefix = "decoder.layer" + std::to_string(l) + (d == 0 ? ".fwd." : ".bwd.");
      dirs.push_back(RnnCellParams::init(cfg_.cell(), in, h, prefix, rng));
    }
    layers_.push_back(std::move(dirs));
    in = cfg_.output_dim();
  }
  const std::size_t out = cfg_.output_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(out));
  if (cfg_.kind == DecoderKind::BiLSTM_A) {
    attention_ = AttentionParams{
        make_parameter("decoder.attention.w_a", uniform_init({out, out}, bound, rng)),
        make_parameter("decoder.attention.b_a", Tensor::zeros({out})),
        make_parameter("decoder.attention.v", uniform_init({out, 1}, bound, rng)),
    };
  }
  head_w_ = make_parameter("decoder.head.w", uniform_init({out, cfg_.label_count}, bound, rng));
  head_b_ = make_parameter("decoder.head.b", Tensor::zeros({cfg_.label_count}));
}

DecoderOutput Decoder::forward(const Tensor& H, const Tensor& mask, bool training, Rng& rng) const {
  if (H.rank() != 3 || H.dim(2) != cfg_.input_dim) {
    throw ShapeError("decoder: expected [B x T x " + std::to_string(cfg_.input_dim) + "], got " + shape_str(H.shape()));
  }
  const Tensor X = dropout(H, cfg_.input_dropout, training, rng);
  const SequenceOutput seq = run_sequence(X, mask, cfg_, layers_, training, rng);
  if (attention_) {
    const AttentionPool pool = attention_pool(seq.states, mask, *attention_);
    DecoderOutput out = classify(pool.context, head_w_, head_b_, cfg_.dropout, training, rng);
    out.attention_weights = pool.weights;
    return out;
  }
  return classify(seq.summary, head_w_, head_b_, cfg_.dropout, training, rng);
}

ParameterRefs Decoder::parameters() {
  ParameterRefs refs;
  for (auto& dirs : layers_)
    for (auto& cell : dirs)
      for (auto* p : cell.refs()) refs.push_back(p);
  if (attention_) {
    refs.push_back(&attention_->w_a);
    refs.push_back(&attention_->b_a);
    refs.push_back(&attention_->v);
  }
  refs.push_back(&head_w_);
  refs.push_back(&head_b_);
  return refs;
}

Decoder Decoder::clone() const {
  Decoder copy;
  copy.cfg_ = cfg_;
  for (const auto& dirs : layers_) {
    std::vector<RnnCellParams> cells;
    for (const auto& cell : dirs) cells.push_back(clone_cell(cell));
    copy.layers_.push_back(std::move(cells));
  }
  if (attention_) {
    copy.attention_ = AttentionParams{clone_param(attention_->w_a), clone_param(attention_->b_a), clone_param(attention_->v)};
  }
  copy.head_w_ = clone_param(head_w_);
  copy.head_b_ = clone_param(head_b_);
  return copy;
}

}  // namespace mlec
