#include "mlec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mlec/rng.hpp"
#include "tensor_node.hpp"

namespace mlec {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("train: learning_rate must be >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("train: threshold must be in (0, 1)");
  if (batch_size == 0 || val_batch_size == 0) throw std::invalid_argument("train: batch sizes must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("train: betas must be in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be positive");
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2 || logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
  }
  const std::size_t B = logits.dim(0);
  if (B == 0) throw ShapeError("bce_with_logits: empty batch");
  const auto x = logits.data();
  const auto y = targets.data();
  double total = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    total += std::max(x[k], 0.0) - x[k] * y[k] + std::log1p(std::exp(-std::abs(x[k])));
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  return detail::make_result({}, {total * inv_b}, {logits, targets}, [inv_b](Tensor::Node& self) {
    const double up = self.grad[0] * inv_b;
    const auto& xv = self.inputs[0]->value;
    const auto& yv = self.inputs[1]->value;
    if (detail::wants_grad(self.inputs[0])) {
      auto& gx = self.inputs[0]->grad_buffer();
      for (std::size_t k = 0; k < xv.size(); ++k) {
        const double s = xv[k] >= 0.0 ? 1.0 / (1.0 + std::exp(-xv[k])) : std::exp(xv[k]) / (1.0 + std::exp(xv[k]));
        gx[k] += up * (s - yv[k]);
      }
    }
    if (detail::wants_grad(self.inputs[1])) {
      auto& gy = self.inputs[1]->grad_buffer();
      for (std::size_t k = 0; k < xv.size(); ++k) gy[k] -= up * xv[k];
    }
  });
}

void adam_decoupled_step(const ParameterRefs& params, AdamState& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam: optimizer state was built for a different parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = *params[k];
    if (p.frozen) continue;
    const std::size_t n = p.value.numel();
    if (state.m[k].empty()) {
      state.m[k].assign(n, 0.0);
      state.v[k].assign(n, 0.0);
    }
    if (state.m[k].size() != n) throw std::invalid_argument("adam: state shape mismatch for " + p.name);
    const auto g = p.value.grad();
    if (g.empty()) continue;
    for (double gi : g) {
      if (!std::isfinite(gi)) throw TrainingError("non-finite gradient in parameter " + p.name);
    }
  }

  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double shrink = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (p.frozen) continue;
    const auto g = p.value.grad();
    auto w = p.value.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      double gi = g.empty() ? 0.0 : g[i];
      if (!cfg.decoupled) gi = gi + cfg.weight_decay * w[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * (gi * gi);
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      if (cfg.decoupled) w[i] = w[i] * shrink;
      w[i] = w[i] - cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

EncodedDataset encode_dataset(const Dataset& data, const TokenVocab& vocab, std::size_t max_len) {
  EncodedDataset out;
  out.label_count = data.vocab.size();
  out.inputs.reserve(data.size());
  for (const auto& s : data.samples) {
    if (s.labels.size() != out.label_count) throw DatasetError("encode_dataset: label vector width mismatch");
    out.inputs.push_back(encode(s.code, vocab, max_len));
    out.labels.push_back(s.labels);
  }
  return out;
}

std::string TrainHistory::to_jsonl() const {
  std::ostringstream out;
  for (const auto& r : epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["val_loss"] = r.val_loss;
    j["val_weighted_f1"] = r.val_weighted_f1;
    j["best_epoch"] = best_epoch;
    out << j.dump() << '\n';
  }
  return out.str();
}

namespace {

Tensor batch_targets(const EncodedDataset& data, const std::vector<std::size_t>& rows) {
  std::vector<double> t;
  t.reserve(rows.size() * data.label_count);
  for (auto r : rows)
    for (auto v : data.labels[r]) t.push_back(v);
  return Tensor::from_vector({rows.size(), data.label_count}, std::move(t));
}

struct EvalPass {
  double mean_loss = 0.0;
  Predictions predictions;
};

EvalPass eval_pass(const Model& model, const EncodedDataset& data, double threshold, std::size_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluation on an empty dataset");
  const std::size_t L = model.config().decoder.label_count;
  EvalPass out;
  out.predictions.n = data.size();
  out.predictions.l = L;
  out.predictions.probabilities.reserve(data.size() * L);
  out.predictions.labels.reserve(data.size() * L);
  Rng unused(0);
  double total = 0.0;
  for (const auto& rows : make_batches(data.size(), batch_size)) {
    const EncodedBatch batch = make_encoded_batch(data.inputs, rows);
    const DecoderOutput res = model.forward(batch, false, unused);
    if (!data.labels.empty()) {
      total += bce_with_logits(res.logits.detach(), batch_targets(data, rows)).item() * static_cast<double>(rows.size());
    }
    for (double p : res.probabilities.data()) {
      out.predictions.labels.push_back(p >= threshold ? 1 : 0);
      out.predictions.probabilities.push_back(std::clamp(p, 1e-12, 1.0 - 1e-12));
    }
  }
  out.mean_loss = total / static_cast<double>(data.size());
  return out;
}

}  // namespace

Predictions predict(const Model& model, const EncodedDataset& data, double threshold, std::size_t batch_size) {
  return eval_pass(model, data, threshold, batch_size).predictions;
}

double evaluate_loss(const Model& model, const EncodedDataset& data, std::size_t batch_size) {
  return eval_pass(model, data, 0.5, batch_size).mean_loss;
}

PredictionSet to_prediction_set(const EncodedDataset& data, const Predictions& predictions) {
  if (data.size() != predictions.n || data.label_count != predictions.l) {
    throw MetricError("predictions do not match the dataset shape");
  }
  PredictionSet ps;
  ps.n = predictions.n;
  ps.l = predictions.l;
  for (const auto& row : data.labels) ps.y_true.insert(ps.y_true.end(), row.begin(), row.end());
  ps.y_pred = predictions.labels;
  ps.scores = predictions.probabilities;
  return ps;
}

TrainHistory train(Model& model, const EncodedDataset& train_set, const EncodedDataset& val_set, const TrainConfig& cfg,
                   const std::function<void(const EpochCallbackInfo&)>& on_epoch) {
  cfg.validate();
  if (train_set.size() == 0 || val_set.size() == 0) throw std::invalid_argument("train: empty train or validation split");
  if (train_set.label_count != model.config().decoder.label_count) {
    throw std::invalid_argument("train: dataset has " + std::to_string(train_set.label_count) + " labels, model expects " +
                                std::to_string(model.config().decoder.label_count));
  }
  const AdamConfig adam{cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps, cfg.decoupled};
  const ParameterRefs params = model.trainable_parameters();
  AdamState state;
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  TrainHistory history;
  double best_val = 0.0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = make_batches(train_set.size(), cfg.batch_size, derive_seed(cfg.seed, "shuffle", epoch));
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& rows = batches[bi];
      model.zero_grad();
      const EncodedBatch batch = make_encoded_batch(train_set.inputs, rows);
      const DecoderOutput out = model.forward(batch, true, dropout_rng);
      const Tensor loss = bce_with_logits(out.logits, batch_targets(train_set, rows));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi + 1));
      }
      backward(loss);
      adam_decoupled_step(params, state, adam);
      total += value * static_cast<double>(rows.size());
    }

    const EvalPass val = eval_pass(model, val_set, cfg.threshold, cfg.val_batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(train_set.size());
    rec.val_loss = val.mean_loss;
    rec.val_weighted_f1 = prf(confusion(to_prediction_set(val_set, val.predictions)), Averaging::Weighted).f1;
    if (!std::isfinite(rec.val_loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    if (history.best_epoch == 0 || rec.val_loss < best_val) {
      history.best_epoch = epoch;
      best_val = rec.val_loss;
    }
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(EpochCallbackInfo{history.epochs.back(), model});
  }
  model.zero_grad();
  return history;
}

}  // namespace mlec
