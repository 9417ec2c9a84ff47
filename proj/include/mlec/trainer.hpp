#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlec/dataset.hpp"
#include "mlec/metrics.hpp"
#include "mlec/model.hpp"
#include "mlec/tokenizer.hpp"

namespace mlec {

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  std::size_t batch_size = 16;
  std::size_t val_batch_size = 4;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// false switches to L2 regularization folded into the gradient.
  bool decoupled = true;

  void validate() const;
};

/// Sum over labels, mean over the batch, of the stable per-element
/// max(x, 0) - x y + log(1 + exp(-|x|)).
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

struct AdamConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool decoupled = true;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t t = 0;
};

/// One Adam step over the parameters' current gradients. Decoupled decay
/// shrinks by (1 - lr * wd) before the moment update is applied, which is
/// w - lr * (m_hat / (sqrt(v_hat) + eps) + wd * w) evaluated in two parts.
/// Frozen parameters are skipped. A non-finite gradient throws TrainingError
/// naming the parameter, before anything is modified.
void adam_decoupled_step(const ParameterRefs& params, AdamState& state, const AdamConfig& cfg);

/// Token ids and targets ready for batching.
struct EncodedDataset {
  std::vector<EncodedSample> inputs;
  std::vector<LabelVector> labels;
  std::size_t label_count = 0;

  std::size_t size() const { return inputs.size(); }
};

EncodedDataset encode_dataset(const Dataset& data, const TokenVocab& vocab, std::size_t max_len);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_weighted_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// 1-based epoch with the lowest validation loss (earliest on ties).
  std::size_t best_epoch = 0;

  /// One JSON object per line.
  std::string to_jsonl() const;
};

struct EpochCallbackInfo {
  const EpochRecord& record;
  const Model& model;
};

/// Fixed-epoch training with seeded shuffling and dropout. The model keeps
/// its final-epoch weights.
TrainHistory train(Model& model, const EncodedDataset& train_set, const EncodedDataset& val_set, const TrainConfig& cfg,
                   const std::function<void(const EpochCallbackInfo&)>& on_epoch = {});

struct Predictions {
  std::size_t n = 0;
  std::size_t l = 0;
  /// Clamped to [1e-12, 1 - 1e-12].
  std::vector<double> probabilities;
  /// probability >= threshold, compared before clamping.
  std::vector<std::uint8_t> labels;
};

Predictions predict(const Model& model, const EncodedDataset& data, double threshold, std::size_t batch_size = 32);

/// Mean loss over a dataset in eval mode, batched like validation.
double evaluate_loss(const Model& model, const EncodedDataset& data, std::size_t batch_size);

PredictionSet to_prediction_set(const EncodedDataset& data, const Predictions& predictions);

}  // namespace mlec
