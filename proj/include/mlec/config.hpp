#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mlec/model.hpp"
#include "mlec/trainer.hpp"

namespace mlec {

using ojson = nlohmann::ordered_json;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DataSection {
  std::string input;
  std::size_t synthetic = 0;
  double train_fraction = 0.8;
  bool allow_zero_labels = true;
  double avg_labels = 3.0;
};

struct TokenizerSection {
  std::size_t max_vocab = 5000;
  std::size_t min_freq = 1;
  std::size_t max_len = kDefaultMaxLen;
};

struct TuneSection {
  std::size_t trials = 10;
  std::size_t startup = 5;
  double gamma = 0.25;
  std::size_t candidates = 24;
  std::string objective = "val-loss";
  bool lr_narrow = false;
  double lr_min = 1e-5;
  double lr_max = 1e-1;
};

/// Everything a CLI run reads. Every field has a default; see
/// default_config_json() for the file layout.
struct RunConfig {
  std::uint64_t seed = 0;
  DataSection data;
  TokenizerSection tokenizer;
  EncoderConfig encoder;  // vocab_size filled in once the vocabulary exists
  bool freeze_encoder = false;
  DecoderConfig decoder;
  TrainConfig train;
  TuneSection tune;
};

/// The defaults as nested JSON, which is also the accepted schema.
ojson default_config_json();

/// Overlays `user` on the defaults. Unknown keys and wrongly typed values throw ConfigError.
RunConfig run_config_from_json(const ojson& user);
ojson to_json(const RunConfig& cfg);

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible and otherwise taken as a string.
void apply_override(ojson& doc, const std::string& assignment);

/// Reads an optional config file, then applies overrides in order.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size, std::size_t label_count);

ojson model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const ojson& j);
ojson train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const ojson& j);

}  // namespace mlec
