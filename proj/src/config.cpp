#include "mlec/config.hpp"

#include <fstream>
#include <sstream>

namespace mlec {

namespace {

void strict_merge(ojson& base, const ojson& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config section '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    auto slot = base.find(it.key());
    if (slot == base.end()) throw ConfigError("unknown config key '" + key + "'");
    const ojson& v = it.value();
    if (slot->is_object()) {
      strict_merge(*slot, v, key);
      continue;
    }
    bool ok = false;
    if (slot->is_boolean()) ok = v.is_boolean();
    else if (slot->is_string()) ok = v.is_string();
    else if (slot->is_number_unsigned()) ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    else if (slot->is_number()) ok = v.is_number();
    if (!ok) throw ConfigError("config key '" + key + "' has the wrong type (expected " + slot->type_name() + ")");
    *slot = v;
  }
}

template <class T>
T field(const ojson& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(std::string("missing config key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace

ojson default_config_json() {
  return to_json(RunConfig{});
}

ojson to_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["data"] = {{"input", c.data.input},
               {"synthetic", c.data.synthetic},
               {"train_fraction", c.data.train_fraction},
               {"allow_zero_labels", c.data.allow_zero_labels},
               {"avg_labels", c.data.avg_labels}};
  j["tokenizer"] = {{"max_vocab", c.tokenizer.max_vocab}, {"min_freq", c.tokenizer.min_freq}, {"max_len", c.tokenizer.max_len}};
  j["encoder"] = {{"embed_dim", c.encoder.embed_dim},
                  {"layers", c.encoder.num_layers},
                  {"heads", c.encoder.num_heads},
                  {"ff_dim", c.encoder.feedforward_dim},
                  {"positional", to_string(c.encoder.positional)},
                  {"freeze", c.freeze_encoder}};
  j["decoder"] = {{"kind", to_string(c.decoder.kind)},
                  {"hidden_size", c.decoder.hidden_size},
                  {"num_layers", c.decoder.num_layers},
                  {"bidirectional", c.decoder.bidirectional},
                  {"dropout", c.decoder.dropout},
                  {"input_dropout", c.decoder.input_dropout}};
  j["train"] = {{"epochs", c.train.epochs},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"batch_size", c.train.batch_size},
                {"val_batch_size", c.train.val_batch_size},
                {"threshold", c.train.threshold},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"decoupled", c.train.decoupled}};
  j["tune"] = {{"trials", c.tune.trials},
               {"startup", c.tune.startup},
               {"gamma", c.tune.gamma},
               {"candidates", c.tune.candidates},
               {"objective", c.tune.objective},
               {"lr_narrow", c.tune.lr_narrow},
               {"lr_min", c.tune.lr_min},
               {"lr_max", c.tune.lr_max}};
  return j;
}

RunConfig run_config_from_json(const ojson& user) {
  ojson j = default_config_json();
  strict_merge(j, user, "");
  RunConfig c;
  c.seed = field<std::uint64_t>(j, "seed");
  const ojson& d = j["data"];
  c.data.input = field<std::string>(d, "input");
  c.data.synthetic = field<std::size_t>(d, "synthetic");
  c.data.train_fraction = field<double>(d, "train_fraction");
  c.data.allow_zero_labels = field<bool>(d, "allow_zero_labels");
  c.data.avg_labels = field<double>(d, "avg_labels");
  const ojson& t = j["tokenizer"];
  c.tokenizer.max_vocab = field<std::size_t>(t, "max_vocab");
  c.tokenizer.min_freq = field<std::size_t>(t, "min_freq");
  c.tokenizer.max_len = field<std::size_t>(t, "max_len");
  const ojson& e = j["encoder"];
  c.encoder.embed_dim = field<std::size_t>(e, "embed_dim");
  c.encoder.num_layers = field<std::size_t>(e, "layers");
  c.encoder.num_heads = field<std::size_t>(e, "heads");
  c.encoder.feedforward_dim = field<std::size_t>(e, "ff_dim");
  try {
    c.encoder.positional = positional_from_string(field<std::string>(e, "positional"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  c.encoder.max_len = c.tokenizer.max_len;
  c.freeze_encoder = field<bool>(e, "freeze");
  const ojson& dc = j["decoder"];
  try {
    c.decoder.kind = decoder_kind_from_string(field<std::string>(dc, "kind"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  c.decoder.hidden_size = field<std::size_t>(dc, "hidden_size");
  c.decoder.num_layers = field<std::size_t>(dc, "num_layers");
  c.decoder.bidirectional = field<bool>(dc, "bidirectional");
  c.decoder.dropout = field<double>(dc, "dropout");
  c.decoder.input_dropout = field<double>(dc, "input_dropout");
  const ojson& tr = j["train"];
  c.train.epochs = field<std::size_t>(tr, "epochs");
  c.train.learning_rate = field<double>(tr, "learning_rate");
  c.train.weight_decay = field<double>(tr, "weight_decay");
  c.train.batch_size = field<std::size_t>(tr, "batch_size");
  c.train.val_batch_size = field<std::size_t>(tr, "val_batch_size");
  c.train.threshold = field<double>(tr, "threshold");
  c.train.beta1 = field<double>(tr, "beta1");
  c.train.beta2 = field<double>(tr, "beta2");
  c.train.eps = field<double>(tr, "eps");
  c.train.decoupled = field<bool>(tr, "decoupled");
  c.train.seed = c.seed;
  const ojson& tu = j["tune"];
  c.tune.trials = field<std::size_t>(tu, "trials");
  c.tune.startup = field<std::size_t>(tu, "startup");
  c.tune.gamma = field<double>(tu, "gamma");
  c.tune.candidates = field<std::size_t>(tu, "candidates");
  c.tune.objective = field<std::string>(tu, "objective");
  c.tune.lr_narrow = field<bool>(tu, "lr_narrow");
  c.tune.lr_min = field<double>(tu, "lr_min");
  c.tune.lr_max = field<double>(tu, "lr_max");

  if (!(c.data.train_fraction > 0.0 && c.data.train_fraction < 1.0)) throw ConfigError("data.train_fraction must be in (0, 1)");
  if (c.tune.objective != "val-loss" && c.tune.objective != "weighted-f1") {
    throw ConfigError("tune.objective must be val-loss or weighted-f1");
  }
  if (!(c.tune.gamma > 0.0 && c.tune.gamma <= 1.0)) throw ConfigError("tune.gamma must be in (0, 1]");
  if (!(c.tune.lr_min > 0.0 && c.tune.lr_min < c.tune.lr_max)) throw ConfigError("tune.lr_min must be positive and below tune.lr_max");
  try {
    c.decoder.validate();
    c.train.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return c;
}

void apply_override(ojson& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  ojson value = ojson::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  ojson* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = ojson::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  ojson user = ojson::object();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("config file not found: " + file.string());
    user = ojson::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file is not valid JSON: " + file.string());
  }
  for (const auto& o : overrides) apply_override(user, o);
  return run_config_from_json(user);
}

ModelConfig model_config(const RunConfig& cfg, std::size_t vocab_size, std::size_t label_count) {
  ModelConfig m;
  m.encoder = cfg.encoder;
  m.encoder.vocab_size = vocab_size;
  m.encoder.max_len = cfg.tokenizer.max_len;
  m.decoder = cfg.decoder;
  m.decoder.label_count = label_count;
  m.decoder.input_dim = m.encoder.embed_dim;
  m.freeze_encoder = cfg.freeze_encoder;
  return m;
}

ojson model_config_to_json(const ModelConfig& m) {
  ojson j;
  j["encoder"] = {{"vocab_size", m.encoder.vocab_size},
                  {"embed_dim", m.encoder.embed_dim},
                  {"layers", m.encoder.num_layers},
                  {"heads", m.encoder.num_heads},
                  {"ff_dim", m.encoder.feedforward_dim},
                  {"positional", to_string(m.encoder.positional)},
                  {"max_len", m.encoder.max_len}};
  j["decoder"] = {{"kind", to_string(m.decoder.kind)},
                  {"hidden_size", m.decoder.hidden_size},
                  {"num_layers", m.decoder.num_layers},
                  {"bidirectional", m.decoder.bidirectional},
                  {"dropout", m.decoder.dropout},
                  {"input_dropout", m.decoder.input_dropout},
                  {"label_count", m.decoder.label_count},
                  {"input_dim", m.decoder.input_dim}};
  j["freeze_encoder"] = m.freeze_encoder;
  return j;
}

ModelConfig model_config_from_json(const ojson& j) {
  ModelConfig m;
  const ojson& e = j.at("encoder");
  m.encoder.vocab_size = field<std::size_t>(e, "vocab_size");
  m.encoder.embed_dim = field<std::size_t>(e, "embed_dim");
  m.encoder.num_layers = field<std::size_t>(e, "layers");
  m.encoder.num_heads = field<std::size_t>(e, "heads");
  m.encoder.feedforward_dim = field<std::size_t>(e, "ff_dim");
  m.encoder.positional = positional_from_string(field<std::string>(e, "positional"));
  m.encoder.max_len = field<std::size_t>(e, "max_len");
  const ojson& d = j.at("decoder");
  m.decoder.kind = decoder_kind_from_string(field<std::string>(d, "kind"));
  m.decoder.hidden_size = field<std::size_t>(d, "hidden_size");
  m.decoder.num_layers = field<std::size_t>(d, "num_layers");
  m.decoder.bidirectional = field<bool>(d, "bidirectional");
  m.decoder.dropout = field<double>(d, "dropout");
  m.decoder.input_dropout = field<double>(d, "input_dropout");
  m.decoder.label_count = field<std::size_t>(d, "label_count");
  m.decoder.input_dim = field<std::size_t>(d, "input_dim");
  m.freeze_encoder = field<bool>(j, "freeze_encoder");
  return m;
}

ojson train_config_to_json(const TrainConfig& t) {
  return ojson{{"epochs", t.epochs},
               {"learning_rate", t.learning_rate},
               {"weight_decay", t.weight_decay},
               {"batch_size", t.batch_size},
               {"val_batch_size", t.val_batch_size},
               {"seed", t.seed},
               {"threshold", t.threshold},
               {"beta1", t.beta1},
               {"beta2", t.beta2},
               {"eps", t.eps},
               {"decoupled", t.decoupled}};
}

TrainConfig train_config_from_json(const ojson& j) {
  TrainConfig t;
  t.epochs = field<std::size_t>(j, "epochs");
  t.learning_rate = field<double>(j, "learning_rate");
  t.weight_decay = field<double>(j, "weight_decay");
  t.batch_size = field<std::size_t>(j, "batch_size");
  t.val_batch_size = field<std::size_t>(j, "val_batch_size");
  t.seed = field<std::uint64_t>(j, "seed");
  t.threshold = field<double>(j, "threshold");
  t.beta1 = field<double>(j, "beta1");
  t.beta2 = field<double>(j, "beta2");
  t.eps = field<double>(j, "eps");
  t.decoupled = field<bool>(j, "decoupled");
  return t;
}

}  // namespace mlec
