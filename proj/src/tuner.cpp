#include "mlec/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "mlec/rng.hpp"

namespace mlec {

Dimension Dimension::categorical(std::string name, std::vector<double> values) {
  Dimension d;
  d.name = std::move(name);
  d.type = Type::Categorical;
  d.values = std::move(values);
  d.validate();
  return d;
}

Dimension Dimension::uniform(std::string name, double lo, double hi) {
  Dimension d;
  d.name = std::move(name);
  d.type = Type::Uniform;
  d.lo = lo;
  d.hi = hi;
  d.validate();
  return d;
}

Dimension Dimension::loguniform(std::string name, double lo, double hi) {
  Dimension d = uniform(std::move(name), lo, hi);
  d.type = Type::LogUniform;
  d.validate();
  return d;
}

bool Dimension::contains(double x) const {
  if (!std::isfinite(x)) return false;
  if (type == Type::Categorical) return std::find(values.begin(), values.end(), x) != values.end();
  return x >= lo && x <= hi;
}

void Dimension::validate() const {
  if (type == Type::Categorical) {
    if (values.empty()) throw std::invalid_argument("dimension " + name + ": no categorical values");
    return;
  }
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("dimension " + name + ": need lo < hi");
  if (type == Type::LogUniform && !(lo > 0.0)) throw std::invalid_argument("dimension " + name + ": loguniform needs lo > 0");
}

SearchSpace SearchSpace::canonical(DecoderKind kind, double lr_lo, double lr_hi) {
  SearchSpace s;
  s.dims.push_back(Dimension::categorical("hidden_size", {64, 128, 256}));
  s.dims.push_back(Dimension::categorical("num_layers", {1, 2}));
  s.dims.push_back(Dimension::uniform("dropout", 0.1, 0.3));
  s.dims.push_back(Dimension::loguniform("learning_rate", lr_lo, lr_hi));
  s.dims.push_back(Dimension::categorical("batch_size", {4, 8, 16}));
  s.dims.push_back(Dimension::loguniform("weight_decay", 1e-6, 1e-3));
  if (kind == DecoderKind::GRU || kind == DecoderKind::LSTM) s.dims.push_back(Dimension::categorical("bidirectional", {1, 0}));
  return s;
}

SearchSpace SearchSpace::narrow_lr(DecoderKind kind) { return canonical(kind, 1e-5, 5e-5); }

const Dimension* SearchSpace::find(const std::string& name) const {
  for (const auto& d : dims)
    if (d.name == name) return &d;
  return nullptr;
}

bool SearchSpace::contains(const Params& p) const {
  if (p.size() != dims.size()) return false;
  for (const auto& d : dims) {
    const auto it = p.find(d.name);
    if (it == p.end() || !d.contains(it->second)) return false;
  }
  return true;
}

void SearchSpace::validate() const {
  if (dims.empty()) throw std::invalid_argument("search space has no dimensions");
  for (const auto& d : dims) d.validate();
}

std::string to_string(Objective o) { return o == Objective::MinValLoss ? "val-loss" : "weighted-f1"; }

Objective objective_from_string(const std::string& s) {
  if (s == "val-loss") return Objective::MinValLoss;
  if (s == "weighted-f1") return Objective::MaxWeightedF1;
  throw std::invalid_argument("unknown objective '" + s + "' (expected val-loss or weighted-f1)");
}

namespace {

double sample_dim(const Dimension& d, Rng& rng) {
  switch (d.type) {
    case Dimension::Type::Categorical: return d.values[rng.index(d.values.size())];
    case Dimension::Type::Uniform: return std::clamp(rng.uniform(d.lo, d.hi), d.lo, d.hi);
    case Dimension::Type::LogUniform:
      return std::clamp(std::exp(rng.uniform(std::log(d.lo), std::log(d.hi))), d.lo, d.hi);
  }
  return d.lo;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Parzen estimator over one numeric dimension, in the sampling domain
/// (log for loguniform dimensions).
class NumericParzen {
 public:
  NumericParzen(const Dimension& d, std::vector<double> points) : log_(d.type == Dimension::Type::LogUniform) {
    lo_ = log_ ? std::log(d.lo) : d.lo;
    hi_ = log_ ? std::log(d.hi) : d.hi;
    for (auto& p : points) p = std::clamp(log_ ? std::log(p) : p, lo_, hi_);
    mu_ = std::move(points);
    const double range = hi_ - lo_;
    sigma_ = mu_.empty() ? range : std::max(range / static_cast<double>(mu_.size()), 0.1 * range);
  }

  double log_density(double x) const {
    const double u = log_ ? std::log(x) : x;
    const double range = hi_ - lo_;
    if (mu_.empty()) return -std::log(range);
    double total = 0.0;
    for (double m : mu_) {
      const double mass = normal_cdf((hi_ - m) / sigma_) - normal_cdf((lo_ - m) / sigma_);
      const double z = (u - m) / sigma_;
      total += std::exp(-0.5 * z * z) / (sigma_ * std::sqrt(2.0 * M_PI) * std::max(mass, 1e-300));
    }
    return std::log(std::max(total / static_cast<double>(mu_.size()), 1e-300));
  }

  double sample(Rng& rng) const {
    double u;
    if (mu_.empty()) {
      u = rng.uniform(lo_, hi_);
    } else {
      const double m = mu_[rng.index(mu_.size())];
      u = m;
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double draw = rng.normal(m, sigma_);
        if (draw >= lo_ && draw <= hi_) {
          u = draw;
          break;
        }
      }
    }
    u = std::clamp(u, lo_, hi_);
    return log_ ? std::exp(u) : u;
  }

 private:
  bool log_;
  double lo_ = 0.0, hi_ = 1.0, sigma_ = 1.0;
  std::vector<double> mu_;
};

/// Laplace-smoothed frequencies over the categorical values.
class CategoricalParzen {
 public:
  CategoricalParzen(const Dimension& d, const std::vector<double>& points) : values_(d.values), weight_(d.values.size(), 1.0) {
    for (double p : points) {
      const auto it = std::find(values_.begin(), values_.end(), p);
      if (it != values_.end()) weight_[static_cast<std::size_t>(it - values_.begin())] += 1.0;
    }
    total_ = std::accumulate(weight_.begin(), weight_.end(), 0.0);
  }

  double log_density(double x) const {
    const auto it = std::find(values_.begin(), values_.end(), x);
    if (it == values_.end()) return -std::numeric_limits<double>::infinity();
    return std::log(weight_[static_cast<std::size_t>(it - values_.begin())] / total_);
  }

  double sample(Rng& rng) const {
    double u = rng.uniform() * total_;
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if (u < weight_[k]) return values_[k];
      u -= weight_[k];
    }
    return values_.back();
  }

 private:
  std::vector<double> values_;
  std::vector<double> weight_;
  double total_ = 0.0;
};

std::vector<double> column(const std::vector<Params>& history, const std::vector<std::size_t>& rows, const std::string& name) {
  std::vector<double> out;
  for (auto r : rows) {
    const auto it = history[r].find(name);
    if (it != history[r].end() && std::isfinite(it->second)) out.push_back(it->second);
  }
  return out;
}

}  // namespace

Params sample_random(const SearchSpace& space, Rng& rng) {
  Params p;
  for (const auto& d : space.dims) p[d.name] = sample_dim(d, rng);
  return p;
}

Params sample_tpe(const SearchSpace& space, const std::vector<Params>& history, const std::vector<double>& losses,
                  Rng& rng, const TpeConfig& cfg) {
  if (history.size() != losses.size()) throw std::invalid_argument("sample_tpe: history and losses differ in length");
  if (history.empty()) return sample_random(space, rng);
  const std::size_t n = history.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  const std::size_t n_good =
      std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cfg.gamma * static_cast<double>(n)))));
  const std::vector<std::size_t> good(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_good));
  const std::vector<std::size_t> bad(order.begin() + static_cast<std::ptrdiff_t>(n_good), order.end());

  const std::size_t n_candidates = std::max<std::size_t>(1, cfg.n_candidates);
  std::vector<Params> candidates(n_candidates);
  std::vector<double> score(n_candidates, 0.0);
  for (const auto& d : space.dims) {
    const auto g_points = column(history, good, d.name);
    const auto b_points = column(history, bad, d.name);
    if (d.type == Dimension::Type::Categorical) {
      const CategoricalParzen l(d, g_points), g(d, b_points);
      for (std::size_t c = 0; c < n_candidates; ++c) {
        const double x = l.sample(rng);
        candidates[c][d.name] = x;
        score[c] += l.log_density(x) - g.log_density(x);
      }
    } else {
      const NumericParzen l(d, g_points), g(d, b_points);
      for (std::size_t c = 0; c < n_candidates; ++c) {
        const double x = std::clamp(l.sample(rng), d.lo, d.hi);
        candidates[c][d.name] = x;
        score[c] += l.log_density(x) - g.log_density(x);
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < n_candidates; ++c)
    if (score[c] > score[best]) best = c;
  return candidates[best];
}

const Trial* Study::best() const {
  const Trial* best = nullptr;
  for (const auto& t : trials) {
    if (t.status != TrialStatus::Complete) continue;
    if (!best) {
      best = &t;
      continue;
    }
    const bool better = objective == Objective::MinValLoss ? t.objective < best->objective : t.objective > best->objective;
    if (better) best = &t;
  }
  return best;
}

const Trial& run_study(Study& study, const TrialRunner& runner, const std::function<void(const Trial&)>& on_trial) {
  study.space.validate();
  if (study.n_trials < 1) throw std::invalid_argument("run_study: n_trials must be at least 1");
  for (std::size_t id = study.trials.size(); id < study.n_trials; ++id) {
    std::vector<Params> history;
    std::vector<double> losses;
    for (const auto& t : study.trials) {
      if (t.status != TrialStatus::Complete) continue;
      history.push_back(t.params);
      losses.push_back(study.objective == Objective::MinValLoss ? t.objective : -t.objective);
    }
    Rng rng(derive_seed(study.seed, "trial", id));
    Trial trial;
    trial.id = id;
    trial.params = (id < study.tpe.n_startup || history.empty()) ? sample_random(study.space, rng)
                                                                  : sample_tpe(study.space, history, losses, rng, study.tpe);
    try {
      const TrialOutcome out = runner(trial.params, id);
      trial.val_loss = out.val_loss;
      trial.val_weighted_f1 = out.val_weighted_f1;
      if (std::isfinite(out.objective)) {
        trial.status = TrialStatus::Complete;
        trial.objective = out.objective;
      } else {
        trial.error = "non-finite objective";
      }
    } catch (const std::exception& ex) {
      trial.error = ex.what();
    }
    study.trials.push_back(trial);
    if (on_trial) on_trial(study.trials.back());
  }
  const Trial* best = study.best();
  if (!best) throw TunerError("all " + std::to_string(study.trials.size()) + " trials failed");
  return *best;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

std::optional<double> opt_from(const nlohmann::ordered_json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<double>();
}

}  // namespace

std::string trial_to_json_line(const Trial& t) {
  nlohmann::ordered_json j;
  j["id"] = t.id;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  for (const auto& [k, v] : t.params) params[k] = v;
  j["params"] = params;
  j["status"] = t.status == TrialStatus::Complete ? "complete" : "failed";
  j["objective"] = t.status == TrialStatus::Complete ? nlohmann::ordered_json(t.objective) : nlohmann::ordered_json(nullptr);
  j["val_loss"] = opt(t.val_loss);
  j["val_weighted_f1"] = opt(t.val_weighted_f1);
  if (!t.error.empty()) j["error"] = t.error;
  return j.dump();
}

Trial trial_from_json_line(const std::string& line) {
  const auto j = nlohmann::ordered_json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw TunerError("study log line is not a JSON object");
  try {
    Trial t;
    t.id = j.at("id").get<std::size_t>();
    for (const auto& [k, v] : j.at("params").items()) t.params[k] = v.get<double>();
    const std::string status = j.at("status").get<std::string>();
    if (status == "complete") {
      t.status = TrialStatus::Complete;
      t.objective = j.at("objective").get<double>();
    } else if (status == "failed") {
      t.status = TrialStatus::Failed;
    } else {
      throw TunerError("unknown trial status '" + status + "'");
    }
    t.val_loss = opt_from(j, "val_loss");
    t.val_weighted_f1 = opt_from(j, "val_weighted_f1");
    if (j.contains("error")) t.error = j.at("error").get<std::string>();
    return t;
  } catch (const nlohmann::json::exception& ex) {
    throw TunerError(std::string("malformed study log line: ") + ex.what());
  }
}

std::vector<Trial> load_study_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TunerError("study log not found: " + path.string());
  std::vector<Trial> trials;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Trial t = trial_from_json_line(line);
    if (t.id != trials.size()) throw TunerError("study log ids are not consecutive at id " + std::to_string(t.id));
    trials.push_back(std::move(t));
  }
  return trials;
}

}  // namespace mlec
