#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlec/decoder.hpp"

namespace mlec {

class Rng;

struct TunerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dimension {
  enum class Type { Categorical, Uniform, LogUniform };

  std::string name;
  Type type = Type::Uniform;
  std::vector<double> values;  // categorical choices
  double lo = 0.0;
  double hi = 1.0;

  static Dimension categorical(std::string name, std::vector<double> values);
  static Dimension uniform(std::string name, double lo, double hi);
  static Dimension loguniform(std::string name, double lo, double hi);

  bool contains(double x) const;
  void validate() const;
};

/// Hyperparameters by name. Booleans are stored as 0/1.
using Params = std::map<std::string, double>;

struct SearchSpace {
  std::vector<Dimension> dims;

  /// hidden_size {64,128,256}, num_layers {1,2}, dropout U[0.1,0.3],
  /// learning_rate LogU[lr_lo,lr_hi], batch_size {4,8,16},
  /// weight_decay LogU[1e-6,1e-3], and bidirectional {0,1} for GRU/LSTM only.
  static SearchSpace canonical(DecoderKind kind, double lr_lo = 1e-5, double lr_hi = 1e-1);
  /// canonical() with learning_rate narrowed to LogU[1e-5, 5e-5].
  static SearchSpace narrow_lr(DecoderKind kind);

  const Dimension* find(const std::string& name) const;
  bool contains(const Params& p) const;
  void validate() const;
};

enum class TrialStatus { Complete, Failed };
enum class Objective { MinValLoss, MaxWeightedF1 };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct Trial {
  std::size_t id = 0;
  Params params;
  TrialStatus status = TrialStatus::Failed;
  double objective = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_weighted_f1;
  std::string error;
};

struct TpeConfig {
  double gamma = 0.25;
  std::size_t n_candidates = 24;
  std::size_t n_startup = 5;
};

struct Study {
  SearchSpace space;
  Objective objective = Objective::MinValLoss;
  std::vector<Trial> trials;
  std::uint64_t seed = 0;
  std::size_t n_trials = 10;
  TpeConfig tpe;

  /// Best completed trial, earliest id on ties; nullptr when none completed.
  const Trial* best() const;
};

Params sample_random(const SearchSpace& space, Rng& rng);

/// Independent per-dimension TPE over completed trials, where lower `losses`
/// are better. Falls back to sample_random when history is empty.
Params sample_tpe(const SearchSpace& space, const std::vector<Params>& history, const std::vector<double>& losses,
                  Rng& rng, const TpeConfig& cfg);

struct TrialOutcome {
  double objective = 0.0;
  std::optional<double> val_loss;
  std::optional<double> val_weighted_f1;
};

using TrialRunner = std::function<TrialOutcome(const Params&, std::size_t trial_id)>;

/// Runs trials until study.trials.size() == n_trials, continuing after any
/// trials already present. Trial t draws from a stream seeded by (seed, t),
/// so a resumed study matches an uninterrupted one. A runner that throws or
/// returns a non-finite objective marks the trial failed. Throws TunerError if
/// no trial completed.
const Trial& run_study(Study& study, const TrialRunner& runner,
                       const std::function<void(const Trial&)>& on_trial = {});

/// One JSON object per trial: {"id", "params", "status", "objective", "val_loss", "val_weighted_f1"}.
std::string trial_to_json_line(const Trial& trial);
Trial trial_from_json_line(const std::string& line);
std::vector<Trial> load_study_log(const std::filesystem::path& path);

}  // namespace mlec
