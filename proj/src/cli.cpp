#include "mlec/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mlec/checkpoint.hpp"
#include "mlec/dataset.hpp"
#include "mlec/metrics.hpp"
#include "mlec/rng.hpp"
#include "mlec/tokenizer.hpp"
#include "mlec/trainer.hpp"

namespace mlec {

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "mlec-out";
  std::vector<std::string> set;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = load_run_config(g.config, g.set);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  return cfg;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("file not found: " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ojson read_json(const fs::path& path) {
  const auto j = ojson::parse(read_text(path), nullptr, false);
  if (j.is_discarded()) throw std::runtime_error(path.string() + " is not valid JSON");
  return j;
}

std::string dataset_text(const Dataset& d) {
  std::string out;
  for (const auto& s : d.samples) out += to_record_line(s, d.vocab) + "\n";
  return out;
}

LabelVocab manifest_labels(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) return LabelVocab::canonical();
  return LabelVocab(read_json(manifest).at("labels").get<std::vector<std::string>>());
}

struct PreparedData {
  Dataset train;
  Dataset val;
  TokenVocab vocab;
};

PreparedData load_prepared(const fs::path& dir) {
  for (const char* f : {"train.jsonl", "val.jsonl", "vocab.txt"}) {
    if (!fs::exists(dir / f)) throw std::runtime_error("prepared data missing: " + (dir / f).string() + " (run prepare first)");
  }
  const LabelVocab labels = manifest_labels(dir);
  return PreparedData{load_dataset(dir / "train.jsonl", labels), load_dataset(dir / "val.jsonl", labels),
                      TokenVocab::load(dir / "vocab.txt")};
}

ojson params_json(const Params& p) {
  ojson j = ojson::object();
  for (const auto& [k, v] : p) j[k] = v;
  return j;
}

// ---- prepare -----------------------------------------------------------------

int cmd_prepare(const Globals& g, const std::string& input, std::optional<std::size_t> synthetic, std::ostream& out) {
  RunConfig cfg = resolve_config(g);
  if (!input.empty()) cfg.data.input = input;
  if (synthetic) cfg.data.synthetic = *synthetic;
  const LabelVocab labels = LabelVocab::canonical();

  Dataset raw;
  std::string source;
  if (cfg.data.synthetic > 0) {
    SyntheticConfig syn;
    syn.avg_labels = cfg.data.avg_labels;
    raw = generate_synthetic(cfg.data.synthetic, labels, derive_seed(cfg.seed, "synthetic"), syn);
    source = "synthetic:" + std::to_string(cfg.data.synthetic);
  } else {
    if (cfg.data.input.empty()) throw std::runtime_error("prepare needs --input PATH or --synthetic N");
    if (!fs::exists(cfg.data.input)) throw std::runtime_error("input file not found: " + cfg.data.input);
    raw = load_dataset(cfg.data.input, labels);
    source = fs::path(cfg.data.input).filename().string();
  }
  const std::size_t n_raw = raw.size();
  const Dataset clean = drop_invalid(clean_dataset(std::move(raw)), cfg.data.allow_zero_labels);
  auto [train, val] = stratified_split(clean, SplitConfig{cfg.data.train_fraction, derive_seed(cfg.seed, "split")});
  const TokenVocab vocab = build_vocab(train, cfg.tokenizer.max_vocab, cfg.tokenizer.min_freq);

  ojson manifest;
  manifest["source"] = source;
  manifest["seed"] = cfg.seed;
  manifest["records_read"] = n_raw;
  manifest["records_kept"] = clean.size();
  manifest["train_fraction"] = cfg.data.train_fraction;
  manifest["train_size"] = train.size();
  manifest["val_size"] = val.size();
  manifest["labels"] = labels.names();
  manifest["train_label_counts"] = train.label_counts();
  manifest["val_label_counts"] = val.label_counts();
  manifest["vocab_size"] = vocab.size();
  manifest["max_len"] = cfg.tokenizer.max_len;
  manifest["files"] = {"train.jsonl", "val.jsonl", "vocab.txt"};

  std::ostringstream vocab_text;
  vocab.write(vocab_text);
  const std::vector<std::pair<std::string, std::string>> files{{"train.jsonl", dataset_text(train)},
                                                               {"val.jsonl", dataset_text(val)},
                                                               {"vocab.txt", vocab_text.str()},
                                                               {"manifest.json", manifest.dump(2) + "\n"}};
  const fs::path dir(g.out_dir);
  fs::create_directories(dir);
  for (const auto& [name, text] : files) write_file_atomic(dir / name, text);
  out << "prepared " << train.size() << " train / " << val.size() << " val samples, vocab " << vocab.size() << " -> "
      << dir.string() << "\n";
  return 0;
}

// ---- train helpers ------------------------------------------------------------

struct RunResult {
  Model model;
  TrainHistory history;
};

RunResult train_run(const RunConfig& cfg, const PreparedData& data, std::uint64_t model_seed) {
  const EncodedDataset train_set = encode_dataset(data.train, data.vocab, cfg.tokenizer.max_len);
  const EncodedDataset val_set = encode_dataset(data.val, data.vocab, cfg.tokenizer.max_len);
  Rng init(model_seed);
  Model model(model_config(cfg, data.vocab.size(), data.train.vocab.size()), init);
  TrainHistory history = train(model, train_set, val_set, cfg.train);
  return RunResult{std::move(model), std::move(history)};
}

// ---- tune ---------------------------------------------------------------------

struct TuneArgs {
  std::string kind;
  std::optional<std::size_t> trials;
  std::string objective;
  bool lr_narrow = false;
};

int cmd_tune(const Globals& g, const TuneArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(g);
  if (!a.kind.empty()) cfg.decoder.kind = decoder_kind_from_string(a.kind);
  if (a.trials) cfg.tune.trials = *a.trials;
  if (!a.objective.empty()) cfg.tune.objective = a.objective;
  if (a.lr_narrow) cfg.tune.lr_narrow = true;
  if (cfg.tune.trials == 0) throw std::runtime_error("tune needs at least one trial");

  const fs::path dir(g.out_dir);
  const PreparedData data = load_prepared(dir);

  Study study;
  study.space = cfg.tune.lr_narrow ? SearchSpace::narrow_lr(cfg.decoder.kind)
                                   : SearchSpace::canonical(cfg.decoder.kind, cfg.tune.lr_min, cfg.tune.lr_max);
  study.objective = objective_from_string(cfg.tune.objective);
  study.seed = derive_seed(cfg.seed, "tuner");
  study.n_trials = cfg.tune.trials;
  study.tpe = TpeConfig{cfg.tune.gamma, cfg.tune.candidates, cfg.tune.startup};

  const fs::path log_path = dir / "study.jsonl";
  if (fs::exists(log_path)) {
    study.trials = load_study_log(log_path);
    for (const auto& t : study.trials) {
      if (!study.space.contains(t.params)) {
        throw std::runtime_error("existing study log " + log_path.string() + " has trial " + std::to_string(t.id) +
                                 " outside the current search space");
      }
    }
    if (study.trials.size() > study.n_trials) study.n_trials = study.trials.size();
    if (!study.trials.empty()) out << "resuming study with " << study.trials.size() << " logged trials\n";
  }

  const TrialRunner runner = [&](const Params& params, std::size_t id) {
    RunConfig trial_cfg = cfg;
    apply_params(trial_cfg, params);
    trial_cfg.train.seed = derive_seed(cfg.seed, "trial-train", id);
    RunResult r = train_run(trial_cfg, data, derive_seed(cfg.seed, "trial-model", id));
    const EpochRecord& last = r.history.epochs.back();
    TrialOutcome outcome;
    outcome.val_loss = last.val_loss;
    outcome.val_weighted_f1 = last.val_weighted_f1;
    outcome.objective = study.objective == Objective::MinValLoss ? last.val_loss : last.val_weighted_f1;
    return outcome;
  };
  const auto append = [&](const Trial& t) {
    std::ofstream log(log_path, std::ios::app);
    log << trial_to_json_line(t) << '\n';
    if (!log) throw std::runtime_error("cannot append to " + log_path.string());
    out << "trial " << t.id << ": "
        << (t.status == TrialStatus::Complete ? "objective " + std::to_string(t.objective) : "failed (" + t.error + ")") << "\n";
  };

  const Trial& best = run_study(study, runner, append);
  ojson best_json;
  best_json["kind"] = to_string(cfg.decoder.kind);
  best_json["objective"] = to_string(study.objective);
  best_json["best_trial"] = best.id;
  best_json["objective_value"] = best.objective;
  best_json["params"] = params_json(best.params);
  write_file_atomic(dir / "best_params.json", best_json.dump(2) + "\n");
  out << "best trial " << best.id << " (" << to_string(study.objective) << " " << best.objective << ")\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

int cmd_train(const Globals& g, const std::string& params_path, std::optional<std::size_t> epochs, std::ostream& out) {
  RunConfig cfg = resolve_config(g);
  const fs::path dir(g.out_dir);
  fs::path best = params_path.empty() ? dir / "best_params.json" : fs::path(params_path);
  if (!params_path.empty() && !fs::exists(best)) throw std::runtime_error("params file not found: " + best.string());
  if (fs::exists(best)) {
    const ojson j = read_json(best);
    if (j.contains("kind")) cfg.decoder.kind = decoder_kind_from_string(j.at("kind").get<std::string>());
    Params p;
    for (const auto& [k, v] : j.at("params").items()) p[k] = v.get<double>();
    apply_params(cfg, p);
    out << "using hyperparameters from " << best.string() << "\n";
  }
  if (epochs) cfg.train.epochs = *epochs;
  const PreparedData data = load_prepared(dir);
  const std::uint64_t model_seed = derive_seed(cfg.seed, "model");
  cfg.train.seed = derive_seed(cfg.seed, "trainer");
  RunResult r = train_run(cfg, data, model_seed);
  save_checkpoint(dir / "model.ckpt", Checkpoint{std::move(r.model), data.vocab, data.train.vocab, cfg.train, model_seed});
  write_file_atomic(dir / "history.jsonl", r.history.to_jsonl());
  const EpochRecord& last = r.history.epochs.back();
  out << "trained " << r.history.epochs.size() << " epochs; final val loss " << last.val_loss << ", val weighted F1 "
      << last.val_weighted_f1 << " (best val loss at epoch " << r.history.best_epoch << ")\n";
  return 0;
}

// ---- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string output;
  std::optional<double> threshold;
  bool table = false;
};

int cmd_evaluate(const Globals& g, const EvaluateArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  const fs::path dir(g.out_dir);
  const fs::path ckpt_path = a.checkpoint.empty() ? dir / "model.ckpt" : fs::path(a.checkpoint);
  const fs::path data_path = a.data.empty() ? dir / "val.jsonl" : fs::path(a.data);
  const fs::path report_path = a.output.empty() ? dir / "report.json" : fs::path(a.output);
  const double threshold = a.threshold.value_or(cfg.train.threshold);
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::runtime_error("--threshold must be in [0, 1]");

  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const fs::path vocab_path = dir / "vocab.txt";
  if (a.checkpoint.empty() && fs::exists(vocab_path) && !(TokenVocab::load(vocab_path) == ckpt.tokens)) {
    throw std::runtime_error("vocab mismatch: " + vocab_path.string() + " differs from the vocabulary in " + ckpt_path.string());
  }
  const Dataset data = load_dataset(data_path, ckpt.labels);
  const EncodedDataset enc = encode_dataset(data, ckpt.tokens, ckpt.model.config().encoder.max_len);
  const Predictions pred = predict(ckpt.model, enc, threshold, ckpt.train.val_batch_size);
  const MetricsReport report = full_report(to_prediction_set(enc, pred));
  ojson j = report_to_json(report, ckpt.labels.names());
  j["threshold"] = threshold;
  j["decoder"] = to_string(ckpt.model.config().decoder.kind);
  write_file_atomic(report_path, j.dump(2) + "\n");
  if (a.table) {
    out << render_table({ReportRow{report_path.stem().string(), j}});
  } else {
    out << "wrote " << report_path.string() << " (F1_weighted " << report.weighted.f1 << ", HM " << report.hamming << ")\n";
  }
  return 0;
}

// ---- report -------------------------------------------------------------------

int cmd_report(const Globals& g, const std::vector<std::string>& files, const std::string& sort_by, const std::string& output,
               std::ostream& out) {
  (void)g;
  if (files.empty()) throw std::runtime_error("report needs at least one report file");
  std::vector<ReportRow> rows;
  std::optional<std::pair<std::string, ojson>> reference;
  for (const auto& f : files) {
    ojson j = read_json(f);
    if (!j.contains("labels")) throw std::runtime_error(f + " is not a metrics report (no labels)");
    if (!reference) {
      reference = std::make_pair(f, j.at("labels"));
    } else if (j.at("labels") != reference->second) {
      throw std::runtime_error("label vocabularies differ between " + reference->first + " and " + f);
    }
    rows.push_back(ReportRow{fs::path(f).stem().string() == "report" ? fs::path(f).parent_path().filename().string() + "/report"
                                                                       : fs::path(f).stem().string(),
                             std::move(j)});
  }
  const std::string table = render_table(std::move(rows), sort_by);
  if (!output.empty()) write_file_atomic(output, table);
  out << table;
  return 0;
}

}  // namespace

void apply_params(RunConfig& cfg, const Params& params) {
  for (const auto& [k, v] : params) {
    if (k == "hidden_size") cfg.decoder.hidden_size = static_cast<std::size_t>(std::llround(v));
    else if (k == "num_layers") cfg.decoder.num_layers = static_cast<std::size_t>(std::llround(v));
    else if (k == "dropout") cfg.decoder.dropout = v;
    else if (k == "learning_rate") cfg.train.learning_rate = v;
    else if (k == "batch_size") cfg.train.batch_size = static_cast<std::size_t>(std::llround(v));
    else if (k == "weight_decay") cfg.train.weight_decay = v;
    else if (k == "bidirectional") cfg.decoder.bidirectional = v != 0.0;
    else throw ConfigError("unknown hyperparameter '" + k + "'");
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-label error classification pipeline: prepare, tune, train, evaluate, report"};
  app.name("mlec");
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Root seed for every random stream");
  app.add_option("--out-dir", g.out_dir, "Directory for all artifacts")->capture_default_str();
  app.add_option("--set", g.set, "Config override key=value (repeatable)");

  auto* prepare = app.add_subcommand("prepare", "Clean, split and index a corpus");
  std::string input;
  std::size_t synthetic = 0;
  prepare->add_option("--input", input, "Line-delimited JSON records {code, labels}");
  auto* syn_opt = prepare->add_option("--synthetic", synthetic, "Generate N synthetic samples instead");

  auto* tune = app.add_subcommand("tune", "Hyperparameter study over prepared data");
  TuneArgs tune_args;
  std::size_t trials = 0;
  tune->add_option("--kind", tune_args.kind, "gru, lstm, bilstm or bilstm-a");
  auto* trials_opt = tune->add_option("--trials", trials, "Number of trials");
  tune->add_option("--objective", tune_args.objective, "val-loss or weighted-f1")
      ->check(CLI::IsMember({"val-loss", "weighted-f1"}));
  tune->add_flag("--lr-narrow", tune_args.lr_narrow, "Learning rate from LogU[1e-5, 5e-5]");

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string params_path;
  std::size_t epochs = 0;
  train_cmd->add_option("--params", params_path, "Hyperparameter file (default <out-dir>/best_params.json if present)");
  auto* epochs_opt = train_cmd->add_option("--epochs", epochs, "Override the epoch count");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
  EvaluateArgs eval_args;
  double threshold = 0.5;
  evaluate->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint (default <out-dir>/model.ckpt)");
  evaluate->add_option("--data", eval_args.data, "Dataset (default <out-dir>/val.jsonl)");
  evaluate->add_option("--output", eval_args.output, "Report path (default <out-dir>/report.json)");
  auto* threshold_opt = evaluate->add_option("--threshold", threshold, "Decision threshold");
  evaluate->add_flag("--table", eval_args.table, "Print the report as a table");

  auto* report = app.add_subcommand("report", "Compare metrics reports");
  std::vector<std::string> report_files;
  std::string sort_by = "F1_weighted";
  std::string report_output;
  report->add_option("reports", report_files, "Report files")->required();
  report->add_option("--sort-by", sort_by, "Column to sort by")->capture_default_str();
  report->add_option("--output", report_output, "Also write the table here");

  std::vector<std::string> argv_store{"mlec"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (prepare->parsed()) {
      return cmd_prepare(g, input, syn_opt->count() ? std::optional<std::size_t>(synthetic) : std::nullopt, out);
    }
    if (tune->parsed()) {
      if (trials_opt->count()) tune_args.trials = trials;
      return cmd_tune(g, tune_args, out);
    }
    if (train_cmd->parsed()) {
      return cmd_train(g, params_path, epochs_opt->count() ? std::optional<std::size_t>(epochs) : std::nullopt, out);
    }
    if (evaluate->parsed()) {
      if (threshold_opt->count()) eval_args.threshold = threshold;
      return cmd_evaluate(g, eval_args, out);
    }
    if (report->parsed()) return cmd_report(g, report_files, sort_by, report_output, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace mlec
