// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "mlec/checkpoint.hpp"
#include "mlec/cli.hpp"
#include "mlec/config.hpp"
#include "mlec/tuner.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mlec;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(6) << x;
  return s.str();
}

int run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

std::string read_file(const fs::path& p) { return testing::read_file(p); }

const std::vector<DecoderKind> kKinds{DecoderKind::GRU, DecoderKind::LSTM, DecoderKind::BiLSTM, DecoderKind::BiLSTM_A};

// --- 1 --------------------------------------------------------------------

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0, worst_bias = 0;
  for (auto kind : kKinds) {
    const auto g = oracle::pipeline_gradient(kind);
    worst = std::max(worst, g.max_rel_error);
    worst_bias = std::max(worst_bias, g.max_key_bias_grad);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < 1e-4 && worst_bias < 1e-12 && secs < 10.0,
          "max rel error " + fmt(worst) + ", key-bias grad " + fmt(worst_bias) + ", " + fmt(secs) + " s"};
}

// --- 2 --------------------------------------------------------------------

Outcome metric_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0;
  bool defined_agree = true;
  auto diff = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
  auto diff_opt = [&](const std::optional<double>& a, const std::optional<double>& b) {
    if (a.has_value() != b.has_value()) defined_agree = false;
    else if (a) diff(*a, *b);
  };
  for (int rep = 0; rep < 200; ++rep) {
    const auto ps = oracle::random_prediction_set(rng);
    const auto want = oracle::brute_force(ps);
    const auto got = full_report(ps);
    diff(got.avg_acc, want.avg_acc);
    diff(got.em_acc, want.em_acc);
    diff(static_cast<double>(got.em_count), want.em_count);
    diff(got.one_error, want.one_error);
    diff(got.hamming, want.hamming);
    diff(got.jaccard, want.jaccard);
    diff(got.macro.precision, want.p_macro);
    diff(got.macro.recall, want.r_macro);
    diff(got.macro.f1, want.f1_macro);
    diff(got.weighted.precision, want.p_weighted);
    diff(got.weighted.recall, want.r_weighted);
    diff(got.weighted.f1, want.f1_weighted);
    diff_opt(got.auc_micro, want.auc_micro);
    diff_opt(got.auc_macro, want.auc_macro);
    diff_opt(got.auc_weighted, want.auc_weighted);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-12 && defined_agree && secs < 5.0,
          "200 sets, max abs diff " + fmt(worst) + (defined_agree ? "" : ", AUC definedness differs") + ", " +
              fmt(secs) + " s"};
}

// --- 3 --------------------------------------------------------------------

Outcome worked_example() {
  const auto ps = make_prediction_set({{1, 0, 1}, {0, 1, 0}}, {{1, 0, 0}, {0, 1, 0}}, {{0.9, 0.2, 0.4}, {0.1, 0.8, 0.3}});
  const auto r = full_report(ps);
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  const bool ok = near(r.avg_acc, 5.0 / 6.0) && r.em_acc == 0.5 && r.em_count == 1 && near(r.hamming, 1.0 / 6.0) &&
                  near(r.jaccard, 0.75) && near(r.macro.f1, 2.0 / 3.0) && r.auc_micro && near(*r.auc_micro, 1.0) &&
                  r.one_error == 0.0;
  return {ok, "avg_acc " + fmt(r.avg_acc) + ", em " + fmt(r.em_acc) + ", hamming " + fmt(r.hamming) + ", jaccard " +
                  fmt(r.jaccard) + ", macro F1 " + fmt(r.macro.f1) + ", one_error " + fmt(r.one_error)};
}

// --- 4 --------------------------------------------------------------------

struct Converged {};

Outcome overfit() {
  const auto labels = LabelVocab::canonical();
  const auto data = generate_synthetic(32, labels, 404);
  RunConfig rc;
  const auto vocab = build_vocab(data, rc.tokenizer.max_vocab, rc.tokenizer.min_freq);
  const auto set = encode_dataset(data, vocab, rc.tokenizer.max_len);

  std::string detail;
  bool all = true;
  for (auto kind : {DecoderKind::GRU, DecoderKind::BiLSTM_A}) {
    const auto start = std::chrono::steady_clock::now();
    rc.decoder.kind = kind;
    rc.decoder.hidden_size = 64;
    rc.decoder.num_layers = 1;
    Rng init(derive_seed(404, "model"));
    Model model(model_config(rc, vocab.size(), labels.size()), init);
    TrainConfig tc = rc.train;
    tc.learning_rate = 1e-3;
    tc.weight_decay = 0.0;
    tc.epochs = 200;
    tc.batch_size = 1;
    tc.seed = derive_seed(404, "trainer");

    double em = 0, f1 = 0, loss = 0;
    std::size_t epochs = 0;
    auto measure = [&](const Model& m) {
      const auto ps = to_prediction_set(set, predict(m, set, tc.threshold));
      const auto r = full_report(ps);
      em = r.em_acc;
      f1 = r.weighted.f1;
      loss = evaluate_loss(m, set, tc.val_batch_size);
    };
    auto met = [&] { return kind == DecoderKind::GRU ? (em >= 0.95 && loss < 0.05) : f1 >= 0.98; };
    try {
      train(model, set, set, tc, [&](const EpochCallbackInfo& info) {
        epochs = info.record.epoch;
        measure(info.model);
        if (met()) throw Converged{};
      });
    } catch (const Converged&) {
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool ok = met() && secs < 300.0;
    all = all && ok;
    if (!detail.empty()) detail += "; ";
    detail += to_string(kind) + " after " + std::to_string(epochs) + " epochs: EM " + fmt(em) + ", loss " + fmt(loss) +
              ", weighted F1 " + fmt(f1) + ", " + fmt(secs) + " s";
  }
  return {all, detail};
}

// --- 5 --------------------------------------------------------------------

Outcome generalization(const fs::path& root) {
  const auto dir = root / "generalize";
  const std::string out = dir.string();
  if (run({"--out-dir", out, "--seed", "5", "prepare", "--synthetic", "2000"}) != 0) return {false, "prepare failed"};
  if (run({"--out-dir", out, "--seed", "5", "train"}) != 0) return {false, "train failed"};
  if (run({"--out-dir", out, "--seed", "5", "evaluate"}) != 0) return {false, "evaluate failed"};
  const auto report = nlohmann::json::parse(read_file(dir / "report.json"));
  const double f1 = report["F1_weighted"], hm = report["HM"];
  const auto history = read_file(dir / "history.jsonl");
  const auto epochs = std::count(history.begin(), history.end(), '\n');

  // Baselines: predict nothing, and predict each label independently at its training prevalence.
  const auto labels = LabelVocab::canonical();
  const auto train_set = load_dataset(dir / "train.jsonl", labels);
  const auto val_set = load_dataset(dir / "val.jsonl", labels);
  const auto counts = train_set.label_counts();
  std::vector<std::vector<int>> truth, zeros, marginal;
  std::vector<std::vector<double>> prevalence;
  std::vector<double> prev(labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) prev[j] = static_cast<double>(counts[j]) / train_set.size();
  Rng draw(55);
  for (const auto& s : val_set.samples) {
    truth.emplace_back(s.labels.begin(), s.labels.end());
    zeros.emplace_back(labels.size(), 0);
    std::vector<int> m(labels.size());
    for (std::size_t j = 0; j < labels.size(); ++j) m[j] = draw.bernoulli(prev[j]);
    marginal.push_back(m);
    prevalence.push_back(prev);
  }
  const auto zero_r = full_report(make_prediction_set(truth, zeros, prevalence));
  const auto marg_r = full_report(make_prediction_set(truth, marginal, prevalence));
  const bool ok = epochs == 20 && f1 >= 0.90 && hm <= 0.05 && f1 > zero_r.weighted.f1 && f1 > marg_r.weighted.f1 &&
                  hm < zero_r.hamming && hm < marg_r.hamming;
  return {ok, std::to_string(epochs) + " epochs: val weighted F1 " + fmt(f1) + ", HM " + fmt(hm) + "; all-zeros F1 " +
                  fmt(zero_r.weighted.f1) + " HM " + fmt(zero_r.hamming) + "; marginal F1 " + fmt(marg_r.weighted.f1) +
                  " HM " + fmt(marg_r.hamming)};
}

// --- 6 --------------------------------------------------------------------

Outcome optimizer() {
  auto param = [](std::vector<double> w) { return make_parameter("w", Tensor::from_vector({w.size()}, w, true)); };

  Parameter p = param({1.5, -2.0, 0.25, 3e-7});
  AdamState s;
  std::vector<double> want = p.value.to_vector();
  bool shrink_ok = true;
  const double factor = 1.0 - 0.1 * 0.01;
  for (int step = 0; step < 50; ++step) {
    std::fill(p.value.mutable_grad().begin(), p.value.mutable_grad().end(), 0.0);
    const auto before = p.value.to_vector();
    adam_decoupled_step({&p}, s, {0.1, 0.01});
    for (std::size_t i = 0; i < want.size(); ++i) {
      want[i] = before[i] * factor;
      if (p.value.data()[i] != want[i]) shrink_ok = false;
    }
  }
  shrink_ok = shrink_ok && std::abs(factor - 0.999) <= 1e-15;

  const std::vector<double> a{1.0, 3.0, 0.5, 10.0}, c{0.3, -1.2, 2.0, 0.05};
  std::vector<double> w_ref{0.0, 0.0, 0.0, 0.0};
  Parameter q = param(w_ref);
  AdamState sq;
  oracle::ReferenceAdam ref{0.05, 0.9, 0.999, 1e-8, {}, {}};
  bool bitwise = true;
  for (int step = 0; step < 100 && bitwise; ++step) {
    std::vector<double> g(4);
    for (std::size_t i = 0; i < 4; ++i) g[i] = a[i] * (q.value.data()[i] - c[i]);
    std::copy(g.begin(), g.end(), q.value.mutable_grad().begin());
    adam_decoupled_step({&q}, sq, {0.05, 0.0});
    ref.step(w_ref, g);
    bitwise = q.value.to_vector() == w_ref && sq.m[0] == ref.m && sq.v[0] == ref.v;
  }
  return {shrink_ok && bitwise, std::string("shrink by 0.999 over 50 steps ") + (shrink_ok ? "exact" : "inexact") +
                                    ", reference trajectory over 100 steps " + (bitwise ? "bitwise equal" : "differs")};
}

// --- 7 --------------------------------------------------------------------

Outcome tpe() {
  const auto start = std::chrono::steady_clock::now();
  auto mean_best = [](std::size_t n_startup) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Study s;
      s.space = SearchSpace{{Dimension::uniform("x", -1, 1), Dimension::uniform("y", -1, 1)}};
      s.seed = seed;
      s.n_trials = 40;
      s.tpe.n_startup = n_startup;
      total += run_study(s, [](const Params& p, std::size_t) {
                 const double x = p.at("x") - 0.3, y = p.at("y") + 0.2;
                 return TrialOutcome{x * x + y * y, {}, {}};
               }).objective;
    }
    return total / 20.0;
  };
  const double tpe_best = mean_best(TpeConfig{}.n_startup);
  const double random_best = mean_best(40);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {tpe_best <= random_best && tpe_best <= 0.02 && secs < 10.0,
          "mean best TPE " + fmt(tpe_best) + " vs random " + fmt(random_best) + ", " + fmt(secs) + " s"};
}

// --- 8 --------------------------------------------------------------------

Outcome split_quality() {
  const auto vocab = LabelVocab::canonical();
  SyntheticConfig cfg;
  cfg.label_prevalence = {0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.25, 0.35, 0.12, 0.08};
  const auto ds = generate_synthetic(1000, vocab, 8, cfg);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto [tr, va] = stratified_split(ds, {0.8, seed});
    const auto ct = tr.label_counts();
    const auto cv = va.label_counts();
    for (std::size_t j = 0; j < vocab.size(); ++j) {
      worst = std::max(worst, std::abs(static_cast<double>(ct[j]) / tr.size() - static_cast<double>(cv[j]) / va.size()));
    }
  }
  return {worst <= 0.05, "worst per-label gap " + fmt(100 * worst) + " pp over 10 seeds"};
}

// --- 9 --------------------------------------------------------------------

std::vector<std::string> small(const fs::path& dir) {
  std::vector<std::string> out{"--out-dir", dir.string(), "--seed", "9"};
  for (const char* s : {"encoder.embed_dim=8", "encoder.layers=1", "encoder.heads=2", "encoder.ff_dim=16",
                        "decoder.hidden_size=16", "tokenizer.max_len=64", "train.epochs=2", "train.batch_size=8"}) {
    out.push_back("--set");
    out.push_back(s);
  }
  return out;
}

int run_small(const fs::path& dir, std::vector<std::string> tail) {
  auto args = small(dir);
  args.insert(args.end(), tail.begin(), tail.end());
  return run(args);
}

Outcome determinism(const fs::path& root) {
  const auto a = root / "det_a", b = root / "det_b";
  for (const auto& dir : {a, b}) {
    if (run_small(dir, {"prepare", "--synthetic", "64"}) != 0 || run_small(dir, {"tune", "--trials", "3"}) != 0 ||
        run_small(dir, {"train"}) != 0 || run_small(dir, {"evaluate"}) != 0) {
      return {false, "pipeline failed in " + dir.string()};
    }
  }
  std::string differs;
  for (const char* f : {"manifest.json", "train.jsonl", "val.jsonl", "vocab.txt", "study.jsonl", "best_params.json",
                        "history.jsonl", "model.ckpt", "report.json"}) {
    if (read_file(a / f) != read_file(b / f)) differs += std::string(" ") + f;
  }

  // Checkpoint round trip: reload, resave, and compare eval probabilities bit for bit.
  const auto labels = LabelVocab::canonical();
  auto ckpt = load_checkpoint(a / "model.ckpt");
  const auto val = encode_dataset(load_dataset(a / "val.jsonl", labels), ckpt.tokens, ckpt.model.config().encoder.max_len);
  save_checkpoint(a / "copy.ckpt", ckpt);
  const auto reloaded = load_checkpoint(a / "copy.ckpt");
  const bool probs_equal =
      predict(ckpt.model, val, 0.5).probabilities == predict(reloaded.model, val, 0.5).probabilities;
  const bool bytes_equal = read_file(a / "copy.ckpt") == read_file(a / "model.ckpt");

  return {differs.empty() && probs_equal && bytes_equal,
          (differs.empty() ? std::string("all artifacts byte-identical") : "differ:" + differs) +
              ", checkpoint round trip " + (probs_equal && bytes_equal ? "bit-identical" : "differs")};
}

// --- 10 -------------------------------------------------------------------

Outcome padding() {
  const auto labels = LabelVocab::canonical();
  const auto data = generate_synthetic(6, labels, 10);
  const auto vocab = build_vocab(data, 1000);
  std::size_t longest = 0;
  for (const auto& s : data.samples) longest = std::max(longest, tokenize(s.code).size());
  const std::size_t short_len = longest + 2, long_len = longest + 40;
  const auto tight = encode_dataset(data, vocab, short_len);
  const auto loose = encode_dataset(data, vocab, long_len);
  std::vector<std::size_t> rows(data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto b_tight = make_encoded_batch(tight.inputs, rows, false);
  const auto b_loose = make_encoded_batch(loose.inputs, rows, false);

  std::string detail;
  bool all = true;
  for (auto kind : kKinds) {
    for (bool bidirectional : {false, true}) {
      if (bidirectional && kind != DecoderKind::GRU) continue;
      ModelConfig cfg;
      cfg.encoder.vocab_size = vocab.size();
      cfg.encoder.embed_dim = 16;
      cfg.encoder.num_layers = 2;
      cfg.encoder.num_heads = 2;
      cfg.encoder.feedforward_dim = 32;
      cfg.encoder.max_len = long_len;
      cfg.decoder.kind = kind;
      cfg.decoder.hidden_size = 12;
      cfg.decoder.num_layers = 2;
      cfg.decoder.bidirectional = bidirectional;
      cfg.decoder.label_count = labels.size();
      Rng init(100), rng(1);
      const Model model(cfg, init);
      const bool same =
          model.forward(b_tight, false, rng).logits.to_vector() == model.forward(b_loose, false, rng).logits.to_vector();
      all = all && same;
      detail += (detail.empty() ? "" : ", ") + to_string(kind) + (bidirectional ? "(bi)" : "") + (same ? " exact" : " differs");
    }
  }
  return {all, "lengths " + std::to_string(short_len) + " vs " + std::to_string(long_len) + ": " + detail};
}

// --- 11 -------------------------------------------------------------------

Outcome lr_narrow(const fs::path& root) {
  const auto dir = root / "narrow";
  if (run_small(dir, {"prepare", "--synthetic", "48"}) != 0) return {false, "prepare failed"};
  if (run_small(dir, {"--set", "train.epochs=1", "tune", "--trials", "10", "--lr-narrow"}) != 0) return {false, "tune failed"};
  std::istringstream log(read_file(dir / "study.jsonl"));
  std::size_t n = 0, inside = 0;
  double lo = 1, hi = 0;
  for (std::string line; std::getline(log, line); ++n) {
    const double lr = nlohmann::json::parse(line)["params"]["learning_rate"];
    lo = std::min(lo, lr);
    hi = std::max(hi, lr);
    if (lr >= 1e-5 && lr <= 5e-5) ++inside;
  }
  return {n == 10 && inside == n, std::to_string(inside) + "/" + std::to_string(n) + " trials in range, learning rates [" +
                                      fmt(lo) + ", " + fmt(hi) + "]"};
}

}  // namespace

int main() {
  const auto root = testing::scratch_dir("acceptance");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"metric oracle equivalence", metric_oracle},
      {"worked example pins", worked_example},
      {"overfit capacity", overfit},
      {"generalization on a synthetic corpus", [&] { return generalization(root); }},
      {"optimizer conformance", optimizer},
      {"TPE efficacy", tpe},
      {"stratified split quality", split_quality},
      {"determinism and persistence", [&] { return determinism(root); }},
      {"padding invariance", padding},
      {"narrow learning-rate range", [&] { return lr_narrow(root); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << i + 1 << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
