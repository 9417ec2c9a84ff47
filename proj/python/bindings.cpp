#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mlec/cli.hpp"
#include "mlec/dataset.hpp"
#include "mlec/metrics.hpp"
#include "mlec/rng.hpp"
#include "mlec/tokenizer.hpp"
#include "mlec/trainer.hpp"
#include "mlec/tuner.hpp"

namespace py = pybind11;
using namespace mlec;

namespace {

std::string report_json(const std::vector<std::vector<int>>& y_true, const std::vector<std::vector<int>>& y_pred,
                        const std::vector<std::vector<double>>& scores, std::vector<std::string> labels) {
  const PredictionSet ps = make_prediction_set(y_true, y_pred, scores);
  if (labels.empty()) {
    for (std::size_t j = 0; j < ps.l; ++j) labels.push_back("label_" + std::to_string(j));
  }
  return report_to_json(full_report(ps), labels).dump();
}

py::list synthetic(std::size_t n, std::uint64_t seed, double avg_labels) {
  SyntheticConfig cfg;
  cfg.avg_labels = avg_labels;
  const Dataset d = generate_synthetic(n, LabelVocab::canonical(), seed, cfg);
  py::list out;
  for (const auto& s : d.samples) {
    py::list labels;
    for (std::size_t j = 0; j < s.labels.size(); ++j)
      if (s.labels[j]) labels.append(d.vocab.name(j));
    py::dict rec;
    rec["code"] = s.code;
    rec["labels"] = labels;
    out.append(rec);
  }
  return out;
}

double bce(const std::vector<std::vector<double>>& logits, const std::vector<std::vector<double>>& targets) {
  auto to_tensor = [](const std::vector<std::vector<double>>& rows) {
    std::vector<double> flat;
    const std::size_t width = rows.empty() ? 0 : rows[0].size();
    for (const auto& r : rows) {
      if (r.size() != width) throw ShapeError("ragged matrix");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor::from_vector({rows.size(), width}, std::move(flat));
  };
  return bce_with_logits(to_tensor(logits), to_tensor(targets)).item();
}

py::tuple cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = run_cli(args, out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

std::vector<std::map<std::string, double>> random_params(const std::string& kind, std::size_t count, std::uint64_t seed,
                                                         bool lr_narrow) {
  const DecoderKind k = decoder_kind_from_string(kind);
  const SearchSpace space = lr_narrow ? SearchSpace::narrow_lr(k) : SearchSpace::canonical(k);
  Rng rng(seed);
  std::vector<std::map<std::string, double>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(sample_random(space, rng));
  return out;
}

py::dict minimize(const std::function<double(const std::map<std::string, double>&)>& objective,
                  const std::vector<std::tuple<std::string, double, double>>& bounds, std::size_t n_trials,
                  std::uint64_t seed) {
  Study study;
  for (const auto& [name, lo, hi] : bounds) study.space.dims.push_back(Dimension::uniform(name, lo, hi));
  study.seed = seed;
  study.n_trials = n_trials;
  const Trial& best = run_study(study, [&](const Params& p, std::size_t) { return TrialOutcome{objective(p), {}, {}}; });
  py::dict out;
  out["id"] = best.id;
  out["params"] = best.params;
  out["value"] = best.objective;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-label error classification core";

  py::register_exception<DatasetError>(m, "DatasetError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);

  m.def("tokenize", &tokenize, py::arg("code"));
  m.def("clean_code", &clean_code, py::arg("source"));
  m.def("label_names", [] { return LabelVocab::canonical().names(); });
  m.def("generate_synthetic", &synthetic, py::arg("n"), py::arg("seed") = 0, py::arg("avg_labels") = 3.0);
  m.def("_report_json", &report_json, py::arg("y_true"), py::arg("y_pred"), py::arg("scores"),
        py::arg("labels") = std::vector<std::string>{});
  m.def("bce_with_logits", &bce, py::arg("logits"), py::arg("targets"));
  m.def("sample_params", &random_params, py::arg("kind") = "gru", py::arg("count") = 1, py::arg("seed") = 0,
        py::arg("lr_narrow") = false);
  m.def("minimize", &minimize, py::arg("objective"), py::arg("bounds"), py::arg("n_trials") = 10, py::arg("seed") = 0,
        "TPE study over uniform dimensions given as (name, lo, hi).");
  m.def("run_cli", &cli, py::arg("args"), "Runs the mlec command line in-process; returns (code, stdout, stderr).");
}
