#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mlec {

struct MetricError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Row-major N x L truth, predictions and scores.
struct PredictionSet {
  std::size_t n = 0;
  std::size_t l = 0;
  std::vector<std::uint8_t> y_true;
  std::vector<std::uint8_t> y_pred;
  std::vector<double> scores;

  std::uint8_t truth(std::size_t i, std::size_t j) const { return y_true[i * l + j]; }
  std::uint8_t pred(std::size_t i, std::size_t j) const { return y_pred[i * l + j]; }
  double score(std::size_t i, std::size_t j) const { return scores[i * l + j]; }

  /// Throws MetricError on mismatched sizes, non-binary labels or scores outside [0, 1].
  void validate() const;
};

PredictionSet make_prediction_set(const std::vector<std::vector<int>>& y_true, const std::vector<std::vector<int>>& y_pred,
                                  const std::vector<std::vector<double>>& scores);

struct ConfusionCounts {
  std::vector<std::size_t> tp, fp, fn, tn;
  std::vector<std::size_t> support;
  /// support_j / total support; all zero when nothing is positive.
  std::vector<double> weights;
};

enum class Averaging { Macro, Weighted };
enum class AucMode { Micro, Macro, Weighted };

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

double avg_accuracy(const PredictionSet& ps);
std::pair<double, std::size_t> exact_match(const PredictionSet& ps);
/// Share of rows whose top-scored label (lowest index on ties) is not true.
double one_error(const PredictionSet& ps);
ConfusionCounts confusion(const PredictionSet& ps);
/// Per-label scores with 0/0 taken as 0.
PRF label_prf(const ConfusionCounts& counts, std::size_t j);
PRF prf(const ConfusionCounts& counts, Averaging averaging);
double hamming_loss(const PredictionSet& ps);
/// Mean per-row intersection over union; an empty union scores 1.
double jaccard(const PredictionSet& ps);

/// Mann-Whitney AUC with average ranks; nullopt when a class is missing.
std::optional<double> binary_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& truth);
/// Throws MetricError when no AUC is defined for the mode.
double roc_auc(const PredictionSet& ps, AucMode mode);

struct LabelReport {
  std::size_t support = 0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  PRF prf;
  std::optional<double> auc;
};

struct MetricsReport {
  std::size_t n = 0;
  double avg_acc = 0.0;
  double em_acc = 0.0;
  std::size_t em_count = 0;
  double one_error = 0.0;
  PRF macro;
  PRF weighted;
  double hamming = 0.0;
  double jaccard = 0.0;
  std::optional<double> auc_micro;
  std::optional<double> auc_macro;
  std::optional<double> auc_weighted;
  /// Labels left out of macro/weighted AUC because one class is absent.
  std::vector<std::size_t> auc_excluded_labels;
  std::vector<LabelReport> per_label;
};

MetricsReport full_report(const PredictionSet& ps);

/// Serialized field names: AvgAcc, EMAcc, EM_count, OE, P_macro, R_macro,
/// F1_macro, P_weighted, R_weighted, F1_weighted, HM, J_s, ROC_AUC_micro,
/// ROC_AUC_macro, ROC_AUC_weighted (null when undefined), plus labels,
/// per_label and undefined.
nlohmann::ordered_json report_to_json(const MetricsReport& report, const std::vector<std::string>& label_names);

/// Column names of the comparison table, in order.
const std::vector<std::string>& report_columns();

struct ReportRow {
  std::string name;
  nlohmann::ordered_json report;
};

/// Plain-text table, one row per report, the best value in each column
/// marked with '*'. Rows are sorted by `sort_by` (best first).
std::string render_table(std::vector<ReportRow> rows, const std::string& sort_by = "F1_weighted");

/// Lower is better for HM and OE, higher for every other column.
bool lower_is_better(const std::string& column);

}  // namespace mlec
