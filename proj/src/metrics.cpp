#include "mlec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace mlec {

void PredictionSet::validate() const {
  const std::size_t cells = n * l;
  if (y_true.size() != cells || y_pred.size() != cells || scores.size() != cells) {
    throw MetricError("prediction set: expected " + std::to_string(n) + " x " + std::to_string(l) +
                      " entries in y_true, y_pred and scores");
  }
  for (std::size_t k = 0; k < cells; ++k) {
    if (y_true[k] > 1 || y_pred[k] > 1) throw MetricError("prediction set: labels must be 0 or 1");
    if (!(scores[k] >= 0.0 && scores[k] <= 1.0)) throw MetricError("prediction set: scores must lie in [0, 1]");
  }
}

PredictionSet make_prediction_set(const std::vector<std::vector<int>>& y_true, const std::vector<std::vector<int>>& y_pred,
                                  const std::vector<std::vector<double>>& scores) {
  PredictionSet ps;
  ps.n = y_true.size();
  ps.l = ps.n ? y_true[0].size() : 0;
  if (y_pred.size() != ps.n || scores.size() != ps.n) throw MetricError("prediction set: row counts differ");
  for (std::size_t i = 0; i < ps.n; ++i) {
    if (y_true[i].size() != ps.l || y_pred[i].size() != ps.l || scores[i].size() != ps.l) {
      throw MetricError("prediction set: row " + std::to_string(i) + " has the wrong width");
    }
    for (std::size_t j = 0; j < ps.l; ++j) {
      if (y_true[i][j] < 0 || y_true[i][j] > 1 || y_pred[i][j] < 0 || y_pred[i][j] > 1) {
        throw MetricError("prediction set: labels must be 0 or 1");
      }
      ps.y_true.push_back(static_cast<std::uint8_t>(y_true[i][j]));
      ps.y_pred.push_back(static_cast<std::uint8_t>(y_pred[i][j]));
      ps.scores.push_back(scores[i][j]);
    }
  }
  ps.validate();
  return ps;
}

namespace {

void require_rows(const PredictionSet& ps, const char* what) {
  ps.validate();
  if (ps.n == 0 || ps.l == 0) throw MetricError(std::string(what) + ": empty input");
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

}  // namespace

double avg_accuracy(const PredictionSet& ps) {
  require_rows(ps, "avg_accuracy");
  double total = 0.0;
  for (std::size_t i = 0; i < ps.n; ++i) {
    std::size_t same = 0;
    for (std::size_t j = 0; j < ps.l; ++j) same += ps.truth(i, j) == ps.pred(i, j);
    total += static_cast<double>(same) / static_cast<double>(ps.l);
  }
  return total / static_cast<double>(ps.n);
}

std::pair<double, std::size_t> exact_match(const PredictionSet& ps) {
  require_rows(ps, "exact_match");
  std::size_t count = 0;
  for (std::size_t i = 0; i < ps.n; ++i) {
    bool all = true;
    for (std::size_t j = 0; j < ps.l && all; ++j) all = ps.truth(i, j) == ps.pred(i, j);
    count += all;
  }
  return {static_cast<double>(count) / static_cast<double>(ps.n), count};
}

double one_error(const PredictionSet& ps) {
  require_rows(ps, "one_error");
  std::size_t errors = 0;
  for (std::size_t i = 0; i < ps.n; ++i) {
    std::size_t top = 0;
    for (std::size_t j = 1; j < ps.l; ++j)
      if (ps.score(i, j) > ps.score(i, top)) top = j;
    errors += ps.truth(i, top) == 0;
  }
  return static_cast<double>(errors) / static_cast<double>(ps.n);
}

ConfusionCounts confusion(const PredictionSet& ps) {
  ps.validate();
  ConfusionCounts c;
  c.tp.assign(ps.l, 0);
  c.fp.assign(ps.l, 0);
  c.fn.assign(ps.l, 0);
  c.tn.assign(ps.l, 0);
  for (std::size_t i = 0; i < ps.n; ++i) {
    for (std::size_t j = 0; j < ps.l; ++j) {
      const bool t = ps.truth(i, j), p = ps.pred(i, j);
      if (t && p) ++c.tp[j];
      else if (!t && p) ++c.fp[j];
      else if (t && !p) ++c.fn[j];
      else ++c.tn[j];
    }
  }
  c.support.resize(ps.l);
  for (std::size_t j = 0; j < ps.l; ++j) c.support[j] = c.tp[j] + c.fn[j];
  const double total = static_cast<double>(std::accumulate(c.support.begin(), c.support.end(), std::size_t{0}));
  c.weights.resize(ps.l);
  for (std::size_t j = 0; j < ps.l; ++j) c.weights[j] = ratio(static_cast<double>(c.support[j]), total);
  return c;
}

PRF label_prf(const ConfusionCounts& c, std::size_t j) {
  const double tp = static_cast<double>(c.tp.at(j)), fp = static_cast<double>(c.fp[j]), fn = static_cast<double>(c.fn[j]);
  return PRF{ratio(tp, tp + fp), ratio(tp, tp + fn), ratio(2.0 * tp, 2.0 * tp + fp + fn)};
}

PRF prf(const ConfusionCounts& c, Averaging averaging) {
  const std::size_t L = c.tp.size();
  PRF out;
  if (L == 0) return out;
  for (std::size_t j = 0; j < L; ++j) {
    const PRF s = label_prf(c, j);
    const double w = averaging == Averaging::Macro ? 1.0 / static_cast<double>(L) : c.weights[j];
    out.precision += w * s.precision;
    out.recall += w * s.recall;
    out.f1 += w * s.f1;
  }
  return out;
}

double hamming_loss(const PredictionSet& ps) {
  require_rows(ps, "hamming_loss");
  std::size_t wrong = 0;
  for (std::size_t k = 0; k < ps.n * ps.l; ++k) wrong += ps.y_true[k] != ps.y_pred[k];
  return static_cast<double>(wrong) / static_cast<double>(ps.n * ps.l);
}

double jaccard(const PredictionSet& ps) {
  require_rows(ps, "jaccard");
  double total = 0.0;
  for (std::size_t i = 0; i < ps.n; ++i) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t j = 0; j < ps.l; ++j) {
      inter += ps.truth(i, j) && ps.pred(i, j);
      uni += ps.truth(i, j) || ps.pred(i, j);
    }
    total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  return total / static_cast<double>(ps.n);
}

std::optional<double> binary_auc(const std::vector<double>& scores, const std::vector<std::uint8_t>& truth) {
  if (scores.size() != truth.size()) throw MetricError("binary_auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]]) {
        positive_rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

namespace {

struct AucParts {
  std::optional<double> micro, macro, weighted;
  std::vector<std::optional<double>> per_label;
  std::vector<std::size_t> excluded;
};

AucParts compute_auc(const PredictionSet& ps) {
  AucParts out;
  out.micro = binary_auc(ps.scores, ps.y_true);
  const ConfusionCounts c = confusion(ps);
  double sum = 0.0, weighted = 0.0, weight_total = 0.0;
  std::size_t valid = 0;
  for (std::size_t j = 0; j < ps.l; ++j) {
    std::vector<double> s(ps.n);
    std::vector<std::uint8_t> t(ps.n);
    for (std::size_t i = 0; i < ps.n; ++i) {
      s[i] = ps.score(i, j);
      t[i] = ps.truth(i, j);
    }
    const auto auc = binary_auc(s, t);
    out.per_label.push_back(auc);
    if (!auc) {
      out.excluded.push_back(j);
      continue;
    }
    ++valid;
    sum += *auc;
    weighted += static_cast<double>(c.support[j]) * *auc;
    weight_total += static_cast<double>(c.support[j]);
  }
  if (valid > 0) {
    out.macro = sum / static_cast<double>(valid);
    out.weighted = weighted / weight_total;
  }
  return out;
}

}  // namespace

double roc_auc(const PredictionSet& ps, AucMode mode) {
  require_rows(ps, "roc_auc");
  const AucParts parts = compute_auc(ps);
  const auto& value = mode == AucMode::Micro ? parts.micro : mode == AucMode::Macro ? parts.macro : parts.weighted;
  if (!value) {
    throw MetricError(mode == AucMode::Micro ? "roc_auc: flattened truth lacks a positive or a negative"
                                             : "roc_auc: no label has both classes");
  }
  return *value;
}

MetricsReport full_report(const PredictionSet& ps) {
  require_rows(ps, "full_report");
  MetricsReport r;
  r.n = ps.n;
  r.avg_acc = avg_accuracy(ps);
  std::tie(r.em_acc, r.em_count) = exact_match(ps);
  r.one_error = one_error(ps);
  const ConfusionCounts c = confusion(ps);
  r.macro = prf(c, Averaging::Macro);
  r.weighted = prf(c, Averaging::Weighted);
  r.hamming = hamming_loss(ps);
  r.jaccard = jaccard(ps);
  AucParts auc = compute_auc(ps);
  r.auc_micro = auc.micro;
  r.auc_macro = auc.macro;
  r.auc_weighted = auc.weighted;
  r.auc_excluded_labels = auc.excluded;
  for (std::size_t j = 0; j < ps.l; ++j) {
    r.per_label.push_back(LabelReport{c.support[j], c.tp[j], c.fp[j], c.fn[j], c.tn[j], label_prf(c, j), auc.per_label[j]});
  }
  return r;
}

namespace {

nlohmann::ordered_json opt(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

nlohmann::ordered_json report_to_json(const MetricsReport& r, const std::vector<std::string>& names) {
  if (names.size() != r.per_label.size()) throw MetricError("report_to_json: label names do not match report width");
  nlohmann::ordered_json j;
  j["N"] = r.n;
  j["AvgAcc"] = r.avg_acc;
  j["EMAcc"] = r.em_acc;
  j["EM_count"] = r.em_count;
  j["OE"] = r.one_error;
  j["P_macro"] = r.macro.precision;
  j["R_macro"] = r.macro.recall;
  j["F1_macro"] = r.macro.f1;
  j["P_weighted"] = r.weighted.precision;
  j["R_weighted"] = r.weighted.recall;
  j["F1_weighted"] = r.weighted.f1;
  j["HM"] = r.hamming;
  j["J_s"] = r.jaccard;
  j["ROC_AUC_micro"] = opt(r.auc_micro);
  j["ROC_AUC_macro"] = opt(r.auc_macro);
  j["ROC_AUC_weighted"] = opt(r.auc_weighted);
  nlohmann::ordered_json undefined = nlohmann::ordered_json::array();
  if (!r.auc_micro) undefined.push_back("ROC_AUC_micro");
  if (!r.auc_macro) undefined.push_back("ROC_AUC_macro");
  if (!r.auc_weighted) undefined.push_back("ROC_AUC_weighted");
  j["undefined"] = undefined;
  nlohmann::ordered_json excluded = nlohmann::ordered_json::array();
  for (auto k : r.auc_excluded_labels) excluded.push_back(names[k]);
  j["auc_excluded_labels"] = excluded;
  j["labels"] = names;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < r.per_label.size(); ++k) {
    const auto& l = r.per_label[k];
    per.push_back({{"label", names[k]},
                   {"support", l.support},
                   {"TP", l.tp},
                   {"FP", l.fp},
                   {"FN", l.fn},
                   {"TN", l.tn},
                   {"P", l.prf.precision},
                   {"R", l.prf.recall},
                   {"F1", l.prf.f1},
                   {"ROC_AUC", opt(l.auc)}});
  }
  j["per_label"] = per;
  return j;
}

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{"AvgAcc",     "EMAcc",      "OE",          "P_macro",       "R_macro",
                                             "F1_macro",   "P_weighted", "R_weighted",  "F1_weighted",   "HM",
                                             "J_s",        "ROC_AUC_micro", "ROC_AUC_macro", "ROC_AUC_weighted"};
  return cols;
}

bool lower_is_better(const std::string& column) { return column == "HM" || column == "OE"; }

std::string render_table(std::vector<ReportRow> rows, const std::string& sort_by) {
  const auto& cols = report_columns();
  if (std::find(cols.begin(), cols.end(), sort_by) == cols.end()) {
    throw MetricError("render_table: unknown sort column '" + sort_by + "'");
  }
  auto value = [](const ReportRow& row, const std::string& col) -> std::optional<double> {
    const auto it = row.report.find(col);
    if (it == row.report.end() || !it->is_number()) return std::nullopt;
    return it->get<double>();
  };
  const bool low = lower_is_better(sort_by);
  std::stable_sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) {
    const auto va = value(a, sort_by), vb = value(b, sort_by);
    if (!va || !vb) return va.has_value() && !vb.has_value();
    return low ? *va < *vb : *va > *vb;
  });

  std::vector<std::optional<double>> best(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    for (const auto& row : rows) {
      const auto v = value(row, cols[c]);
      if (!v) continue;
      if (!best[c] || (lower_is_better(cols[c]) ? *v < *best[c] : *v > *best[c])) best[c] = v;
    }
  }

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"run"};
  header.insert(header.end(), cols.begin(), cols.end());
  cells.push_back(header);
  for (const auto& row : rows) {
    std::vector<std::string> line{row.name};
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const auto v = value(row, cols[c]);
      if (!v) {
        line.push_back("n/a");
        continue;
      }
      std::ostringstream s;
      s << std::fixed << std::setprecision(4) << *v;
      if (best[c] && *v == *best[c]) s << '*';
      line.push_back(s.str());
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out << "  ";
      if (c + 1 == line.size()) {
        out << line[c];
      } else {
        out << std::left << std::setw(static_cast<int>(width[c])) << line[c];
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace mlec
