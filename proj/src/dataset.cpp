#include "mlec/dataset.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mlec/rng.hpp"

namespace mlec {

using json = nlohmann::json;

// ---- LabelVocab ---------------------------------------------------------------

LabelVocab::LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw std::invalid_argument("label vocabulary must not be empty");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw std::invalid_argument("label names must be non-empty");
    if (!seen.insert(n).second) throw std::invalid_argument("duplicate label name '" + n + "'");
  }
}

LabelVocab LabelVocab::canonical() {
  return LabelVocab({"variable_operation", "loop_statement", "literal", "list_operation", "input_output", "import",
                     "function_invocation", "function_definition", "conditional_statement", "comparison_operator",
                     "arithmetic_operator"});
}

std::optional<std::size_t> LabelVocab::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names_.begin());
}

std::vector<std::size_t> Dataset::label_counts() const {
  std::vector<std::size_t> counts(vocab.size(), 0);
  for (const auto& s : samples)
    for (std::size_t j = 0; j < counts.size(); ++j) counts[j] += s.labels[j];
  return counts;
}

// ---- Record files ------------------------------------------------------------

Dataset load_dataset(const std::filesystem::path& path, const LabelVocab& vocab) {
  std::ifstream in(path);
  if (!in) throw DatasetError("dataset file not found: " + path.string());
  Dataset ds{{}, vocab};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetError("malformed record at line " + std::to_string(line_no) + " (" + where + "): " + e.what());
    }
    if (!record.is_object() || !record.contains("code") || !record["code"].is_string()) {
      throw DatasetError("malformed record at line " + std::to_string(line_no) + " (" + where +
                         "): missing string field 'code'");
    }
    LabeledSample sample{record["code"].get<std::string>(), LabelVector(vocab.size(), 0)};
    if (record.contains("labels") && !record["labels"].is_null()) {
      const auto& labels = record["labels"];
      if (!labels.is_array()) {
        throw DatasetError("malformed record at line " + std::to_string(line_no) + " (" + where +
                           "): 'labels' must be a list of names");
      }
      for (const auto& entry : labels) {
        if (!entry.is_string()) {
          throw DatasetError("malformed record at line " + std::to_string(line_no) + " (" + where +
                             "): label entries must be strings");
        }
        const auto name = entry.get<std::string>();
        const auto idx = vocab.index_of(name);
        if (!idx) throw DatasetError("unknown label '" + name + "' at line " + std::to_string(line_no) + " (" + where + ")");
        sample.labels[*idx] = 1;
      }
    }
    ds.samples.push_back(std::move(sample));
  }
  if (ds.samples.empty()) throw DatasetError("dataset file has no records: " + path.string());
  return ds;
}

std::string to_record_line(const LabeledSample& sample, const LabelVocab& vocab) {
  json labels = json::array();
  for (std::size_t j = 0; j < vocab.size(); ++j)
    if (sample.labels.at(j)) labels.push_back(vocab.name(j));
  json record;
  record["code"] = sample.code;
  record["labels"] = std::move(labels);
  return record.dump();
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  for (const auto& s : dataset.samples) out << to_record_line(s, dataset.vocab) << '\n';
  if (!out) throw DatasetError("write failed for " + path.string());
}

// ---- Cleaning ----------------------------------------------------------------

namespace {

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string rstrip(std::string s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

std::string strip(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\f\v");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\f\v");
  return s.substr(b, e - b + 1);
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\f\v") == std::string::npos; }

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur)) lines.push_back(cur);
  return lines;
}

// Tracks Python string literals across lines so '#' inside strings is kept.
struct LexState {
  char quote = 0;
  bool triple = false;
};

// Position of the first '#' outside string literals, or npos. Updates the
// string state (triple-quoted strings survive the line break).
std::size_t comment_start(const std::string& line, LexState& st) {
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (st.quote) {
      if (c == '\\') {
        ++i;
      } else if (c == st.quote) {
        if (!st.triple) {
          st.quote = 0;
        } else if (line.compare(i, 3, std::string(3, c)) == 0) {
          st.quote = 0;
          st.triple = false;
          i += 2;
        }
      }
      continue;
    }
    if (c == '#') return i;
    if (c == '"' || c == '\'') {
      st.quote = c;
      st.triple = line.compare(i, 3, std::string(3, c)) == 0;
      if (st.triple) i += 2;
    }
  }
  if (st.quote && !st.triple) st.quote = 0;
  return std::string::npos;
}

void collect_identifiers(const std::string& text, std::unordered_set<std::string>& out) {
  for (std::size_t i = 0; i < text.size();) {
    if (is_ident_start(text[i])) {
      std::size_t j = i;
      while (j < text.size() && is_ident_char(text[j])) ++j;
      out.insert(text.substr(i, j - i));
      i = j;
    } else {
      ++i;
    }
  }
}

bool valid_dotted(const std::string& s) {
  if (s.empty()) return false;
  bool expect_start = true;
  for (char c : s) {
    if (c == '.') {
      if (expect_start) return false;
      expect_start = true;
    } else if (expect_start ? is_ident_start(c) : is_ident_char(c)) {
      expect_start = false;
    } else {
      return false;
    }
  }
  return !expect_start;
}

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// Names bound by a single-line import statement; nullopt when the line is not
// an import we can reason about (so it is kept).
std::optional<std::vector<std::string>> import_bindings(const std::string& raw) {
  const std::string line = strip(raw);
  std::string clause;
  bool from_form = false;
  if (line.rfind("import ", 0) == 0) {
    clause = line.substr(7);
  } else if (line.rfind("from ", 0) == 0) {
    const auto pos = line.find(" import ");
    if (pos == std::string::npos) return std::nullopt;
    const std::string module = strip(line.substr(5, pos - 5));
    const auto first = module.find_first_not_of('.');
    if (first != std::string::npos && !valid_dotted(module.substr(first))) return std::nullopt;
    clause = line.substr(pos + 8);
    from_form = true;
  } else {
    return std::nullopt;
  }
  clause = strip(clause);
  if (from_form && clause.size() >= 2 && clause.front() == '(' && clause.back() == ')') {
    clause = clause.substr(1, clause.size() - 2);
  }
  if (clause.empty() || clause.find('*') != std::string::npos) return std::nullopt;
  std::vector<std::string> bound;
  std::stringstream items(clause);
  std::string item;
  while (std::getline(items, item, ',')) {
    const auto w = words(item);
    if (w.size() == 1 && valid_dotted(w[0])) {
      if (from_form && w[0].find('.') != std::string::npos) return std::nullopt;
      bound.push_back(w[0].substr(0, w[0].find('.')));
    } else if (w.size() == 3 && w[1] == "as" && valid_dotted(w[0]) && valid_dotted(w[2]) &&
               w[2].find('.') == std::string::npos) {
      bound.push_back(w[2]);
    } else if (w.empty() && from_form) {
      continue;  // trailing comma inside parentheses
    } else {
      return std::nullopt;
    }
  }
  if (bound.empty()) return std::nullopt;
  return bound;
}

}  // namespace

std::string clean_code(const std::string& source) {
  struct Line {
    std::string text;
    bool starts_in_string;
  };
  std::vector<Line> kept;
  LexState st;
  for (const auto& raw : split_lines(source)) {
    const bool in_string = st.quote != 0;
    const auto cut = comment_start(raw, st);
    if (cut != std::string::npos) {
      const std::string before = raw.substr(0, cut);
      if (blank(before)) continue;  // comment-only line
      kept.push_back({rstrip(before), in_string});
    } else {
      kept.push_back({rstrip(raw), in_string});
    }
  }

  std::vector<std::optional<std::vector<std::string>>> imports(kept.size());
  std::unordered_set<std::string> used;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (!kept[i].starts_in_string) imports[i] = import_bindings(kept[i].text);
    if (!imports[i]) collect_identifiers(kept[i].text, used);
  }

  std::vector<std::string> out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (imports[i]) {
      const bool any_used = std::any_of(imports[i]->begin(), imports[i]->end(),
                                        [&](const std::string& name) { return used.count(name) > 0; });
      if (!any_used) continue;
    }
    out.push_back(kept[i].text);
  }

  std::size_t first = 0, last = out.size();
  while (first < last && out[first].empty()) ++first;
  while (last > first && out[last - 1].empty()) --last;
  std::string result;
  for (std::size_t i = first; i < last; ++i) {
    if (i > first) result += '\n';
    result += out[i];
  }
  return result;
}

Dataset clean_dataset(Dataset dataset) {
  for (auto& s : dataset.samples) s.code = clean_code(s.code);
  return dataset;
}

Dataset drop_invalid(Dataset dataset, bool allow_zero_labels) {
  std::vector<LabeledSample> kept;
  for (auto& s : dataset.samples) {
    if (blank(s.code)) continue;
    if (!allow_zero_labels && std::none_of(s.labels.begin(), s.labels.end(), [](auto v) { return v != 0; })) continue;
    kept.push_back(std::move(s));
  }
  if (kept.empty()) throw DatasetError("no valid samples remain after dropping empty rows");
  dataset.samples = std::move(kept);
  return dataset;
}

// ---- Splitting ---------------------------------------------------------------

SplitIndices stratified_split_indices(const Dataset& dataset, const SplitConfig& cfg) {
  const std::size_t n = dataset.size();
  if (n < 2) throw DatasetError("stratified split needs at least 2 samples, got " + std::to_string(n));
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw std::invalid_argument("train_fraction must lie in (0, 1)");
  }
  const std::size_t labels = dataset.vocab.size();
  auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);

  // Subset 0 = train, 1 = val.
  const std::array<double, 2> ratio{static_cast<double>(n_train) / static_cast<double>(n),
                                    static_cast<double>(n - n_train) / static_cast<double>(n)};
  std::array<std::size_t, 2> demand{n_train, n - n_train};
  std::array<std::vector<double>, 2> label_demand;
  const auto counts = dataset.label_counts();
  for (int s = 0; s < 2; ++s) {
    label_demand[s].resize(labels);
    for (std::size_t j = 0; j < labels; ++j) label_demand[s][j] = ratio[s] * static_cast<double>(counts[j]);
  }

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<int> assigned(n, -1);
  std::vector<std::size_t> remaining = counts;

  auto pick = [&](auto better_or_tie) {
    // better_or_tie(s0, s1) returns -1 (0 wins), 1 (1 wins), 0 (tie).
    const bool open0 = demand[0] > 0, open1 = demand[1] > 0;
    if (open0 != open1) return open0 ? 0 : 1;
    const int cmp = better_or_tie();
    if (cmp != 0) return cmp < 0 ? 0 : 1;
    return static_cast<int>(rng.index(2));
  };

  auto assign = [&](std::size_t i, int s) {
    assigned[i] = s;
    --demand[s];
    const auto& y = dataset.samples[i].labels;
    for (std::size_t j = 0; j < labels; ++j) {
      if (!y[j]) continue;
      label_demand[s][j] -= 1.0;
      --remaining[j];
    }
  };

  while (true) {
    std::optional<std::size_t> rarest;
    for (std::size_t j = 0; j < labels; ++j) {
      if (remaining[j] == 0) continue;
      if (!rarest || remaining[j] < remaining[*rarest]) rarest = j;
    }
    if (!rarest) break;
    const std::size_t l = *rarest;
    for (std::size_t i : order) {
      if (assigned[i] >= 0 || !dataset.samples[i].labels[l]) continue;
      const int s = pick([&] {
        if (label_demand[0][l] != label_demand[1][l]) return label_demand[0][l] > label_demand[1][l] ? -1 : 1;
        if (demand[0] != demand[1]) return demand[0] > demand[1] ? -1 : 1;
        return 0;
      });
      assign(i, s);
    }
  }
  for (std::size_t i : order) {
    if (assigned[i] >= 0) continue;
    const int s = pick([&] {
      if (demand[0] != demand[1]) return demand[0] > demand[1] ? -1 : 1;
      return 0;
    });
    assign(i, s);
  }

  SplitIndices out;
  for (std::size_t i = 0; i < n; ++i) (assigned[i] == 0 ? out.train : out.val).push_back(i);
  return out;
}

Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& indices) {
  Dataset out{{}, dataset.vocab};
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(dataset.samples.at(i));
  return out;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, const SplitConfig& cfg) {
  const auto idx = stratified_split_indices(dataset, cfg);
  return {subset(dataset, idx.train), subset(dataset, idx.val)};
}

// ---- Synthetic corpus --------------------------------------------------------

std::string marker_token(const LabelVocab& vocab, std::size_t j) { return "mark_" + vocab.name(j); }

namespace {

std::string fill(std::string tmpl, const std::string& marker, Rng& rng) {
  for (std::size_t pos; (pos = tmpl.find("{m}")) != std::string::npos;) tmpl.replace(pos, 3, marker);
  for (std::size_t pos; (pos = tmpl.find("{n}")) != std::string::npos;) {
    tmpl.replace(pos, 3, std::to_string(rng.index(100)));
  }
  return tmpl;
}

const std::vector<std::string>& marker_templates() {
  static const std::vector<std::string> t{
      "{m} = {m} + {n}",
      "print({m})",
      "if {m} > {n}:\n    {m} = {n}",
      "for i in range({m}):\n    total = total + i",
      "{m} = [{n}, {n}]",
      "result = {m}({n})",
  };
  return t;
}

const std::vector<std::string>& filler_templates() {
  static const std::vector<std::string> t{
      "x = {n}",
      "y = x + {n}",
      "total = 0",
      "print(y)",
      "data = [x, y]",
      "count = count + 1",
      "while x < {n}:\n    x = x + 1",
      "def helper(a):\n    return a * {n}",
      "z = helper(x)",
      "s = input()",
      "n = int(s)",
  };
  return t;
}

const std::vector<std::string>& noise_templates() {
  static const std::vector<std::string> t{
      "# check the value",
      "import math",
      "import sys",
      "    # indented note",
  };
  return t;
}

}  // namespace

Dataset generate_synthetic(std::size_t n, const LabelVocab& vocab, std::uint64_t seed, const SyntheticConfig& cfg) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (!cfg.label_prevalence.empty() && cfg.label_prevalence.size() != vocab.size()) {
    throw std::invalid_argument("generate_synthetic: label_prevalence length must equal the label count");
  }
  if (cfg.max_filler_lines < cfg.min_filler_lines) throw std::invalid_argument("generate_synthetic: filler range inverted");
  const std::size_t L = vocab.size();
  Rng rng(seed);
  Dataset ds{{}, vocab};
  ds.samples.reserve(n);
  std::vector<std::size_t> label_order(L);
  for (std::size_t i = 0; i < n; ++i) {
    LabelVector y(L, 0);
    if (!cfg.label_prevalence.empty()) {
      for (std::size_t j = 0; j < L; ++j) y[j] = rng.bernoulli(cfg.label_prevalence[j]) ? 1 : 0;
    } else {
      std::size_t count = 1;
      if (L > 1) {
        const double p = std::clamp((cfg.avg_labels - 1.0) / static_cast<double>(L - 1), 0.0, 1.0);
        for (std::size_t k = 0; k + 1 < L; ++k) count += rng.bernoulli(p) ? 1 : 0;
      }
      std::iota(label_order.begin(), label_order.end(), 0);
      rng.shuffle(label_order);
      for (std::size_t k = 0; k < count; ++k) y[label_order[k]] = 1;
    }

    std::vector<std::string> lines;
    for (std::size_t j = 0; j < L; ++j) {
      if (!y[j]) continue;
      const auto& t = marker_templates();
      lines.push_back(fill(t[rng.index(t.size())], marker_token(vocab, j), rng));
    }
    const std::size_t fillers = cfg.min_filler_lines + rng.index(cfg.max_filler_lines - cfg.min_filler_lines + 1);
    for (std::size_t k = 0; k < fillers; ++k) {
      const auto& t = filler_templates();
      lines.push_back(fill(t[rng.index(t.size())], "", rng));
    }
    if (rng.bernoulli(cfg.noise_probability)) {
      const auto& t = noise_templates();
      lines.push_back(t[rng.index(t.size())]);
    }
    rng.shuffle(lines);

    std::string code;
    for (const auto& l : lines) code += l + '\n';
    ds.samples.push_back({clean_code(code), std::move(y)});
  }
  return ds;
}

// ---- Batching ----------------------------------------------------------------

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace mlec
