#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mlec/dataset.hpp"
#include "mlec/tokenizer.hpp"
#include "test_util.hpp"

using namespace mlec;

namespace {

// Token-presence oracle: does `name` occur as a whole identifier in `text`?
bool mentions(const std::string& text, const std::string& name) {
  for (const auto& tok : tokenize(text)) {
    if (tok == name) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("canonical label vocabulary") {
  const auto v = LabelVocab::canonical();
  REQUIRE(v.size() == 11);
  CHECK(v.name(0) == "variable_operation");
  CHECK(v.name(1) == "loop_statement");
  CHECK(v.name(2) == "literal");
  CHECK(v.name(10) == "arithmetic_operator");
  CHECK(v.index_of("import") == 5);
  CHECK_FALSE(v.index_of("nope").has_value());
  CHECK_THROWS(LabelVocab({"a", "a"}));
  CHECK_THROWS(LabelVocab({"a", ""}));
  CHECK_THROWS(LabelVocab(std::vector<std::string>{}));
}

TEST_CASE("load_dataset") {
  const auto dir = testing::scratch_dir("load");
  const auto vocab = LabelVocab::canonical();

  SUBCASE("two records, one-hot labels, missing label list") {
    testing::write_file(dir / "d.jsonl",
                        "{\"code\": \"x = 1\", \"labels\": [\"loop_statement\", \"literal\"]}\n"
                        "{\"code\": \"print(x)\"}\n");
    const auto ds = load_dataset(dir / "d.jsonl", vocab);
    REQUIRE(ds.size() == 2);
    const LabelVector want{0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0};
    CHECK(ds.samples[0].labels == want);
    CHECK(ds.samples[1].labels == LabelVector(11, 0));
  }
  SUBCASE("null label list is all zeros") {
    testing::write_file(dir / "d.jsonl", "{\"code\": \"x\", \"labels\": null}\n");
    CHECK(load_dataset(dir / "d.jsonl", vocab).samples[0].labels == LabelVector(11, 0));
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset(dir / "absent.jsonl", vocab), DatasetError); }
  SUBCASE("malformed record reports the line") {
    testing::write_file(dir / "d.jsonl", "{\"code\": \"x\"}\n{not json\n");
    try {
      load_dataset(dir / "d.jsonl", vocab);
      FAIL("expected an error");
    } catch (const DatasetError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("unknown label reports name and line") {
    testing::write_file(dir / "d.jsonl", "{\"code\": \"x\", \"labels\": [\"bogus\"]}\n");
    try {
      load_dataset(dir / "d.jsonl", vocab);
      FAIL("expected an error");
    } catch (const DatasetError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("bogus") != std::string::npos);
      CHECK(msg.find("line 1") != std::string::npos);
    }
  }
  SUBCASE("save then load round trips") {
    const auto ds = generate_synthetic(20, vocab, 3);
    save_dataset(dir / "rt.jsonl", ds);
    const auto back = load_dataset(dir / "rt.jsonl", vocab);
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.samples[i].code == ds.samples[i].code);
      CHECK(back.samples[i].labels == ds.samples[i].labels);
    }
  }
}

TEST_CASE("clean_code") {
  CHECK(clean_code("x=1  # set x\n") == "x=1");
  CHECK(clean_code("X = 1") == "X = 1");
  CHECK(clean_code("import os\nprint(1)") == "print(1)");
  CHECK(clean_code("import os\nos.getcwd()") == "import os\nos.getcwd()");
  CHECK(clean_code("\n\n# only a comment\nif x:\n    y = 2   \n\n") == "if x:\n    y = 2");
  CHECK(clean_code("s = '# not a comment'") == "s = '# not a comment'");
  CHECK(clean_code("") == "");

  SUBCASE("imports are kept exactly when the bound name reappears") {
    const std::vector<std::string> sources{
        "import math\nprint(math.pi)", "import math\nprint(1)",       "from os import path\npath.join()",
        "from os import path\nx = 1",  "import numpy as np\nnp.zeros()", "import numpy as np\nnumpy = 1",
    };
    for (const auto& src : sources) {
      const std::string first_line = src.substr(0, src.find('\n'));
      const std::string body = src.substr(src.find('\n') + 1);
      const std::string bound = first_line.substr(first_line.rfind(' ') + 1);
      const bool kept = clean_code(src).find(first_line) != std::string::npos;
      CHECK_MESSAGE(kept == mentions(body, bound), src);
    }
  }
  SUBCASE("idempotent on synthetic corpora") {
    const auto ds = generate_synthetic(200, LabelVocab::canonical(), 11);
    for (const auto& s : ds.samples) CHECK(clean_code(s.code) == s.code);
    const std::string messy = "  \nimport sys\n# a\nx = 1   # b\n    # c\nif x:\n\tprint(x)\n\n";
    CHECK(clean_code(clean_code(messy)) == clean_code(messy));
  }
}

TEST_CASE("drop_invalid") {
  const auto vocab = LabelVocab::canonical();
  LabelVector one(11, 0);
  one[0] = 1;
  const LabelVector zero(11, 0);
  CHECK(drop_invalid(Dataset{{{"a", one}, {"", one}, {"b", one}}, vocab}, true).size() == 2);
  CHECK_THROWS_AS(drop_invalid(Dataset{{{"", one}, {"", zero}}, vocab}, true), DatasetError);
  const auto kept = drop_invalid(Dataset{{{"a", zero}, {"b", zero}, {"c", one}}, vocab}, false);
  REQUIRE(kept.size() == 1);
  CHECK(kept.samples[0].code == "c");
  CHECK(drop_invalid(Dataset{{{"a", zero}, {"b", zero}, {"c", one}}, vocab}, true).size() == 3);
}

TEST_CASE("stratified_split") {
  const auto vocab = LabelVocab::canonical();

  SUBCASE("sizes follow rounding and partition exactly") {
    for (std::size_t n : {2u, 3u, 10u, 37u, 128u}) {
      const auto ds = generate_synthetic(n, vocab, n);
      const auto idx = stratified_split_indices(ds, {0.8, 5});
      const auto want = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(n)));
      CHECK(idx.train.size() == std::clamp<std::size_t>(want, 1, n - 1));
      std::set<std::size_t> all(idx.train.begin(), idx.train.end());
      for (auto i : idx.val) CHECK(all.insert(i).second);
      CHECK(all.size() == n);
      CHECK(*all.rbegin() == n - 1);
    }
    const auto ten = generate_synthetic(10, vocab, 1);
    const auto [tr, va] = stratified_split(ten, {0.8, 0});
    CHECK(tr.size() == 8);
    CHECK(va.size() == 2);
  }
  SUBCASE("deterministic per seed") {
    const auto ds = generate_synthetic(300, vocab, 9);
    const auto a = stratified_split_indices(ds, {0.8, 42});
    const auto b = stratified_split_indices(ds, {0.8, 42});
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(stratified_split(generate_synthetic(1, vocab, 1), {0.8, 0}), DatasetError);
    CHECK_THROWS(stratified_split(generate_synthetic(5, vocab, 1), {1.0, 0}));
  }
  SUBCASE("skewed corpus stays balanced") {
    SyntheticConfig cfg;
    cfg.label_prevalence = {0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.25, 0.35, 0.12, 0.08};
    const auto ds = generate_synthetic(1000, vocab, 21, cfg);
    const auto [tr, va] = stratified_split(ds, {0.8, 3});
    const auto ct = tr.label_counts();
    const auto cv = va.label_counts();
    for (std::size_t j = 0; j < 11; ++j) {
      const double gap = static_cast<double>(ct[j]) / static_cast<double>(tr.size()) -
                         static_cast<double>(cv[j]) / static_cast<double>(va.size());
      CHECK(std::abs(gap) <= 0.05);
    }
  }
}

TEST_CASE("generate_synthetic") {
  const auto vocab = LabelVocab::canonical();
  const auto ds = generate_synthetic(32, vocab, 4);
  REQUIRE(ds.size() == 32);
  double labels = 0;
  for (const auto& s : ds.samples) {
    REQUIRE(s.labels.size() == 11);
    CHECK_FALSE(s.code.empty());
    for (std::size_t j = 0; j < 11; ++j) {
      CHECK(s.labels[j] == (mentions(s.code, marker_token(vocab, j)) ? 1 : 0));
      labels += s.labels[j];
    }
  }
  CHECK(labels > 0);

  const auto again = generate_synthetic(32, vocab, 4);
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(again.samples[i].code == ds.samples[i].code);
    CHECK(again.samples[i].labels == ds.samples[i].labels);
  }
  CHECK(generate_synthetic(1, vocab, 0).size() == 1);

  SUBCASE("average label count near the default of 3") {
    const auto big = generate_synthetic(4000, vocab, 8);
    double total = 0;
    for (const auto& s : big.samples) total += std::count(s.labels.begin(), s.labels.end(), 1);
    CHECK(total / 4000.0 == doctest::Approx(3.0).epsilon(0.05));
  }
}

TEST_CASE("make_batches") {
  auto sizes = [](const auto& batches) {
    std::vector<std::size_t> out;
    for (const auto& b : batches) out.push_back(b.size());
    return out;
  };
  CHECK(sizes(make_batches(10, 4)) == std::vector<std::size_t>{4, 4, 2});
  CHECK(make_batches(10, 1).size() == 10);
  CHECK(make_batches(10, 4, 7) == make_batches(10, 4, 7));
  CHECK(make_batches(10, 4, 7) != make_batches(10, 4));
  std::vector<std::size_t> seen;
  for (const auto& b : make_batches(10, 3, 5)) seen.insert(seen.end(), b.begin(), b.end());
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(seen[i] == i);
  CHECK_THROWS(make_batches(10, 0));
}
