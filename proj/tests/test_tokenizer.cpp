#include <doctest.h>

#include <sstream>

#include "mlec/tokenizer.hpp"
#include "test_util.hpp"

using namespace mlec;

namespace {

using Tokens = std::vector<std::string>;

Dataset corpus(std::vector<std::string> codes) {
  Dataset ds;
  for (auto& c : codes) ds.samples.push_back({std::move(c), LabelVector(11, 0)});
  return ds;
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("x=1") == Tokens{"x", "=", "1"});
  CHECK(tokenize("if a==b:") == Tokens{"if", "a", "==", "b", ":"});
  CHECK(tokenize("") == Tokens{});
  CHECK(tokenize("a<=b>=c!=d//e**f") == Tokens{"a", "<=", "b", ">=", "c", "!=", "d", "//", "e", "**", "f"});
  CHECK(tokenize("x+=1;y-=2;z*=3;w/=4") ==
        Tokens{"x", "+=", "1", ";", "y", "-=", "2", ";", "z", "*=", "3", ";", "w", "/=", "4"});
  CHECK(tokenize("print(foo_bar[0])\n  ret") == Tokens{"print", "(", "foo_bar", "[", "0", "]", ")", "ret"});
  CHECK(tokenize("a<b") == Tokens{"a", "<", "b"});
}

TEST_CASE("build_vocab") {
  SUBCASE("reserved ids then distinct tokens") {
    const auto v = build_vocab(corpus({"a b c", "a b"}), 100);
    CHECK(v.size() == 7);
    CHECK(v.token(TokenVocab::kPad) == "<pad>");
    CHECK(v.id("a") == 4);
    CHECK(v.id("b") == 5);
    CHECK(v.id("c") == 6);
  }
  SUBCASE("max_size 5 admits only the most frequent token") {
    const auto v = build_vocab(corpus({"z z z y y x"}), 5);
    CHECK(v.size() == 5);
    CHECK(v.id("z") == 4);
    CHECK(v.id("y") == TokenVocab::kUnk);
  }
  SUBCASE("ties go to the lexicographically smaller token") {
    const auto v = build_vocab(corpus({"beta alpha"}), 100);
    CHECK(v.id("alpha") < v.id("beta"));
  }
  SUBCASE("min_freq filters rare tokens") {
    const auto v = build_vocab(corpus({"a a b"}), 100, 2);
    CHECK(v.size() == 5);
    CHECK_FALSE(v.contains("b"));
  }
  SUBCASE("text round trip") {
    const auto v = build_vocab(corpus({"x = y + 1", "print(x)"}), 100);
    std::stringstream ss;
    v.write(ss);
    CHECK(TokenVocab::read(ss) == v);
    const auto dir = testing::scratch_dir("vocab");
    v.save(dir / "vocab.txt");
    CHECK(TokenVocab::load(dir / "vocab.txt") == v);
    CHECK(testing::read_file(dir / "vocab.txt").rfind("mlec-vocab\t1\t", 0) == 0);
  }
  SUBCASE("bad header is rejected") {
    std::stringstream ss("not-a-vocab\n");
    CHECK_THROWS(TokenVocab::read(ss));
  }
}

TEST_CASE("encode") {
  const auto v = build_vocab(corpus({"a b c d"}), 100);

  SUBCASE("short input is padded") {
    const auto e = encode("a b", v, 256);
    REQUIRE(e.length() == 256);
    CHECK(e.input_ids[0] == TokenVocab::kBos);
    CHECK(e.input_ids[1] == v.id("a"));
    CHECK(e.input_ids[2] == v.id("b"));
    CHECK(e.input_ids[3] == TokenVocab::kEos);
    CHECK(e.input_ids[4] == TokenVocab::kPad);
    CHECK(e.active() == 4);
  }
  SUBCASE("long input is truncated with EOS last") {
    std::string code;
    for (int i = 0; i < 300; ++i) code += "a ";
    const auto e = encode(code, v, 256);
    REQUIRE(e.length() == 256);
    CHECK(e.input_ids.back() == TokenVocab::kEos);
    CHECK(e.active() == 256);
  }
  SUBCASE("unknown tokens map to UNK") { CHECK(encode("a zzz", v, 8).input_ids[2] == TokenVocab::kUnk); }
  SUBCASE("mask invariants for every length") {
    for (std::size_t n = 0; n < 12; ++n) {
      std::string code;
      for (std::size_t i = 0; i < n; ++i) code += "b ";
      const auto e = encode(code, v, 10);
      REQUIRE(e.length() == 10);
      std::size_t ones = 0;
      bool seen_zero = false;
      for (std::size_t t = 0; t < 10; ++t) {
        CHECK((e.attention_mask[t] == 0) == (e.input_ids[t] == TokenVocab::kPad));
        if (e.attention_mask[t]) {
          CHECK_FALSE(seen_zero);
          ++ones;
        } else {
          seen_zero = true;
        }
      }
      CHECK(ones == std::min<std::size_t>(n + 2, 10));
    }
  }
  SUBCASE("decode inverts encode") {
    const Tokens toks{"d", "a", "c", "b", "a"};
    CHECK(decode(encode("d a c b a", v, 16), v) == toks);
  }
}
