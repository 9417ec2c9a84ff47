#include "mlec/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string_view>

namespace mlec {

namespace {

constexpr std::array<std::string_view, 10> kTwoCharOps{"==", "!=", "<=", ">=", "//", "**", "+=", "-=", "*=", "/="};

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool space_char(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

constexpr std::string_view kVocabMagic = "mlec-vocab";
constexpr int kVocabVersion = 1;

}  // namespace

std::vector<std::string> tokenize(const std::string& code) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < code.size()) {
    const char c = code[i];
    if (space_char(c)) {
      ++i;
    } else if (word_char(c)) {
      std::size_t j = i;
      while (j < code.size() && word_char(code[j])) ++j;
      tokens.emplace_back(code.substr(i, j - i));
      i = j;
    } else {
      const std::string_view two = std::string_view(code).substr(i, 2);
      if (two.size() == 2 && std::find(kTwoCharOps.begin(), kTwoCharOps.end(), two) != kTwoCharOps.end()) {
        tokens.emplace_back(two);
        i += 2;
      } else {
        tokens.emplace_back(1, c);
        ++i;
      }
    }
  }
  return tokens;
}

TokenVocab::TokenVocab() {
  for (const char* t : {"<pad>", "<unk>", "<bos>", "<eos>"}) append(t);
}

void TokenVocab::append(const std::string& token) {
  ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

std::int32_t TokenVocab::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

TokenVocab TokenVocab::build(const Dataset& train, std::size_t max_size, std::size_t min_freq) {
  if (max_size < kReserved + 1) throw std::invalid_argument("build_vocab: max_size must be at least 5");
  std::map<std::string, std::size_t> freq;
  for (const auto& s : train.samples)
    for (auto& t : tokenize(s.code)) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : freq) {
    if (n >= min_freq) ranked.emplace_back(tok, n);
  }
  // std::map iteration is lexicographic, so a stable sort by count keeps ties ordered.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  TokenVocab vocab;
  for (const auto& [tok, n] : ranked) {
    if (vocab.size() >= max_size) break;
    if (!vocab.contains(tok)) vocab.append(tok);
  }
  return vocab;
}

void TokenVocab::write(std::ostream& out) const {
  out << kVocabMagic << '\t' << kVocabVersion << '\t' << tokens_.size() << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

TokenVocab TokenVocab::read(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("vocab file is empty");
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  std::size_t size = 0;
  if (!(hs >> magic >> version >> size) || magic != kVocabMagic) throw std::runtime_error("not a vocab file (bad header)");
  if (version != kVocabVersion) throw std::runtime_error("vocab version " + std::to_string(version) + " unsupported");
  TokenVocab vocab;
  vocab.tokens_.clear();
  vocab.ids_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw std::runtime_error("malformed vocab line: " + line);
    const std::string tok = line.substr(0, tab);
    const long id = std::stol(line.substr(tab + 1));
    if (id != static_cast<long>(vocab.tokens_.size())) throw std::runtime_error("vocab ids are not contiguous at '" + tok + "'");
    vocab.append(tok);
  }
  if (vocab.size() != size) throw std::runtime_error("vocab header declares " + std::to_string(size) + " entries, found " + std::to_string(vocab.size()));
  if (vocab.size() < kReserved || vocab.token(kPad) != "<pad>" || vocab.token(kEos) != "<eos>") {
    throw std::runtime_error("vocab is missing reserved entries");
  }
  return vocab;
}

void TokenVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write(out);
}

TokenVocab TokenVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("vocab file not found: " + path.string());
  return read(in);
}

std::size_t EncodedSample::active() const {
  return static_cast<std::size_t>(std::count(attention_mask.begin(), attention_mask.end(), 1));
}

EncodedSample encode(const std::string& code, const TokenVocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("encode: max_len must be at least 3");
  EncodedSample out;
  out.input_ids.reserve(max_len);
  out.input_ids.push_back(TokenVocab::kBos);
  for (const auto& t : tokenize(code)) {
    if (out.input_ids.size() + 1 >= max_len) break;
    out.input_ids.push_back(vocab.id(t));
  }
  out.input_ids.push_back(TokenVocab::kEos);
  out.attention_mask.assign(out.input_ids.size(), 1);
  out.input_ids.resize(max_len, TokenVocab::kPad);
  out.attention_mask.resize(max_len, 0);
  return out;
}

std::vector<std::string> decode(const EncodedSample& sample, const TokenVocab& vocab) {
  std::vector<std::string> tokens;
  for (std::size_t t = 0; t < sample.length(); ++t) {
    const auto id = sample.input_ids[t];
    if (!sample.attention_mask[t] || id < static_cast<std::int32_t>(TokenVocab::kReserved)) continue;
    tokens.push_back(vocab.token(id));
  }
  return tokens;
}

}  // namespace mlec
