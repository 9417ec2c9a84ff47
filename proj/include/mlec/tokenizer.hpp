#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlec/dataset.hpp"

namespace mlec {

/// Splits code on whitespace, then separates identifier/number runs from
/// punctuation. Two-character operators (==, !=, <=, >=, //, **, +=, -=, *=, /=)
/// stay whole.
std::vector<std::string> tokenize(const std::string& code);

class TokenVocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;
  static constexpr std::int32_t kBos = 2;
  static constexpr std::int32_t kEos = 3;
  static constexpr std::size_t kReserved = 4;

  /// Only the reserved entries.
  TokenVocab();

  /// Most frequent tokens with frequency >= min_freq fill ids 4.. up to
  /// max_size entries in total; ties go to the lexicographically smaller token.
  static TokenVocab build(const Dataset& train, std::size_t max_size, std::size_t min_freq = 1);

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(const std::string& token) const;  // kUnk when absent
  const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

  /// Versioned text: "mlec-vocab<TAB>1<TAB><size>", then "token<TAB>id" lines.
  void write(std::ostream& out) const;
  static TokenVocab read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static TokenVocab load(const std::filesystem::path& path);

  bool operator==(const TokenVocab& other) const { return tokens_ == other.tokens_; }

 private:
  void append(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

inline TokenVocab build_vocab(const Dataset& train, std::size_t max_size, std::size_t min_freq = 1) {
  return TokenVocab::build(train, max_size, min_freq);
}

/// Fixed-length ids plus a prefix-of-ones attention mask.
struct EncodedSample {
  std::vector<std::int32_t> input_ids;
  std::vector<std::uint8_t> attention_mask;

  std::size_t length() const { return input_ids.size(); }
  /// Number of non-PAD positions.
  std::size_t active() const;
};

inline constexpr std::size_t kDefaultMaxLen = 256;

/// BOS + ids + EOS, truncated to max_len with EOS forced into the last kept
/// slot, then PAD-filled to max_len.
EncodedSample encode(const std::string& code, const TokenVocab& vocab, std::size_t max_len = kDefaultMaxLen);

/// Inverse of encode for the non-reserved ids.
std::vector<std::string> decode(const EncodedSample& sample, const TokenVocab& vocab);

}  // namespace mlec
