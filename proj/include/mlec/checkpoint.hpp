#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "mlec/dataset.hpp"
#include "mlec/model.hpp"
#include "mlec/tokenizer.hpp"
#include "mlec/trainer.hpp"

namespace mlec {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  Model model;
  TokenVocab tokens;
  LabelVocab labels;
  TrainConfig train;
  /// Fingerprint of the seed stream the weights came from.
  std::uint64_t rng_digest = 0;
};

/// Binary layout: "MLCK", u32 version, u32 section count, then sections of
/// (u32 name length, name, u64 payload length, payload), then a CRC-32 of
/// everything before it. Sections: model_config and train_config (JSON),
/// labels (JSON array), token_vocab (vocab text), rng_digest (u64), and one
/// "param:<name>" tensor per parameter. The file is written atomically.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws CheckpointError on a bad magic, a version mismatch, a checksum
/// failure (corrupt or truncated file), or missing/mismatched parameters.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes bytes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace mlec
