#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "narasr/model.hpp"
#include "narasr/vocab.hpp"

namespace narasr {

struct Checkpoint {
  ModelParams params;
  Vocabulary vocab;
};

// Single-file layout:
//   8 bytes   "NARCKPT1"
//   u64 LE    header length H
//   H bytes   UTF-8 JSON manifest: format, model dims, vocab tokens + hash, and
//             per tensor {name, shape, offset} with offsets counted in doubles
//   payload   every tensor as raw little-endian f64, in manifest order
std::string serialize_checkpoint(const ModelParams& params, const Vocabulary& vocab);
Checkpoint deserialize_checkpoint(const std::string& bytes,
                                  const std::optional<std::string>& expected_vocab_hash = std::nullopt);

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab, const std::filesystem::path& path);
// Throws FormatError naming the offending manifest field, including a vocab
// hash that differs from expected_vocab_hash.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_vocab_hash = std::nullopt);

}  // namespace narasr
