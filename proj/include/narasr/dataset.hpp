#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "narasr/synthetic.hpp"
#include "narasr/vocab.hpp"

namespace narasr::io {

// A split <name> is stored as two files in one directory:
//   <name>.txt    one line per utterance: "<id>\t<space separated tokens>"
//   <name>.feats  "NARFEAT1", u64 count, then per utterance in the same order:
//                 u32 id length, id bytes, u64 rows, u64 cols, rows*cols f64.
// All integers and floats are little-endian.
void write_split(const std::filesystem::path& dir, const std::string& name,
                 const std::vector<Utterance>& utterances, const Vocabulary& vocab);
std::vector<Utterance> read_split(const std::filesystem::path& dir, const std::string& name,
                                  const Vocabulary& vocab);

// Transcript-only files ("<id>\t<tokens>"), used for hypotheses and references.
using Transcript = std::pair<std::string, std::vector<TokenId>>;
void write_transcripts(const std::filesystem::path& path, const std::vector<Transcript>& lines,
                       const Vocabulary& vocab);
std::vector<Transcript> read_transcripts(const std::filesystem::path& path, const Vocabulary& vocab);

// One space-separated token sequence per line.
void write_text_corpus(const std::filesystem::path& path, const std::vector<std::vector<TokenId>>& corpus,
                       const Vocabulary& vocab);
std::vector<std::vector<TokenId>> read_text_corpus(const std::filesystem::path& path, const Vocabulary& vocab);

// Writes vocab.txt, train/dev/test splits and lm_corpus.txt.
void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus);

// Little-endian primitives shared with the checkpoint format.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);
std::uint32_t get_u32(const char* p);
std::uint64_t get_u64(const char* p);
double get_f64(const char* p);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace narasr::io
