#include "narasr/vocab.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "narasr/errors.hpp"

namespace narasr {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4) {
    throw FormatError("vocabulary needs at least 4 entries, got " + std::to_string(tokens_.size()));
  }
  if (tokens_.front() != kBlank) throw FormatError("vocabulary line 0 must be <blank>");
  if (tokens_[1] != kUnk) throw FormatError("vocabulary line 1 must be <unk>");
  if (tokens_.back() != kEos) throw FormatError("last vocabulary line must be <eos>");
  for (TokenId i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw FormatError("empty token at line " + std::to_string(i));
    if (!index_.emplace(tokens_[i], i).second) {
      throw FormatError("duplicate token '" + tokens_[i] + "' at line " + std::to_string(i));
    }
  }
}

Vocabulary Vocabulary::with_symbols(const std::vector<std::string>& symbols) {
  std::vector<std::string> tokens;
  tokens.reserve(symbols.size() + 3);
  tokens.emplace_back(kBlank);
  tokens.emplace_back(kUnk);
  tokens.insert(tokens.end(), symbols.begin(), symbols.end());
  tokens.emplace_back(kEos);
  return Vocabulary(std::move(tokens));
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_id() : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

std::vector<TokenId> Vocabulary::encode(std::string_view space_separated) const {
  std::vector<TokenId> ids;
  std::istringstream in{std::string(space_separated)};
  std::string tok;
  while (in >> tok) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& t : tokens_) {
    for (char c : t) mix(static_cast<unsigned char>(c));
    mix('\n');
  }
  return h;
}

std::string Vocabulary::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      throw FormatError("vocabulary " + path.string() + " uses CRLF line endings");
    }
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write vocabulary file " + path.string());
  for (const auto& t : vocab.tokens()) out << t << '\n';
}

}  // namespace narasr
