#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace narasr {

using TokenId = std::size_t;

// Token inventory shared by the CTC branch, the conversion projection and the
// LM embedding table. Index 0 is blank, 1 is unk and the last index is eos.
class Vocabulary {
 public:
  static constexpr std::string_view kBlank = "<blank>";
  static constexpr std::string_view kUnk = "<unk>";
  static constexpr std::string_view kEos = "<eos>";

  // Validates reserved positions, uniqueness and the minimum size of 4.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Builds <blank>, <unk>, the given symbols, <eos>.
  static Vocabulary with_symbols(const std::vector<std::string>& symbols);

  std::size_t size() const { return tokens_.size(); }
  TokenId blank_id() const { return 0; }
  TokenId unk_id() const { return 1; }
  TokenId eos_id() const { return tokens_.size() - 1; }

  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Unknown strings map to unk.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;

  std::vector<TokenId> encode(std::string_view space_separated) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  // FNV-1a over the LF-joined token list; identifies the inventory in checkpoints.
  std::uint64_t hash() const;
  std::string hash_hex() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

Vocabulary load_vocab(const std::filesystem::path& path);
void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);

}  // namespace narasr
