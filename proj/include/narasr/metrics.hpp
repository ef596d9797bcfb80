#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "narasr/vocab.hpp"

namespace narasr {

struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t reference_length = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  // Throws ArgumentError when reference_length is 0.
  double rate() const;

  ErrorCounts& operator+=(const ErrorCounts& o);
  bool operator==(const ErrorCounts&) const = default;
};

// Unit-cost Levenshtein alignment. Among minimum-cost alignments the backtrace
// prefers substitution (or match), then insertion, then deletion.
ErrorCounts edit_distance(std::span<const TokenId> ref, std::span<const TokenId> hyp);

using RefHypPair = std::pair<std::vector<TokenId>, std::vector<TokenId>>;

ErrorCounts corpus_error_counts(std::span<const RefHypPair> pairs);
// Sum of errors over sum of reference lengths.
double corpus_error_rate(std::span<const RefHypPair> pairs);

}  // namespace narasr
