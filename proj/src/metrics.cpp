#include "narasr/metrics.hpp"

#include <algorithm>

#include "narasr/errors.hpp"

namespace narasr {

double ErrorCounts::rate() const {
  if (reference_length == 0) throw ArgumentError("error rate requested with empty reference");
  return static_cast<double>(errors()) / static_cast<double>(reference_length);
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  substitutions += o.substitutions;
  insertions += o.insertions;
  deletions += o.deletions;
  reference_length += o.reference_length;
  return *this;
}

ErrorCounts edit_distance(std::span<const TokenId> ref, std::span<const TokenId> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  // cost[i][j]: distance between ref[0,i) and hyp[0,j)
  std::vector<std::size_t> cost((n + 1) * (m + 1));
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) cost[at(i, 0)] = i;
  for (std::size_t j = 0; j <= m; ++j) cost[at(0, j)] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = cost[at(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const std::size_t ins = cost[at(i, j - 1)] + 1;
      const std::size_t del = cost[at(i - 1, j)] + 1;
      cost[at(i, j)] = std::min({diag, ins, del});
    }
  }

  ErrorCounts counts;
  counts.reference_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t here = cost[at(i, j)];
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (cost[at(i - 1, j - 1)] + (same ? 0 : 1) == here) {
        if (!same) ++counts.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && cost[at(i, j - 1)] + 1 == here) {
      ++counts.insertions;
      --j;
      continue;
    }
    ++counts.deletions;
    --i;
  }
  return counts;
}

ErrorCounts corpus_error_counts(std::span<const RefHypPair> pairs) {
  ErrorCounts total;
  for (const auto& [ref, hyp] : pairs) total += edit_distance(ref, hyp);
  return total;
}

double corpus_error_rate(std::span<const RefHypPair> pairs) {
  if (pairs.empty()) throw ArgumentError("corpus error rate of an empty corpus");
  const ErrorCounts total = corpus_error_counts(pairs);
  if (total.reference_length == 0) throw ArgumentError("corpus has no reference tokens");
  return total.rate();
}

}  // namespace narasr
