#include "egnmt/masking.hpp"

#include <algorithm>
#include <unordered_map>

#include "egnmt/errors.hpp"

namespace egnmt {

namespace {

MaskedSequence from_flags(const TokenSequence& tokens, std::vector<bool> flags) {
  MaskedSequence out{tokens, std::move(flags)};
  for (std::size_t i = 0; i < out.tokens.size(); ++i)
    if (out.mask_flags[i]) out.tokens[i] = std::string(kMaskToken);
  return out;
}

std::vector<bool> bag_flags(const TokenSequence& reference, const TokenSequence& sentence) {
  std::unordered_map<std::string, std::size_t> budget;
  for (const auto& t : reference) ++budget[t];
  std::vector<bool> flags(sentence.size());
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    auto it = budget.find(sentence[i]);
    if (it != budget.end() && it->second > 0) {
      --it->second;
    } else {
      flags[i] = true;
    }
  }
  return flags;
}

}  // namespace

std::size_t MaskedSequence::num_masked() const {
  return static_cast<std::size_t>(std::count(mask_flags.begin(), mask_flags.end(), true));
}

MaskedSequence mask_source(const TokenSequence& x, const TokenSequence& xm) { return from_flags(xm, bag_flags(x, xm)); }

MaskedSequence mask_example(const MaskedSequence& masked_source, const TokenSequence& ym, const Alignment& alignment) {
  alignment.check_bounds(masked_source.size(), ym.size());
  std::vector<bool> flags(ym.size(), false);
  for (const auto& link : alignment.links())
    if (masked_source.mask_flags[link.source]) flags[link.target] = true;
  return from_flags(ym, std::move(flags));
}

MaskedSequence mask_reference(const TokenSequence& y, const TokenSequence& ym, ReferenceMaskMode mode) {
  if (mode == ReferenceMaskMode::kBag) return from_flags(y, bag_flags(ym, y));

  const std::size_t n = y.size(), m = ym.size();
  // lcs[i][j]: LCS length of y[0..i) and ym[0..j).
  std::vector<std::vector<std::size_t>> lcs(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      lcs[i][j] = y[i - 1] == ym[j - 1] ? lcs[i - 1][j - 1] + 1 : std::max(lcs[i - 1][j], lcs[i][j - 1]);

  std::vector<bool> flags(n, true);
  std::size_t i = n, j = m;
  while (i > 0 && j > 0) {
    if (y[i - 1] == ym[j - 1]) {
      flags[i - 1] = false;
      --i;
      --j;
    } else if (lcs[i - 1][j] >= lcs[i][j - 1]) {
      --i;
    } else {
      --j;
    }
  }
  return from_flags(y, std::move(flags));
}

}  // namespace egnmt
