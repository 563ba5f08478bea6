#pragma once

#include <vector>

#include "egnmt/alignment.hpp"
#include "egnmt/text.hpp"

namespace egnmt {

// A sentence with some positions replaced by the mask symbol.
struct MaskedSequence {
  TokenSequence tokens;
  std::vector<bool> mask_flags;

  std::size_t size() const { return tokens.size(); }
  std::size_t num_masked() const;
};

// M(x^m): keep x^m[i] while its running count stays within its count in x.
MaskedSequence mask_source(const TokenSequence& x, const TokenSequence& xm);

// M(y^m): mask y^m[j] when it is linked to a masked source position.
// Unaligned positions are kept.
MaskedSequence mask_example(const MaskedSequence& masked_source, const TokenSequence& ym, const Alignment& alignment);

enum class ReferenceMaskMode {
  kLcs,  // keep a longest common subsequence of y and y^m
  kBag,  // keep count-capped bag overlap, ignoring order
};

// M(y): keep the parts of y shared with y^m, mask the rest.
MaskedSequence mask_reference(const TokenSequence& y, const TokenSequence& ym,
                              ReferenceMaskMode mode = ReferenceMaskMode::kLcs);

}  // namespace egnmt
