#pragma once
// Small models and random batches shared by the model-level tests.

#include <vector>

#include "egnmt/model.hpp"
#include "egnmt/rng.hpp"
#include "egnmt/text.hpp"
#include "egnmt/training.hpp"

namespace egnmt::testing {

inline ModelConfig tiny_config(Variant variant, std::size_t d_model = 16) {
  ModelConfig c;
  c.d_model = d_model;
  c.heads = 2;
  c.ffn_dim = 2 * d_model;
  c.encoder_layers = 1;
  c.decoder_layers = 2;
  c.dropout = 0.0;
  c.max_len = 20;
  c.variant = variant;
  c.src_vocab = 12;
  c.tgt_vocab = 11;
  return c;
}

inline std::vector<std::int32_t> random_ids(Rng& rng, std::size_t len, std::size_t vocab, bool eos) {
  std::vector<std::int32_t> out(len);
  for (auto& v : out) v = static_cast<std::int32_t>(Vocabulary::kReserved + rng.below(vocab - Vocabulary::kReserved));
  if (eos) out.push_back(Vocabulary::kEos);
  return out;
}

// Pairs whose masked sides share lengths with the unmasked ones and mask a
// random subset of positions.
inline std::vector<EncodedPair> random_pairs(Rng& rng, const ModelConfig& c, std::size_t n) {
  std::vector<EncodedPair> out;
  for (std::size_t k = 0; k < n; ++k) {
    EncodedPair p;
    p.source = random_ids(rng, 3 + rng.below(3), c.src_vocab, true);
    p.example = random_ids(rng, 3 + rng.below(3), c.tgt_vocab, true);
    p.masked_example = p.example;
    for (std::size_t j = 0; j + 1 < p.example.size(); ++j)
      if (rng.below(3) == 0) p.masked_example[j] = Vocabulary::kMask;
    p.target = random_ids(rng, 2 + rng.below(4), c.tgt_vocab, false);
    p.masked_target = p.target;
    for (auto& v : p.masked_target)
      if (rng.below(3) == 0) v = Vocabulary::kMask;
    p.fms = 0.5;
    out.push_back(p);
  }
  return out;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace egnmt::testing
