#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egnmt/text.hpp"

namespace egnmt::synth {

// 16 templates x 4 slot variants; each target equals its source.
std::vector<ParallelPair> copy_corpus(std::uint64_t seed);

struct ParaphraseOptions {
  std::size_t clusters = 1000;
  std::size_t members = 3;          // training members per cluster
  std::size_t test_members = 1;     // training members of clusters that supply a test sentence
  std::size_t frame_length = 10;    // words per cluster sentence, slot included
  std::size_t frame_words = 200;    // source words used in frames
  std::size_t synonyms = 4;         // target renderings per frame word
  std::size_t slot_words = 60;
  std::size_t plain_words = 300;    // vocabulary of compositional sentences
  std::size_t plain_train = 1400;
  std::size_t test_high = 300;
  std::size_t test_low = 300;
  double low_fms_limit = 0.2;
};

struct ParaphraseCorpus {
  std::vector<ParallelPair> train;
  std::vector<ParallelPair> test;
  std::vector<std::string> test_kind;  // "cluster" or "plain"
};

// Cluster sentences share a frame whose words take cluster-specific target
// synonyms, so a retrieved cluster mate shows how to render the frame; only
// the slot word differs. Clusters that supply a test sentence keep only
// test_members training sentences, the rest keep members. Plain sentences
// translate word by word. Plain test sentences are kept only when no
// training source reaches low_fms_limit.
ParaphraseCorpus paraphrase_corpus(const ParaphraseOptions& options, std::uint64_t seed);

// Pronounceable word for an index; `side` picks disjoint syllable sets.
std::string make_word(std::size_t index, int side, char prefix);

}  // namespace egnmt::synth
