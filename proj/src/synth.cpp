#include "egnmt/synth.hpp"

#include <algorithm>
#include <set>

#include "egnmt/errors.hpp"
#include "egnmt/retrieval.hpp"
#include "egnmt/rng.hpp"

namespace egnmt::synth {

std::string make_word(std::size_t index, int side, char prefix) {
  static const char* kSourceSyllables[] = {"ka", "mo", "ri", "tu", "se", "na", "pi", "lo", "vu", "de", "gi", "ho"};
  static const char* kTargetSyllables[] = {"bar", "ten", "sil", "dor", "mun", "fex", "kal", "rop", "wen", "gis",
                                           "lum", "tor"};
  const auto** syl = side == 0 ? kSourceSyllables : kTargetSyllables;
  std::string w(1, prefix);
  std::size_t n = index;
  do {
    w += syl[n % 12];
    n /= 12;
  } while (n > 0);
  return w;
}

std::vector<ParallelPair> copy_corpus(std::uint64_t seed) {
  Rng rng = Rng(seed).split(0xc0);
  std::vector<ParallelPair> out;
  for (std::size_t t = 0; t < 16; ++t) {
    const std::size_t len = 5 + rng.below(3);
    TokenSequence frame;
    for (std::size_t i = 0; i < len; ++i) frame.push_back(make_word(rng.below(40), 0, 'w'));
    const std::size_t slot = rng.below(len);
    std::set<std::size_t> used;
    for (std::size_t v = 0; v < 4; ++v) {
      std::size_t filler;
      do filler = rng.below(24);
      while (!used.insert(filler).second);
      TokenSequence s = frame;
      s[slot] = make_word(filler, 0, 'q');
      out.push_back({s, s});
    }
  }
  return out;
}

namespace {

struct Lexicon {
  const ParaphraseOptions& opt;

  std::string frame_source(std::size_t w) const { return make_word(w, 0, 'f'); }
  std::string frame_target(std::size_t w, std::size_t syn) const { return make_word(w * opt.synonyms + syn, 1, 'f'); }
  std::string slot_source(std::size_t w) const { return make_word(w, 0, 's'); }
  std::string slot_target(std::size_t w) const { return make_word(w, 1, 's'); }
  std::string plain_source(std::size_t w) const { return make_word(w, 0, 'p'); }
  std::string plain_target(std::size_t w) const { return make_word(w, 1, 'p'); }
};

double max_fms(const TokenSequence& query, const std::vector<ParallelPair>& db) {
  double best = 0.0;
  for (const auto& p : db) best = std::max(best, fms(query, p.source));
  return best;
}

}  // namespace

ParaphraseCorpus paraphrase_corpus(const ParaphraseOptions& opt, std::uint64_t seed) {
  if (opt.frame_length < 2 || opt.synonyms == 0 || opt.test_members == 0 || opt.test_high > opt.clusters ||
      opt.slot_words < std::max(opt.members, opt.test_members) + 1)
    throw InputError("paraphrase_corpus: inconsistent options");
  const Lexicon lex{opt};
  const Rng root(seed);
  ParaphraseCorpus corpus;

  Rng crng = root.split(1);
  std::vector<std::size_t> ids(opt.clusters);
  for (std::size_t c = 0; c < opt.clusters; ++c) ids[c] = c;
  for (std::size_t k = ids.size(); k > 1; --k) std::swap(ids[k - 1], ids[crng.below(k)]);
  std::vector<bool> is_test(opt.clusters, false);
  for (std::size_t i = 0; i < opt.test_high; ++i) is_test[ids[i]] = true;

  std::vector<ParallelPair> held_out;  // one test member per test cluster
  for (std::size_t c = 0; c < opt.clusters; ++c) {
    const std::size_t members = is_test[c] ? opt.test_members : opt.members;
    const std::size_t slot = crng.below(opt.frame_length);
    std::vector<std::size_t> words, synonyms;
    for (std::size_t i = 0; i < opt.frame_length; ++i) {
      words.push_back(crng.below(opt.frame_words));
      synonyms.push_back(crng.below(opt.synonyms));
    }
    std::set<std::size_t> fillers;
    while (fillers.size() < std::max(opt.members, opt.test_members) + 1) fillers.insert(crng.below(opt.slot_words));
    std::vector<std::size_t> order(fillers.begin(), fillers.end());
    for (std::size_t k = order.size(); k > 1; --k) std::swap(order[k - 1], order[crng.below(k)]);
    for (std::size_t m = 0; m < members + (is_test[c] ? 1 : 0); ++m) {
      ParallelPair p;
      for (std::size_t i = 0; i < opt.frame_length; ++i) {
        if (i == slot) {
          p.source.push_back(lex.slot_source(order[m]));
          p.target.push_back(lex.slot_target(order[m]));
        } else {
          p.source.push_back(lex.frame_source(words[i]));
          p.target.push_back(lex.frame_target(words[i], synonyms[i]));
        }
      }
      if (m < members) corpus.train.push_back(std::move(p));
      else held_out.push_back(std::move(p));
    }
  }

  Rng prng = root.split(2);
  auto plain_sentence = [&](std::size_t lo, std::size_t hi) {
    ParallelPair p;
    const std::size_t len = lo + prng.below(hi - lo + 1);
    for (std::size_t i = 0; i < len; ++i) {
      const auto w = prng.below(opt.plain_words);
      p.source.push_back(lex.plain_source(w));
      p.target.push_back(lex.plain_target(w));
    }
    return p;
  };
  for (std::size_t i = 0; i < opt.plain_train; ++i) corpus.train.push_back(plain_sentence(4, 9));

  Rng order_rng = root.split(3);
  for (std::size_t k = corpus.train.size(); k > 1; --k) std::swap(corpus.train[k - 1], corpus.train[order_rng.below(k)]);

  for (std::size_t k = held_out.size(); k > 1; --k) std::swap(held_out[k - 1], held_out[order_rng.below(k)]);
  for (auto& p : held_out) {
    corpus.test.push_back(std::move(p));
    corpus.test_kind.push_back("cluster");
  }
  std::size_t attempts = 0;
  std::size_t low = 0;
  while (low < opt.test_low) {
    if (++attempts > 200 * (opt.test_low + 1)) throw InputError("paraphrase_corpus: cannot find low-FMS sentences");
    auto p = plain_sentence(6, 9);
    if (max_fms(p.source, corpus.train) >= opt.low_fms_limit) continue;
    corpus.test.push_back(std::move(p));
    corpus.test_kind.push_back("plain");
    ++low;
  }
  return corpus;
}

}  // namespace egnmt::synth
