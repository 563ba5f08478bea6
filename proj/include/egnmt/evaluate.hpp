#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "egnmt/text.hpp"
#include "json.hpp"

namespace egnmt {

// Clipped n-gram matches and totals for n = 1..4, plus lengths.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t hypothesis_length = 0;
  std::size_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& other);
  double score() const;
};

BleuStats bleu_stats(const TokenSequence& hypothesis, const TokenSequence& reference);

// Case-insensitive corpus BLEU in [0, 100] on whitespace tokens, no smoothing.
double bleu(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references);

const std::set<std::string>& default_stopwords();
std::set<std::string> load_stopwords(const std::string& path);

struct ReusableF1 {
  std::size_t reused = 0;     // sum of |R ∩ S|
  std::size_t generated = 0;  // sum of |S|
  std::size_t reusable = 0;   // sum of |R|
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// R = words in both example and reference, S = words in both example and
// output, stop words removed, counted per sentence and summed. With
// token_level the sets become count-capped multisets.
ReusableF1 reusable_f1(const std::vector<TokenSequence>& outputs, const std::vector<TokenSequence>& references,
                       const std::vector<TokenSequence>& examples, const std::set<std::string>& stopwords,
                       bool token_level = false);

struct BucketRow {
  std::string bucket;
  std::size_t count = 0;
  std::vector<std::optional<double>> bleu;  // per system; empty bucket has none
  std::optional<double> met;
};

struct EvalReport {
  std::vector<std::string> systems;
  std::vector<BucketRow> rows;  // the nine FMS buckets, highest first
  BucketRow overall;
  std::vector<ReusableF1> f1;  // per system

  std::string to_text() const;
  nlohmann::json to_json() const;
};

struct SystemOutputs {
  std::string name;
  std::vector<TokenSequence> outputs;
};

EvalReport bucket_report(const std::vector<double>& fms, const std::vector<TokenSequence>& references,
                         const std::vector<TokenSequence>& examples, const std::vector<SystemOutputs>& systems,
                         const std::set<std::string>& stopwords = default_stopwords(), bool token_level = false);

}  // namespace egnmt
