#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "egnmt/text.hpp"

namespace egnmt {

inline constexpr std::string_view kNullToken = "<null>";

struct Ibm1Options {
  std::size_t iterations = 5;
  bool null_word = true;
  // fast_align-style position prior p(i | j) ~ exp(-tension * |i/n - j/m|).
  bool diagonal_prior = false;
  double diagonal_tension = 4.0;
  double null_probability = 0.08;

  bool operator==(const Ibm1Options&) const = default;
};

// Lexical translation probabilities t(target | source), NULL source included.
class TranslationTable {
 public:
  double prob(const std::string& target, const std::string& source) const;
  double null_prob(const std::string& target) const { return prob(target, std::string(kNullToken)); }

  // Sum over targets of t(target | source); 1 for every known source.
  double row_sum(const std::string& source) const;
  std::vector<std::string> sources() const;
  std::size_t num_entries() const;

  const Ibm1Options& options() const { return options_; }
  // Per-iteration corpus log-likelihood recorded during training.
  const std::vector<double>& log_likelihood() const { return log_likelihood_; }

  // TSV: source TAB target TAB probability, sorted.
  void save(const std::string& path) const;
  static TranslationTable load(const std::string& path);

  bool operator==(const TranslationTable&) const = default;

 private:
  friend TranslationTable ibm1_train(const std::vector<ParallelPair>&, const Ibm1Options&);

  std::unordered_map<std::string, std::unordered_map<std::string, double>> rows_;
  Ibm1Options options_;
  std::vector<double> log_likelihood_;
};

// log p(y | x) under Model 1 with the table's options.
double ibm1_log_likelihood(const std::vector<ParallelPair>& pairs, const TranslationTable& table);

TranslationTable ibm1_train(const std::vector<ParallelPair>& pairs, const Ibm1Options& options = {});

struct AlignmentLink {
  std::size_t source;  // index into x^m
  std::size_t target;  // index into y^m
  auto operator<=>(const AlignmentLink&) const = default;
};

// Each target position has at most one link; unaligned positions have none.
class Alignment {
 public:
  Alignment() = default;
  explicit Alignment(std::vector<AlignmentLink> links);

  const std::vector<AlignmentLink>& links() const { return links_; }
  bool empty() const { return links_.empty(); }
  // Formats as space-separated "i-j" pairs.
  std::string to_string() const;
  static Alignment parse(const std::string& line);
  void check_bounds(std::size_t source_len, std::size_t target_len) const;

  bool operator==(const Alignment&) const = default;

 private:
  std::vector<AlignmentLink> links_;
};

// Posterior p(a_j = i) for each target j; column source_len is NULL.
std::vector<std::vector<double>> alignment_posteriors(const TokenSequence& source, const TokenSequence& target,
                                                      const TranslationTable& table);

Alignment viterbi_align(const TokenSequence& source, const TokenSequence& target, const TranslationTable& table,
                        double null_threshold = 0.0);

std::vector<Alignment> load_alignments(const std::string& path);
void save_alignments(const std::string& path, const std::vector<Alignment>& alignments);

}  // namespace egnmt
