#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "egnmt/text.hpp"

namespace egnmt {

// Translation memory: parallel pairs addressed by dense ids 0..N-1.
class ExampleDatabase {
 public:
  ExampleDatabase() = default;
  explicit ExampleDatabase(std::vector<ParallelPair> entries) : entries_(std::move(entries)) {}

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const ParallelPair& at(std::size_t id) const { return entries_.at(id); }
  const std::vector<ParallelPair>& entries() const { return entries_; }

  // UTF-8, one pair per line, source TAB target, tokens separated by spaces.
  static ExampleDatabase load_tsv(const std::string& path);
  void save_tsv(const std::string& path) const;

 private:
  std::vector<ParallelPair> entries_;
};

struct Posting {
  std::uint32_t id;
  std::uint32_t tf;
  bool operator==(const Posting&) const = default;
};

class InvertedIndex {
 public:
  static InvertedIndex build(const ExampleDatabase& db);

  std::size_t num_entries() const { return lengths_.size(); }
  std::size_t length(std::size_t id) const { return lengths_.at(id); }
  std::size_t df(const std::string& token) const;
  const std::vector<Posting>& postings(const std::string& token) const;
  double idf(const std::string& token) const;

  void save(const std::string& path) const;
  static InvertedIndex load(const std::string& path);

  bool operator==(const InvertedIndex&) const = default;

 private:
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::vector<std::uint32_t> lengths_;
};

struct ScoredEntry {
  std::size_t id;
  double score;
};

// Top-n entries by length-normalized TF-IDF; ties go to the lower id.
std::vector<ScoredEntry> retrieve_scored(const TokenSequence& query, const InvertedIndex& index, std::size_t n = 10,
                                         std::optional<std::size_t> exclude_id = std::nullopt);
std::vector<std::size_t> retrieve_topn(const TokenSequence& query, const InvertedIndex& index, std::size_t n = 10,
                                       std::optional<std::size_t> exclude_id = std::nullopt);

struct MatchedExample {
  std::size_t id = 0;
  TokenSequence source;  // x^m
  TokenSequence target;  // y^m
  double fms = 0.0;
  double cosine = 0.0;
};

// Hashed character n-gram sentence embeddings (n = 3..6, 128 dimensions).
class SentenceEmbedder {
 public:
  static constexpr std::size_t kDim = 128;
  using Vector = std::array<double, kDim>;

  explicit SentenceEmbedder(const InvertedIndex* index = nullptr) : index_(index) {}

  const Vector& token_vector(const std::string& token) const;
  // idf-weighted mean of token vectors.
  Vector sentence_vector(const TokenSequence& sentence) const;
  static double cosine(const Vector& a, const Vector& b);

 private:
  const InvertedIndex* index_;
  mutable std::unordered_map<std::string, Vector> cache_;
};

MatchedExample rerank_cosine(const TokenSequence& query, const std::vector<std::size_t>& candidates,
                             const ExampleDatabase& db, const SentenceEmbedder& embedder);

std::size_t levenshtein(const TokenSequence& a, const TokenSequence& b);
// 1 - Levenshtein(x, x^m) / max(|x|, |x^m|); 1 when both are empty.
double fms(const TokenSequence& x, const TokenSequence& xm);

// Table rows from [0.9,1.0) down to (0.0,0.2). Bucket 0 is the highest.
inline constexpr std::size_t kNumFmsBuckets = 9;
std::size_t fms_bucket_index(double score);
std::string fms_bucket(double score);
const std::string& fms_bucket_label(std::size_t index);

// Retrieval stage record: {query id, matched id, fms, cosine}.
struct RetrievalRecord {
  std::size_t query_id = 0;
  std::size_t matched_id = 0;
  double fms = 0.0;
  double cosine = 0.0;
};

struct RetrievalOptions {
  std::size_t topn = 10;
  bool exclude_self = false;
};

// Runs retrieve-then-rerank for each query. With exclude_self, query i never
// matches database entry i. Queries with no lexical overlap fall back to the
// lowest admissible id.
std::vector<RetrievalRecord> match_queries(const std::vector<TokenSequence>& queries, const ExampleDatabase& db,
                                           const InvertedIndex& index, const RetrievalOptions& options);

std::string to_ndjson(const RetrievalRecord& record);
RetrievalRecord retrieval_record_from_json(std::string_view line);

}  // namespace egnmt
