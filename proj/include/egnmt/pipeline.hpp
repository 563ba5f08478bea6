#pragma once

#include <optional>
#include <string>
#include <vector>

#include "egnmt/alignment.hpp"
#include "egnmt/masking.hpp"
#include "egnmt/retrieval.hpp"
#include "egnmt/training.hpp"

namespace egnmt {

inline constexpr int kManifestVersion = 1;

// One sentence pair with its matched example and masked forms. Token fields
// are space-joined word-level sequences.
struct ManifestRecord {
  std::size_t id = 0;
  std::string x, y;
  std::string xm, ym;
  std::string mxm, mym, my;
  double fms = 0.0;
  double cosine = 0.0;
  std::size_t matched_id = 0;

  nlohmann::json to_json() const;
  static ManifestRecord from_json(const nlohmann::json& j);
  bool operator==(const ManifestRecord&) const = default;
};

std::string to_ndjson(const ManifestRecord& record);
std::vector<ManifestRecord> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

// Alignments for database entries, indexed by entry id.
std::vector<Alignment> align_database(const ExampleDatabase& db, const TranslationTable& table,
                                      double null_threshold = 0.0);

// Joins queries (with optional references) to their retrieved examples and
// applies the three masking functions.
std::vector<ManifestRecord> build_manifest(const std::vector<ParallelPair>& corpus, const ExampleDatabase& db,
                                           const std::vector<RetrievalRecord>& retrieval,
                                           const std::vector<Alignment>& alignments,
                                           ReferenceMaskMode mode = ReferenceMaskMode::kLcs);

struct ManifestOptions {
  RetrievalOptions retrieval;
  Ibm1Options alignment;
  double null_threshold = 0.0;
  ReferenceMaskMode reference_mode = ReferenceMaskMode::kLcs;
};

// Retrieval, alignment training on the database, Viterbi alignment and
// masking in one call.
std::vector<ManifestRecord> prepare_manifest(const std::vector<ParallelPair>& corpus, const ExampleDatabase& db,
                                             const ManifestOptions& options);

// Word sequences to model ids and back. Without merges the units are words.
class SubwordCodec {
 public:
  SubwordCodec() = default;
  SubwordCodec(std::optional<MergeTable> source_merges, std::optional<MergeTable> target_merges, Vocabulary source,
               Vocabulary target)
      : source_merges_(std::move(source_merges)),
        target_merges_(std::move(target_merges)),
        source_vocab_(std::move(source)),
        target_vocab_(std::move(target)) {}

  // Builds vocabularies from the manifest's x and (y, y^m, M(y^m), M(y)).
  static SubwordCodec build(const std::vector<ManifestRecord>& records, std::optional<MergeTable> source_merges,
                            std::optional<MergeTable> target_merges);

  TokenSequence source_units(const TokenSequence& words) const;
  TokenSequence target_units(const TokenSequence& words) const;
  std::vector<std::int32_t> encode_source(const TokenSequence& words) const;
  std::vector<std::int32_t> encode_target(const TokenSequence& words) const;
  TokenSequence decode_target(const std::vector<std::int32_t>& ids) const;

  const Vocabulary& source_vocab() const { return source_vocab_; }
  const Vocabulary& target_vocab() const { return target_vocab_; }

  // Files: src.vocab, tgt.vocab and, when present, src.bpe / tgt.bpe.
  void save(const std::string& dir) const;
  static SubwordCodec load(const std::string& dir);

 private:
  std::optional<MergeTable> source_merges_, target_merges_;
  Vocabulary source_vocab_, target_vocab_;
};

// Model ids for a record: x, y^m and M(y^m) with EOS, y and M(y) bare.
EncodedPair encode_record(const ManifestRecord& record, const SubwordCodec& codec);

// Encodes records and drops those longer than max_len on any side.
std::vector<EncodedPair> encode_training_data(const std::vector<ManifestRecord>& records, const SubwordCodec& codec,
                                              std::size_t max_len, std::size_t* dropped = nullptr);

// Single-sentence model inputs for decoding; never reads y or M(y).
ModelInputs decoding_inputs(const ManifestRecord& record, const SubwordCodec& codec, const ModelConfig& config);

}  // namespace egnmt
