#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace egnmt {

using TokenSequence = std::vector<std::string>;

struct ParallelPair {
  TokenSequence source;
  TokenSequence target;
};

// The mask symbol written into masked sentences.
inline constexpr std::string_view kMaskToken = "⟨X⟩";
inline constexpr std::string_view kBpeContinuation = "@@";
inline constexpr std::string_view kEndOfWord = "</w>";

struct TokenizerOptions {
  bool lowercase = true;
};

// Splits on whitespace and detaches ASCII punctuation into single-character
// tokens. The mask symbol passes through untouched.
TokenSequence tokenize(std::string_view text, const TokenizerOptions& options = {});
// Joins tokens with single spaces, re-attaching common punctuation.
std::string detokenize(const TokenSequence& tokens);
// Plain whitespace split; used for pre-tokenized files.
TokenSequence split_words(std::string_view text);
std::string join_words(const TokenSequence& tokens);

class MergeTable {
 public:
  using Pair = std::pair<std::string, std::string>;

  MergeTable() = default;
  explicit MergeTable(std::vector<Pair> merges);

  const std::vector<Pair>& merges() const { return merges_; }
  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }
  // Rank of a pair, or -1 when it is not a merge rule.
  long rank(const std::string& left, const std::string& right) const;

  void save(const std::string& path) const;
  static MergeTable load(const std::string& path);

 private:
  std::vector<Pair> merges_;
  std::unordered_map<std::string, long> ranks_;
};

MergeTable bpe_train(const std::vector<TokenSequence>& corpus, std::size_t num_merges);

// Segments each word; every unit except a word's last carries the "@@" suffix.
TokenSequence bpe_apply(const TokenSequence& words, const MergeTable& merges);
// Inverse of bpe_apply.
TokenSequence bpe_join(const TokenSequence& units);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kBos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kMask = 4;
  static constexpr std::size_t kReserved = 5;

  Vocabulary();

  static Vocabulary build(const std::vector<TokenSequence>& corpus, std::size_t min_count = 1);

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(const std::string& token) const;
  const std::string& token(std::int32_t id) const;
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }

  std::vector<std::int32_t> encode(const TokenSequence& tokens) const;
  TokenSequence decode(const std::vector<std::int32_t>& ids, bool strip_special = true) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

bool is_reserved_token(const std::string& token);

}  // namespace egnmt
