#include "egnmt/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>

#include "egnmt/errors.hpp"

namespace egnmt {

namespace {

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

// Splits a word into UTF-8 code points.
std::vector<std::string> code_points(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < word.size();) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.push_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::string pair_key(const std::string& left, const std::string& right) { return left + ' ' + right; }

std::vector<std::string> initial_symbols(const std::string& word) {
  auto symbols = code_points(word);
  symbols.back() += kEndOfWord;
  return symbols;
}

void merge_pair(std::vector<std::string>& symbols, const std::string& left, const std::string& right) {
  std::vector<std::string> merged;
  merged.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      merged.push_back(left + right);
      ++i;
    } else {
      merged.push_back(symbols[i]);
    }
  }
  symbols = std::move(merged);
}

}  // namespace

TokenSequence tokenize(std::string_view text, const TokenizerOptions& options) {
  TokenSequence tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    if (text.substr(i, kMaskToken.size()) == kMaskToken) {
      flush();
      tokens.emplace_back(kMaskToken);
      i += kMaskToken.size();
      continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(options.lowercase && c < 128 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    }
    ++i;
  }
  flush();
  return tokens;
}

std::string detokenize(const TokenSequence& tokens) {
  static const std::string no_space_before = ",.;:!?)]}%";
  static const std::string no_space_after = "([{";
  std::string out;
  bool glue_next = true;
  for (const auto& token : tokens) {
    const bool closing = token.size() == 1 && no_space_before.find(token[0]) != std::string::npos;
    if (!glue_next && !closing) out.push_back(' ');
    out += token;
    glue_next = token.size() == 1 && no_space_after.find(token[0]) != std::string::npos;
  }
  return out;
}

TokenSequence split_words(std::string_view text) {
  TokenSequence out;
  std::string current;
  for (char ch : text) {
    if (is_space(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string join_words(const TokenSequence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

MergeTable::MergeTable(std::vector<Pair> merges) : merges_(std::move(merges)) {
  for (std::size_t i = 0; i < merges_.size(); ++i) {
    auto [it, fresh] = ranks_.emplace(pair_key(merges_[i].first, merges_[i].second), static_cast<long>(i));
    if (!fresh) throw InputError("duplicate merge rule: " + merges_[i].first + " " + merges_[i].second);
  }
}

long MergeTable::rank(const std::string& left, const std::string& right) const {
  auto it = ranks_.find(pair_key(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

void MergeTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write merge table " + path);
  for (const auto& [left, right] : merges_) out << left << ' ' << right << '\n';
}

MergeTable MergeTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read merge table " + path + " (produced by bpe-train)");
  std::vector<Pair> merges;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    auto parts = split_words(line);
    if (parts.empty()) continue;
    if (parts.size() != 2) throw InputError(path + ":" + std::to_string(number) + ": expected two merge units");
    merges.emplace_back(parts[0], parts[1]);
  }
  return MergeTable(std::move(merges));
}

MergeTable bpe_train(const std::vector<TokenSequence>& corpus, std::size_t num_merges) {
  if (corpus.empty()) throw InputError("bpe_train: empty corpus");
  std::map<std::string, std::size_t> word_counts;
  for (const auto& sentence : corpus)
    for (const auto& word : sentence)
      if (!is_reserved_token(word)) ++word_counts[word];

  std::vector<std::vector<std::string>> words;
  std::vector<std::size_t> counts;
  for (const auto& [word, count] : word_counts) {
    words.push_back(initial_symbols(word));
    counts.push_back(count);
  }

  std::vector<MergeTable::Pair> merges;
  while (merges.size() < num_merges) {
    std::map<MergeTable::Pair, std::size_t> pair_counts;
    for (std::size_t w = 0; w < words.size(); ++w)
      for (std::size_t i = 0; i + 1 < words[w].size(); ++i) pair_counts[{words[w][i], words[w][i + 1]}] += counts[w];
    if (pair_counts.empty()) break;
    // Strict comparison keeps the lexicographically smallest pair among ties.
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
      if (it->second > best->second) best = it;
    const auto chosen = best->first;
    merges.push_back(chosen);
    for (auto& symbols : words) merge_pair(symbols, chosen.first, chosen.second);
  }
  return MergeTable(std::move(merges));
}

TokenSequence bpe_apply(const TokenSequence& words, const MergeTable& merges) {
  TokenSequence units;
  for (const auto& word : words) {
    if (is_reserved_token(word)) {
      units.push_back(word);
      continue;
    }
    auto symbols = initial_symbols(word);
    while (symbols.size() > 1) {
      long best_rank = std::numeric_limits<long>::max();
      std::size_t best = symbols.size();
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        const long r = merges.rank(symbols[i], symbols[i + 1]);
        if (r >= 0 && r < best_rank) {
          best_rank = r;
          best = i;
        }
      }
      if (best == symbols.size()) break;
      const auto left = symbols[best];
      const auto right = symbols[best + 1];
      merge_pair(symbols, left, right);
    }
    auto& last = symbols.back();
    last.erase(last.size() - kEndOfWord.size());
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) units.push_back(symbols[i] + std::string(kBpeContinuation));
    units.push_back(last);
  }
  return units;
}

TokenSequence bpe_join(const TokenSequence& units) {
  TokenSequence words;
  std::string current;
  bool open = false;
  for (const auto& unit : units) {
    const bool continues = unit.size() >= kBpeContinuation.size() &&
                           unit.compare(unit.size() - kBpeContinuation.size(), kBpeContinuation.size(),
                                        kBpeContinuation) == 0;
    if (continues) {
      current += unit.substr(0, unit.size() - kBpeContinuation.size());
      open = true;
    } else {
      current += unit;
      words.push_back(std::move(current));
      current.clear();
      open = false;
    }
  }
  if (open && !current.empty()) words.push_back(std::move(current));
  return words;
}

namespace {
const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens{"<pad>", "<s>", "</s>", "<unk>", std::string(kMaskToken)};
  return tokens;
}
}  // namespace

bool is_reserved_token(const std::string& token) {
  const auto& r = reserved_tokens();
  return std::find(r.begin(), r.end(), token) != r.end();
}

Vocabulary::Vocabulary() {
  for (const auto& token : reserved_tokens()) add(token);
}

void Vocabulary::add(const std::string& token) {
  if (ids_.count(token)) throw InputError("duplicate vocabulary entry: " + token);
  ids_.emplace(token, static_cast<std::int32_t>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<TokenSequence>& corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& token : sentence)
      if (!is_reserved_token(token)) ++counts[token];
  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(), counts.end());
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [token, count] : entries)
    if (count >= min_count) vocab.add(token);
  return vocab;
}

std::int32_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw InputError("vocabulary id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode(const TokenSequence& tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

TokenSequence Vocabulary::decode(const std::vector<std::int32_t>& ids, bool strip_special) const {
  TokenSequence out;
  for (auto id : ids) {
    if (strip_special && (id == kPad || id == kBos || id == kEos)) continue;
    out.push_back(token(id));
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read vocabulary " + path + " (produced by train)");
  Vocabulary vocab;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    if (number < kReserved) {
      if (line != vocab.tokens_[number]) throw InputError(path + ": reserved entry mismatch at line " + std::to_string(number + 1));
    } else {
      vocab.add(line);
    }
    ++number;
  }
  if (number < kReserved) throw InputError(path + ": truncated vocabulary");
  return vocab;
}

}  // namespace egnmt
