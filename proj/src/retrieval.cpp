#include "egnmt/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "egnmt/errors.hpp"
#include "egnmt/rng.hpp"
#include "json.hpp"

namespace egnmt {

ExampleDatabase ExampleDatabase::load_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read example database " + path);
  std::vector<ParallelPair> entries;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw InputError(path + ":" + std::to_string(number) + ": expected exactly one TAB separating source and target");
    entries.push_back({split_words(line.substr(0, tab)), split_words(line.substr(tab + 1))});
  }
  return ExampleDatabase(std::move(entries));
}

void ExampleDatabase::save_tsv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (const auto& e : entries_) out << join_words(e.source) << '\t' << join_words(e.target) << '\n';
}

InvertedIndex InvertedIndex::build(const ExampleDatabase& db) {
  if (db.empty()) throw InputError("cannot index an empty example database");
  InvertedIndex index;
  index.lengths_.reserve(db.size());
  for (std::size_t id = 0; id < db.size(); ++id) {
    const auto& source = db.at(id).source;
    index.lengths_.push_back(static_cast<std::uint32_t>(source.size()));
    std::map<std::string, std::uint32_t> tf;
    for (const auto& token : source) ++tf[token];
    for (const auto& [token, count] : tf) index.postings_[token].push_back({static_cast<std::uint32_t>(id), count});
  }
  return index;
}

std::size_t InvertedIndex::df(const std::string& token) const {
  auto it = postings_.find(token);
  return it == postings_.end() ? 0 : it->second.size();
}

const std::vector<Posting>& InvertedIndex::postings(const std::string& token) const {
  static const std::vector<Posting> none;
  auto it = postings_.find(token);
  return it == postings_.end() ? none : it->second;
}

double InvertedIndex::idf(const std::string& token) const {
  return std::log(static_cast<double>(num_entries() + 1) / static_cast<double>(df(token) + 1));
}

void InvertedIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write index " + path);
  out << "egnmt-index 1 " << lengths_.size() << '\n';
  for (std::size_t i = 0; i < lengths_.size(); ++i) out << (i ? " " : "") << lengths_[i];
  out << '\n';
  std::vector<const std::string*> tokens;
  for (const auto& [token, list] : postings_) tokens.push_back(&token);
  std::sort(tokens.begin(), tokens.end(), [](auto* a, auto* b) { return *a < *b; });
  for (const auto* token : tokens) {
    out << *token << '\t';
    const auto& list = postings_.at(*token);
    for (std::size_t i = 0; i < list.size(); ++i) out << (i ? " " : "") << list[i].id << ':' << list[i].tf;
    out << '\n';
  }
}

InvertedIndex InvertedIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read index " + path + " (produced by build-index)");
  std::string magic;
  int version = 0;
  std::size_t n = 0;
  in >> magic >> version >> n;
  if (magic != "egnmt-index" || version != 1) throw InputError(path + ": not an index file of version 1");
  InvertedIndex index;
  index.lengths_.resize(n);
  for (auto& len : index.lengths_) in >> len;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw InputError(path + ": malformed posting line");
    auto& list = index.postings_[line.substr(0, tab)];
    std::istringstream fields(line.substr(tab + 1));
    std::string item;
    while (fields >> item) {
      const auto colon = item.find(':');
      list.push_back({static_cast<std::uint32_t>(std::stoul(item.substr(0, colon))),
                      static_cast<std::uint32_t>(std::stoul(item.substr(colon + 1)))});
    }
  }
  return index;
}

std::vector<ScoredEntry> retrieve_scored(const TokenSequence& query, const InvertedIndex& index, std::size_t n,
                                         std::optional<std::size_t> exclude_id) {
  std::vector<ScoredEntry> out;
  if (query.empty() || n == 0) return out;
  const std::set<std::string> terms(query.begin(), query.end());
  std::unordered_map<std::size_t, double> scores;
  for (const auto& term : terms) {
    const double idf = index.idf(term);
    for (const auto& p : index.postings(term)) scores[p.id] += p.tf * idf;
  }
  out.reserve(scores.size());
  for (const auto& [id, raw] : scores) {
    if (exclude_id && *exclude_id == id) continue;
    const auto len = index.length(id);
    out.push_back({id, len ? raw / static_cast<double>(len) : 0.0});
  }
  std::sort(out.begin(), out.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (out.size() > n) out.resize(n);
  return out;
}

std::vector<std::size_t> retrieve_topn(const TokenSequence& query, const InvertedIndex& index, std::size_t n,
                                       std::optional<std::size_t> exclude_id) {
  std::vector<std::size_t> ids;
  for (const auto& e : retrieve_scored(query, index, n, exclude_id)) ids.push_back(e.id);
  return ids;
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto lead = static_cast<unsigned char>(s[i]);
    std::size_t len = lead >= 0xF0 ? 4 : lead >= 0xE0 ? 3 : lead >= 0xC0 ? 2 : 1;
    len = std::min(len, s.size() - i);
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

}  // namespace

const SentenceEmbedder::Vector& SentenceEmbedder::token_vector(const std::string& token) const {
  auto it = cache_.find(token);
  if (it != cache_.end()) return it->second;

  auto chars = utf8_chars(token);
  chars.insert(chars.begin(), "<");
  chars.push_back(">");
  std::vector<std::string> grams;
  for (std::size_t n = 3; n <= 6; ++n) {
    for (std::size_t i = 0; i + n <= chars.size(); ++i) {
      std::string g;
      for (std::size_t k = 0; k < n; ++k) g += chars[i + k];
      grams.push_back(std::move(g));
    }
  }
  if (grams.empty()) grams.push_back("<" + token + ">");

  Vector v{};
  for (const auto& g : grams) {
    const auto h = fnv1a(g);
    for (std::size_t k = 0; k < kDim; ++k) {
      const auto bits = splitmix64(h + k);
      v[k] += static_cast<double>(bits >> 11) * 0x1.0p-52 - 1.0;
    }
  }
  for (auto& x : v) x /= static_cast<double>(grams.size());
  return cache_.emplace(token, v).first->second;
}

SentenceEmbedder::Vector SentenceEmbedder::sentence_vector(const TokenSequence& sentence) const {
  Vector v{};
  double total = 0.0;
  for (const auto& token : sentence) {
    const double w = index_ ? index_->idf(token) + 1.0 : 1.0;
    const auto& tv = token_vector(token);
    for (std::size_t k = 0; k < kDim; ++k) v[k] += w * tv[k];
    total += w;
  }
  if (total > 0)
    for (auto& x : v) x /= total;
  return v;
}

double SentenceEmbedder::cosine(const Vector& a, const Vector& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < kDim; ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

MatchedExample rerank_cosine(const TokenSequence& query, const std::vector<std::size_t>& candidates,
                             const ExampleDatabase& db, const SentenceEmbedder& embedder) {
  if (candidates.empty()) throw ContractError("rerank_cosine needs at least one candidate");
  const auto qv = embedder.sentence_vector(query);
  std::size_t best = candidates.front();
  double best_cos = -2.0;
  for (auto id : candidates) {
    const double c = SentenceEmbedder::cosine(qv, embedder.sentence_vector(db.at(id).source));
    if (c > best_cos || (c == best_cos && id < best)) {
      best = id;
      best_cos = c;
    }
  }
  MatchedExample m;
  m.id = best;
  m.source = db.at(best).source;
  m.target = db.at(best).target;
  m.cosine = best_cos;
  m.fms = fms(query, m.source);
  return m;
}

std::size_t levenshtein(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diagonal = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t above = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diagonal + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diagonal = above;
    }
  }
  return row[b.size()];
}

double fms(const TokenSequence& x, const TokenSequence& xm) {
  const auto longest = std::max(x.size(), xm.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(x, xm)) / static_cast<double>(longest);
}

const std::string& fms_bucket_label(std::size_t index) {
  static const std::array<std::string, kNumFmsBuckets> labels{
      "[0.9,1.0)", "[0.8,0.9)", "[0.7,0.8)", "[0.6,0.7)", "[0.5,0.6)",
      "[0.4,0.5)", "[0.3,0.4)", "[0.2,0.3)", "(0.0,0.2)"};
  return labels.at(index);
}

std::size_t fms_bucket_index(double score) {
  if (!(score >= 0.0 && score <= 1.0)) throw InputError("FMS outside [0,1]: " + std::to_string(score));
  // Bucket bounds are decimal tenths; compare on a scaled value with a small
  // guard so that 0.9 (stored as 0.8999...) stays left-closed.
  const double tenths = score * 10.0 + 1e-9;
  if (tenths >= 9.0) return 0;
  if (tenths < 2.0) return 8;
  return static_cast<std::size_t>(9.0 - std::floor(tenths));
}

std::string fms_bucket(double score) { return fms_bucket_label(fms_bucket_index(score)); }

std::vector<RetrievalRecord> match_queries(const std::vector<TokenSequence>& queries, const ExampleDatabase& db,
                                           const InvertedIndex& index, const RetrievalOptions& options) {
  if (db.empty()) throw InputError("retrieval needs a non-empty example database");
  if (options.exclude_self && db.size() < 2) throw InputError("--exclude-self needs at least two database entries");
  SentenceEmbedder embedder(&index);
  std::vector<RetrievalRecord> out;
  out.reserve(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::optional<std::size_t> exclude;
    if (options.exclude_self) exclude = q;
    auto candidates = retrieve_topn(queries[q], index, options.topn, exclude);
    if (candidates.empty()) candidates.push_back(exclude && *exclude == 0 ? 1 : 0);
    const auto m = rerank_cosine(queries[q], candidates, db, embedder);
    out.push_back({q, m.id, m.fms, m.cosine});
  }
  return out;
}

std::string to_ndjson(const RetrievalRecord& r) {
  nlohmann::json j{{"query_id", r.query_id}, {"matched_id", r.matched_id}, {"fms", r.fms}, {"cosine", r.cosine}};
  return j.dump();
}

RetrievalRecord retrieval_record_from_json(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    return {j.at("query_id").get<std::size_t>(), j.at("matched_id").get<std::size_t>(), j.at("fms").get<double>(),
            j.at("cosine").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed retrieval record: ") + e.what());
  }
}

}  // namespace egnmt
