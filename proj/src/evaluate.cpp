#include "egnmt/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "egnmt/errors.hpp"
#include "egnmt/retrieval.hpp"

namespace egnmt {

namespace {

TokenSequence lower(const TokenSequence& tokens) {
  TokenSequence out = tokens;
  for (auto& t : out)
    for (auto& c : t)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

std::map<TokenSequence, std::size_t> ngram_counts(const TokenSequence& tokens, std::size_t n) {
  std::map<TokenSequence, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[TokenSequence(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                           tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return counts;
}

std::map<std::string, std::size_t> word_counts(const TokenSequence& tokens, const std::set<std::string>& stopwords) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : lower(tokens))
    if (!stopwords.count(t)) ++counts[t];
  return counts;
}

// Multiset (or set) intersection of two count maps.
std::map<std::string, std::size_t> intersect(const std::map<std::string, std::size_t>& a,
                                             const std::map<std::string, std::size_t>& b, bool token_level) {
  std::map<std::string, std::size_t> out;
  for (const auto& [w, c] : a) {
    auto it = b.find(w);
    if (it != b.end()) out[w] = token_level ? std::min(c, it->second) : 1;
  }
  return out;
}

std::size_t cardinality(const std::map<std::string, std::size_t>& m) {
  std::size_t n = 0;
  for (const auto& [w, c] : m) n += c;
  return n;
}

std::string format_score(const std::optional<double>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hypothesis_length += other.hypothesis_length;
  reference_length += other.reference_length;
  return *this;
}

double BleuStats::score() const {
  if (hypothesis_length == 0) return 0.0;
  double log_precision = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_precision += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double c = static_cast<double>(hypothesis_length);
  const double r = static_cast<double>(reference_length);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return 100.0 * bp * std::exp(log_precision / 4.0);
}

BleuStats bleu_stats(const TokenSequence& hypothesis, const TokenSequence& reference) {
  const auto hyp = lower(hypothesis);
  const auto ref = lower(reference);
  BleuStats s;
  s.hypothesis_length = hyp.size();
  s.reference_length = ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    for (const auto& [gram, count] : h) {
      auto it = r.find(gram);
      if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
    }
    s.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return s;
}

double bleu(const std::vector<TokenSequence>& hypotheses, const std::vector<TokenSequence>& references) {
  if (hypotheses.size() != references.size())
    throw InputError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                     std::to_string(references.size()) + " references");
  if (hypotheses.empty()) throw InputError("bleu: empty corpus");
  BleuStats total;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += bleu_stats(hypotheses[i], references[i]);
  return total.score();
}

const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> words = {
      "a",    "an",   "the",  "and",  "or",   "but",   "if",    "of",   "to",    "in",
      "on",   "at",   "by",   "for",  "with", "from",  "as",    "into", "about", "than",
      "is",   "are",  "was",  "were", "be",   "been",  "being", "am",   "do",    "does",
      "did",  "have", "has",  "had",  "it",   "its",   "this",  "that", "these", "those",
      "he",   "she",  "they", "we",   "you",  "i",     "not",   "no",   "so",    "there"};
  return words;
}

std::set<std::string> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read stop-word list " + path);
  std::set<std::string> out;
  std::string word;
  while (in >> word) out.insert(lower({word})[0]);
  return out;
}

ReusableF1 reusable_f1(const std::vector<TokenSequence>& outputs, const std::vector<TokenSequence>& references,
                       const std::vector<TokenSequence>& examples, const std::set<std::string>& stopwords,
                       bool token_level) {
  if (outputs.size() != references.size() || outputs.size() != examples.size())
    throw InputError("reusable_f1: corpora differ in size");
  ReusableF1 f;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto e = word_counts(examples[i], stopwords);
    const auto r = intersect(e, word_counts(references[i], stopwords), token_level);
    const auto s = intersect(e, word_counts(outputs[i], stopwords), token_level);
    f.reusable += cardinality(r);
    f.generated += cardinality(s);
    f.reused += cardinality(intersect(r, s, true));
  }
  f.precision = f.generated ? static_cast<double>(f.reused) / static_cast<double>(f.generated) : 0.0;
  f.recall = f.reusable ? static_cast<double>(f.reused) / static_cast<double>(f.reusable) : 1.0;
  f.f1 = f.precision + f.recall > 0 ? 2 * f.precision * f.recall / (f.precision + f.recall) : 0.0;
  return f;
}

EvalReport bucket_report(const std::vector<double>& fms, const std::vector<TokenSequence>& references,
                         const std::vector<TokenSequence>& examples, const std::vector<SystemOutputs>& systems,
                         const std::set<std::string>& stopwords, bool token_level) {
  const std::size_t n = references.size();
  if (fms.size() != n || examples.size() != n) throw InputError("bucket_report: corpora differ in size");
  for (const auto& s : systems)
    if (s.outputs.size() != n) throw InputError("bucket_report: system " + s.name + " has the wrong number of outputs");

  EvalReport report;
  for (const auto& s : systems) report.systems.push_back(s.name);
  std::vector<std::vector<std::size_t>> members(kNumFmsBuckets);
  for (std::size_t i = 0; i < n; ++i) members[fms_bucket_index(fms[i])].push_back(i);

  auto make_row = [&](const std::string& label, const std::vector<std::size_t>& idx) {
    BucketRow row;
    row.bucket = label;
    row.count = idx.size();
    for (const auto& s : systems) {
      if (idx.empty()) {
        row.bleu.push_back(std::nullopt);
        continue;
      }
      BleuStats st;
      for (auto i : idx) st += bleu_stats(s.outputs[i], references[i]);
      row.bleu.push_back(st.score());
    }
    if (!idx.empty()) {
      BleuStats st;
      for (auto i : idx) st += bleu_stats(examples[i], references[i]);
      row.met = st.score();
    }
    return row;
  };
  for (std::size_t b = 0; b < kNumFmsBuckets; ++b) report.rows.push_back(make_row(fms_bucket_label(b), members[b]));
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  report.overall = make_row("(0.0,1.0)", all);
  for (const auto& s : systems) report.f1.push_back(reusable_f1(s.outputs, references, examples, stopwords, token_level));
  return report;
}

std::string EvalReport::to_text() const {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head{"FMS", "Count"};
  for (const auto& s : systems) head.push_back(s);
  head.push_back("MET");
  cells.push_back(head);
  auto add = [&](const BucketRow& r) {
    std::vector<std::string> line{r.bucket, std::to_string(r.count)};
    for (const auto& b : r.bleu) line.push_back(format_score(b));
    line.push_back(format_score(r.met));
    cells.push_back(line);
  };
  for (const auto& r : rows) add(r);
  add(overall);

  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      const auto pad = std::string(width[c] - line[c].size(), ' ');
      if (c == 0) out << line[c] << pad;
      else out << "  " << pad << line[c];
    }
    out << '\n';
  }
  if (!systems.empty()) {
    out << '\n';
    for (std::size_t s = 0; s < systems.size(); ++s) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "reusable-word F1 %s: p=%.4f r=%.4f f1=%.4f\n", systems[s].c_str(),
                    f1[s].precision, f1[s].recall, f1[s].f1);
      out << buf;
    }
  }
  return out.str();
}

nlohmann::json EvalReport::to_json() const {
  auto row_json = [&](const BucketRow& r) {
    nlohmann::json bleu_json = nlohmann::json::object();
    for (std::size_t s = 0; s < systems.size(); ++s) bleu_json[systems[s]] = optional_json(r.bleu[s]);
    return nlohmann::json{{"bucket", r.bucket}, {"count", r.count}, {"bleu", bleu_json}, {"met", optional_json(r.met)}};
  };
  nlohmann::json j;
  j["systems"] = systems;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(row_json(r));
  j["overall"] = row_json(overall);
  j["reusable_f1"] = nlohmann::json::object();
  for (std::size_t s = 0; s < systems.size(); ++s)
    j["reusable_f1"][systems[s]] = {{"precision", f1[s].precision}, {"recall", f1[s].recall}, {"f1", f1[s].f1},
                                    {"reused", f1[s].reused},       {"generated", f1[s].generated},
                                    {"reusable", f1[s].reusable}};
  return j;
}

}  // namespace egnmt
