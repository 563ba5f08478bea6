#include "egnmt/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "egnmt/errors.hpp"

namespace egnmt {

namespace {

// Prior over source positions for target position j; entry n is NULL.
std::vector<double> position_prior(std::size_t n, std::size_t m, std::size_t j, const Ibm1Options& opt) {
  std::vector<double> prior(n + 1, 0.0);
  if (!opt.diagonal_prior) {
    const double share = 1.0 / static_cast<double>(n + (opt.null_word ? 1 : 0));
    for (std::size_t i = 0; i < n; ++i) prior[i] = share;
    if (opt.null_word) prior[n] = share;
    return prior;
  }
  const double word_mass = opt.null_word ? 1.0 - opt.null_probability : 1.0;
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double h = std::abs(static_cast<double>(i + 1) / static_cast<double>(n) -
                              static_cast<double>(j + 1) / static_cast<double>(m));
    prior[i] = std::exp(-opt.diagonal_tension * h);
    z += prior[i];
  }
  for (std::size_t i = 0; i < n; ++i) prior[i] *= word_mass / z;
  if (opt.null_word) prior[n] = opt.null_probability;
  return prior;
}

std::vector<ParallelPair> canonical_order(const std::vector<ParallelPair>& pairs) {
  std::vector<ParallelPair> sorted = pairs;
  std::sort(sorted.begin(), sorted.end(), [](const ParallelPair& a, const ParallelPair& b) {
    return a.source != b.source ? a.source < b.source : a.target < b.target;
  });
  return sorted;
}

}  // namespace

double TranslationTable::prob(const std::string& target, const std::string& source) const {
  auto row = rows_.find(source);
  if (row == rows_.end()) return 0.0;
  auto it = row->second.find(target);
  return it == row->second.end() ? 0.0 : it->second;
}

double TranslationTable::row_sum(const std::string& source) const {
  auto row = rows_.find(source);
  if (row == rows_.end()) return 0.0;
  std::map<std::string, double> ordered(row->second.begin(), row->second.end());
  double total = 0.0;
  for (const auto& [t, p] : ordered) total += p;
  return total;
}

std::vector<std::string> TranslationTable::sources() const {
  std::vector<std::string> out;
  for (const auto& [s, row] : rows_) out.push_back(s);
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t TranslationTable::num_entries() const {
  std::size_t n = 0;
  for (const auto& [s, row] : rows_) n += row.size();
  return n;
}

void TranslationTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write translation table " + path);
  out.precision(17);
  out << "#egnmt-ttable 1 null=" << options_.null_word << " diagonal=" << options_.diagonal_prior
      << " tension=" << options_.diagonal_tension << " p0=" << options_.null_probability << '\n';
  for (const auto& source : sources()) {
    std::map<std::string, double> ordered(rows_.at(source).begin(), rows_.at(source).end());
    for (const auto& [target, p] : ordered) out << source << '\t' << target << '\t' << p << '\n';
  }
}

TranslationTable TranslationTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read translation table " + path + " (produced by align-train)");
  TranslationTable table;
  std::string line;
  if (!std::getline(in, line) || line.rfind("#egnmt-ttable 1", 0) != 0)
    throw InputError(path + ": missing translation table header");
  {
    std::istringstream header(line.substr(16));
    std::string field;
    while (header >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) continue;
      const auto key = field.substr(0, eq);
      const auto value = field.substr(eq + 1);
      if (key == "null") table.options_.null_word = value == "1";
      else if (key == "diagonal") table.options_.diagonal_prior = value == "1";
      else if (key == "tension") table.options_.diagonal_tension = std::stod(value);
      else if (key == "p0") table.options_.null_probability = std::stod(value);
    }
  }
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = line.find('\t', a + 1);
    if (a == std::string::npos || b == std::string::npos)
      throw InputError(path + ":" + std::to_string(number) + ": expected source TAB target TAB prob");
    table.rows_[line.substr(0, a)][line.substr(a + 1, b - a - 1)] = std::stod(line.substr(b + 1));
  }
  return table;
}

double ibm1_log_likelihood(const std::vector<ParallelPair>& pairs, const TranslationTable& table) {
  const auto& opt = table.options();
  const std::string null(kNullToken);
  double ll = 0.0;
  for (const auto& pair : canonical_order(pairs)) {
    const auto n = pair.source.size();
    const auto m = pair.target.size();
    for (std::size_t j = 0; j < m; ++j) {
      const auto prior = position_prior(n, m, j, opt);
      double p = 0.0;
      for (std::size_t i = 0; i < n; ++i) p += prior[i] * table.prob(pair.target[j], pair.source[i]);
      if (opt.null_word) p += prior[n] * table.prob(pair.target[j], null);
      ll += std::log(std::max(p, 1e-300));
    }
  }
  return ll;
}

TranslationTable ibm1_train(const std::vector<ParallelPair>& input, const Ibm1Options& options) {
  if (input.empty()) throw InputError("ibm1_train: empty corpus");
  if (options.iterations < 1) throw InputError("ibm1_train: iterations must be >= 1");
  const auto pairs = canonical_order(input);
  const std::string null(kNullToken);

  TranslationTable table;
  table.options_ = options;

  // Uniform start over co-occurring pairs.
  std::map<std::string, std::map<std::string, double>> cooc;
  for (const auto& pair : pairs) {
    for (const auto& t : pair.target) {
      for (const auto& s : pair.source) cooc[s][t] = 1.0;
      if (options.null_word) cooc[null][t] = 1.0;
    }
  }
  for (auto& [s, row] : cooc) {
    const double u = 1.0 / static_cast<double>(row.size());
    for (auto& [t, p] : row) table.rows_[s][t] = u;
  }

  for (std::size_t iter = 0; iter < options.iterations; ++iter) {
    std::map<std::string, std::map<std::string, double>> counts;
    double ll = 0.0;
    for (const auto& pair : pairs) {
      const auto n = pair.source.size();
      const auto m = pair.target.size();
      std::vector<double> score(n + 1);
      for (std::size_t j = 0; j < m; ++j) {
        const auto& y = pair.target[j];
        const auto prior = position_prior(n, m, j, options);
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i) z += (score[i] = prior[i] * table.prob(y, pair.source[i]));
        score[n] = options.null_word ? prior[n] * table.prob(y, null) : 0.0;
        z += score[n];
        ll += std::log(std::max(z, 1e-300));
        if (z <= 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) counts[pair.source[i]][y] += score[i] / z;
        if (options.null_word) counts[null][y] += score[n] / z;
      }
    }
    table.log_likelihood_.push_back(ll);
    for (auto& [s, row] : counts) {
      double total = 0.0;
      for (const auto& [t, c] : row) total += c;
      auto& out = table.rows_[s];
      for (auto& [t, p] : out) p = 0.0;
      for (const auto& [t, c] : row) out[t] = c / total;
    }
  }
  table.log_likelihood_.push_back(ibm1_log_likelihood(pairs, table));
  return table;
}

Alignment::Alignment(std::vector<AlignmentLink> links) : links_(std::move(links)) {
  std::sort(links_.begin(), links_.end(), [](const auto& a, const auto& b) {
    return a.target != b.target ? a.target < b.target : a.source < b.source;
  });
  for (std::size_t k = 1; k < links_.size(); ++k)
    if (links_[k].target == links_[k - 1].target)
      throw InputError("alignment links target position " + std::to_string(links_[k].target) + " twice");
}

std::string Alignment::to_string() const {
  std::string out;
  for (std::size_t k = 0; k < links_.size(); ++k) {
    if (k) out.push_back(' ');
    out += std::to_string(links_[k].source) + "-" + std::to_string(links_[k].target);
  }
  return out;
}

Alignment Alignment::parse(const std::string& line) {
  std::vector<AlignmentLink> links;
  for (const auto& item : split_words(line)) {
    const auto dash = item.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 == item.size())
      throw InputError("malformed alignment link '" + item + "'");
    try {
      links.push_back({std::stoul(item.substr(0, dash)), std::stoul(item.substr(dash + 1))});
    } catch (const std::exception&) {
      throw InputError("malformed alignment link '" + item + "'");
    }
  }
  return Alignment(std::move(links));
}

void Alignment::check_bounds(std::size_t source_len, std::size_t target_len) const {
  for (const auto& l : links_)
    if (l.source >= source_len || l.target >= target_len)
      throw InputError("alignment link " + std::to_string(l.source) + "-" + std::to_string(l.target) +
                       " outside sentence lengths " + std::to_string(source_len) + "/" + std::to_string(target_len));
}

std::vector<std::vector<double>> alignment_posteriors(const TokenSequence& source, const TokenSequence& target,
                                                      const TranslationTable& table) {
  const auto& opt = table.options();
  const auto n = source.size();
  const auto m = target.size();
  const std::string null(kNullToken);
  std::vector<std::vector<double>> post(m, std::vector<double>(n + 1, 0.0));
  for (std::size_t j = 0; j < m; ++j) {
    const auto prior = position_prior(n, m, j, opt);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += (post[j][i] = prior[i] * table.prob(target[j], source[i]));
    if (opt.null_word) z += (post[j][n] = prior[n] * table.prob(target[j], null));
    if (z > 0)
      for (auto& p : post[j]) p /= z;
  }
  return post;
}

Alignment viterbi_align(const TokenSequence& source, const TokenSequence& target, const TranslationTable& table,
                        double null_threshold) {
  const auto& opt = table.options();
  const auto n = source.size();
  const auto m = target.size();
  const std::string null(kNullToken);
  std::vector<AlignmentLink> links;
  for (std::size_t j = 0; j < m; ++j) {
    const auto prior = position_prior(n, m, j, opt);
    std::size_t best = n;
    double best_score = 0.0;
    double best_prob = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = table.prob(target[j], source[i]);
      const double s = opt.diagonal_prior ? prior[i] * p : p;
      if (s > best_score) {
        best_score = s;
        best_prob = p;
        best = i;
      }
    }
    if (best == n || best_prob <= 0.0 || best_prob < null_threshold) continue;
    if (opt.null_word) {
      const double p0 = table.prob(target[j], null);
      const double s0 = opt.diagonal_prior ? prior[n] * p0 : p0;
      if (s0 > best_score) continue;
    }
    links.push_back({best, j});
  }
  return Alignment(std::move(links));
}

std::vector<Alignment> load_alignments(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read alignments " + path + " (produced by align)");
  std::vector<Alignment> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(Alignment::parse(line));
  }
  return out;
}

void save_alignments(const std::string& path, const std::vector<Alignment>& alignments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write alignments " + path);
  for (const auto& a : alignments) out << a.to_string() << '\n';
}

}  // namespace egnmt
