#include "egnmt/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "egnmt/errors.hpp"
#include "egnmt/text.hpp"
#include "json.hpp"

namespace egnmt {

double normalized_score(double log_prob, std::size_t length, double alpha) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(length, 1)), alpha);
}

std::vector<std::int32_t> DecodeResult::output() const {
  auto out = best.tokens;
  if (best.finished && !out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

namespace {

void require_single(const ModelInputs& inputs) {
  if (inputs.source.batch != 1) throw ContractError("decoding expects a single sentence");
}

std::size_t output_budget(const ModelConfig& config, const ModelInputs& inputs, const DecodeOptions& options) {
  const std::size_t budget = options.max_output ? options.max_output : 2 * inputs.source.lengths[0] + 10;
  return std::min(budget, config.max_len);
}

// Log-softmax of the last position of every prefix row, in double.
template <typename T>
std::vector<std::vector<double>> next_token_log_probs(const ModelParams<T>& params, const ModelConfig& config,
                                                      const EncodedStates<T>& states,
                                                      const std::vector<std::vector<std::int32_t>>& prefixes) {
  std::vector<std::size_t> rows(prefixes.size(), 0);
  const auto selected = states.select(rows);
  const auto prefix = IdBatch::from_sequences(prefixes);
  ForwardContext<T> ctx;
  const auto logits = decode(params.primary_decoder(), params, config, prefix, selected, ctx);
  const std::size_t vocab = logits.dim(1);
  const auto data = logits.data();
  std::vector<std::vector<double>> out(prefixes.size(), std::vector<double>(vocab));
  for (std::size_t b = 0; b < prefixes.size(); ++b) {
    const std::size_t row = b * prefix.length + prefixes[b].size() - 1;
    const T* z = data.data() + row * vocab;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < vocab; ++v)
      if (v != static_cast<std::size_t>(Vocabulary::kPad) && v != static_cast<std::size_t>(Vocabulary::kBos))
        mx = std::max(mx, static_cast<double>(z[v]));
    double sum = 0.0;
    for (std::size_t v = 0; v < vocab; ++v)
      if (v != static_cast<std::size_t>(Vocabulary::kPad) && v != static_cast<std::size_t>(Vocabulary::kBos))
        sum += std::exp(static_cast<double>(z[v]) - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t v = 0; v < vocab; ++v) out[b][v] = static_cast<double>(z[v]) - lse;
    out[b][Vocabulary::kPad] = -std::numeric_limits<double>::infinity();
    out[b][Vocabulary::kBos] = -std::numeric_limits<double>::infinity();
  }
  return out;
}

template <typename T>
EncodedStates<T> encode_for_decoding(const ModelParams<T>& params, const ModelConfig& config,
                                     const ModelInputs& inputs) {
  require_single(inputs);
  ForwardContext<T> ctx;
  return encode(params, config, inputs, ctx);
}

std::vector<std::int32_t> with_bos(const std::vector<std::int32_t>& tokens) {
  std::vector<std::int32_t> p{Vocabulary::kBos};
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

bool better(const Hypothesis& a, double sa, const Hypothesis& b, double sb) {
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace

template <typename T>
DecodeResult greedy_decode(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                           const DecodeOptions& options) {
  NoGradGuard guard;
  const auto states = encode_for_decoding(params, config, inputs);
  const auto budget = output_budget(config, inputs, options);
  Hypothesis h;
  while (h.tokens.size() < budget) {
    const auto lp = next_token_log_probs(params, config, states, {with_bos(h.tokens)})[0];
    std::size_t best = 0;
    for (std::size_t v = 1; v < lp.size(); ++v)
      if (lp[v] > lp[best]) best = v;
    h.tokens.push_back(static_cast<std::int32_t>(best));
    h.log_prob += lp[best];
    if (best == static_cast<std::size_t>(Vocabulary::kEos)) {
      h.finished = true;
      break;
    }
  }
  DecodeResult r{h, normalized_score(h.log_prob, h.tokens.size(), options.alpha), !h.finished};
  return r;
}

template <typename T>
DecodeResult beam_search(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                         const DecodeOptions& options) {
  if (options.beam == 0) throw InputError("beam size must be positive");
  NoGradGuard guard;
  const auto states = encode_for_decoding(params, config, inputs);
  const auto budget = output_budget(config, inputs, options);

  struct Candidate {
    double log_prob;
    std::size_t beam;
    std::int32_t token;
  };
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < budget && !live.empty() && finished.size() < options.beam; ++step) {
    std::vector<std::vector<std::int32_t>> prefixes;
    for (const auto& h : live) prefixes.push_back(with_bos(h.tokens));
    const auto lp = next_token_log_probs(params, config, states, prefixes);

    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b)
      for (std::size_t v = 0; v < lp[b].size(); ++v)
        if (std::isfinite(lp[b][v])) cands.push_back({live[b].log_prob + lp[b][v], b, static_cast<std::int32_t>(v)});
    const std::size_t keep = std::min(cands.size(), options.beam);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      Hypothesis h = live[cands[k].beam];
      h.tokens.push_back(cands[k].token);
      h.log_prob = cands[k].log_prob;
      h.finished = cands[k].token == Vocabulary::kEos;
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
  }

  // The greedy path joins the final comparison so the returned score never
  // falls below it.
  if (options.beam > 1) {
    auto greedy = greedy_decode(params, config, inputs, options);
    if (greedy.best.finished) finished.push_back(greedy.best);
  }

  DecodeResult result;
  const auto& pool = finished.empty() ? live : finished;
  if (pool.empty()) throw ContractError("beam search produced no hypotheses");
  bool first = true;
  for (const auto& h : pool) {
    const double s = normalized_score(h.log_prob, h.tokens.size(), options.alpha);
    if (first || better(h, s, result.best, result.score)) {
      result.best = h;
      result.score = s;
      first = false;
    }
  }
  result.unfinished = finished.empty();
  return result;
}

template <typename T>
double sequence_log_prob(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                         const std::vector<std::int32_t>& output) {
  NoGradGuard guard;
  const auto states = encode_for_decoding(params, config, inputs);
  std::vector<std::int32_t> targets = output;
  targets.push_back(Vocabulary::kEos);
  double total = 0.0;
  std::vector<std::int32_t> prefix;
  for (auto t : targets) {
    total += next_token_log_probs(params, config, states, {with_bos(prefix)})[0][static_cast<std::size_t>(t)];
    prefix.push_back(t);
  }
  return total;
}

std::string AttentionDump::to_ndjson(std::size_t id) const {
  nlohmann::json j = {{"id", id}, {"example", example_tokens}, {"output", output_tokens}, {"weights", weights}};
  return j.dump();
}

template <typename T>
AttentionDump attention_dump(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                             const std::vector<std::int32_t>& output, const std::vector<std::string>& example_tokens,
                             const std::vector<std::string>& output_tokens) {
  if (!uses_example(config.variant)) throw ContractError("the baseline variant has no example attention");
  NoGradGuard guard;
  ForwardContext<T> ctx;
  const auto states = encode_for_decoding(params, config, inputs);
  ForwardTrace trace;
  trace.keep_weights = true;
  ctx.trace = &trace;
  const auto prefix = IdBatch::from_sequences({with_bos(output)});
  decode(params.primary_decoder(), params, config, prefix, states, ctx);

  const std::string name = "decoder." + std::to_string(config.decoder_layers - 1) + ".example_attention";
  const AttentionRecord* rec = nullptr;
  for (const auto& r : trace.attention)
    if (r.sublayer == name) rec = &r;
  if (!rec) throw ContractError("no example attention recorded");

  AttentionDump dump;
  dump.example_tokens = example_tokens;
  dump.output_tokens = output_tokens;
  const std::size_t nq = rec->queries, nk = states.example_len;
  dump.weights.assign(nq, std::vector<double>(nk, 0.0));
  for (std::size_t h = 0; h < rec->heads; ++h)
    for (std::size_t q = 0; q < nq; ++q)
      for (std::size_t k = 0; k < nk; ++k)
        dump.weights[q][k] += rec->weights[(h * nq + q) * rec->keys + k] / static_cast<double>(rec->heads);
  return dump;
}

#define EGNMT_INSTANTIATE_DECODE(T)                                                                                 \
  template DecodeResult beam_search(const ModelParams<T>&, const ModelConfig&, const ModelInputs&,                  \
                                    const DecodeOptions&);                                                          \
  template DecodeResult greedy_decode(const ModelParams<T>&, const ModelConfig&, const ModelInputs&,                \
                                      const DecodeOptions&);                                                        \
  template double sequence_log_prob(const ModelParams<T>&, const ModelConfig&, const ModelInputs&,                  \
                                    const std::vector<std::int32_t>&);                                              \
  template AttentionDump attention_dump(const ModelParams<T>&, const ModelConfig&, const ModelInputs&,              \
                                        const std::vector<std::int32_t>&, const std::vector<std::string>&,          \
                                        const std::vector<std::string>&);

EGNMT_INSTANTIATE_DECODE(float)
EGNMT_INSTANTIATE_DECODE(double)
#undef EGNMT_INSTANTIATE_DECODE

}  // namespace egnmt
