#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "egnmt/model.hpp"

namespace egnmt {

struct DecodeOptions {
  std::size_t beam = 4;
  std::size_t max_output = 0;  // 0: 2 * source length + 10, capped by max_len
  double alpha = 0.6;
};

struct Hypothesis {
  std::vector<std::int32_t> tokens;  // generated ids, EOS included when finished
  double log_prob = 0.0;
  bool finished = false;
};

// logp / len^alpha with len counting generated tokens.
double normalized_score(double log_prob, std::size_t length, double alpha);

struct DecodeResult {
  Hypothesis best;
  double score = 0.0;
  // Set when no hypothesis produced EOS within the output budget.
  bool unfinished = false;

  // Generated ids without the trailing EOS.
  std::vector<std::int32_t> output() const;
};

// Inputs hold a single sentence. Decoding never records gradients and never
// uses dropout. Ties between equal scores go to the lower token id.
template <typename T>
DecodeResult beam_search(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                         const DecodeOptions& options = {});

template <typename T>
DecodeResult greedy_decode(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                           const DecodeOptions& options = {});

// Sum of log-probabilities the model assigns to `output` followed by EOS.
template <typename T>
double sequence_log_prob(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                         const std::vector<std::int32_t>& output);

struct AttentionDump {
  std::vector<std::string> example_tokens;
  std::vector<std::string> output_tokens;
  std::vector<std::vector<double>> weights;  // [output_len, example_len], head-averaged

  std::string to_ndjson(std::size_t id) const;
};

// Head-averaged example attention of the top decoder layer while
// teacher-forcing `output` (plus EOS). The example is M(y^m) for the masked
// variants and y^m otherwise, matching what the decoder attends to.
template <typename T>
AttentionDump attention_dump(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                             const std::vector<std::int32_t>& output, const std::vector<std::string>& example_tokens,
                             const std::vector<std::string>& output_tokens);

}  // namespace egnmt
