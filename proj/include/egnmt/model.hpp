#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "egnmt/rng.hpp"
#include "egnmt/tensor.hpp"
#include "json.hpp"

namespace egnmt {

enum class Variant { kBaseline, kBasic, kNme, kAd, kFinal };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
bool uses_example(Variant v);
// NME and Final read M(y^m) in the example encoder and y^m in the extra encoder.
bool uses_masked_example(Variant v);
// AD and Final train an auxiliary decoding path on M(y).
bool uses_auxiliary(Variant v);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t example_encoder_layers = 1;
  double dropout = 0.1;
  std::size_t max_len = 50;
  Variant variant = Variant::kFinal;
  // Start symbol of the auxiliary teacher-forced prefix. With BOS the two
  // paths see identical inputs until the first mask and cannot both be fit.
  bool mask_start_auxiliary = true;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct AttentionParams {
  LinearParams<T> query, key, value, output;
};

template <typename T>
struct NormParams {
  Tensor<T> gain, bias;
};

template <typename T>
struct FeedForwardParams {
  LinearParams<T> inner, outer;
};

template <typename T>
struct EncoderLayerParams {
  AttentionParams<T> self_attention;
  NormParams<T> self_norm;
  FeedForwardParams<T> ffn;
  NormParams<T> ffn_norm;
};

// Single-layer example encoder. `original` (with its norm) exists only for
// the noise-masked variants and attends to the unmasked example encoding.
template <typename T>
struct ExampleEncoderParams {
  AttentionParams<T> self_attention;
  NormParams<T> self_norm;
  std::optional<AttentionParams<T>> original;
  NormParams<T> original_norm;
  AttentionParams<T> source_attention;
  NormParams<T> source_norm;
  FeedForwardParams<T> ffn;
  NormParams<T> ffn_norm;
};

template <typename T>
struct DecoderLayerParams {
  AttentionParams<T> self_attention;
  NormParams<T> self_norm;
  std::optional<AttentionParams<T>> example_attention;
  NormParams<T> example_norm;
  AttentionParams<T> cross_attention;
  NormParams<T> cross_norm;
  FeedForwardParams<T> ffn;
  NormParams<T> ffn_norm;
};

template <typename T>
struct DecoderParams {
  std::vector<DecoderLayerParams<T>> layers;
  LinearParams<T> output;
};

template <typename T>
struct ModelParams {
  Tensor<T> source_embedding;  // [src_vocab, d]
  Tensor<T> target_embedding;  // [tgt_vocab, d], decoder input and example side
  std::vector<EncoderLayerParams<T>> encoder;
  std::optional<ExampleEncoderParams<T>> example_encoder;
  std::optional<EncoderLayerParams<T>> original_example_encoder;
  DecoderParams<T> decoder;

  // Both decoding paths read this one object; there is no second copy.
  const DecoderParams<T>& primary_decoder() const { return decoder; }
  const DecoderParams<T>& auxiliary_decoder() const { return decoder; }

  // Visits every parameter once, in a fixed order, with a stable name.
  void for_each(const std::function<void(const std::string&, Tensor<T>&)>& visit);
  void for_each(const std::function<void(const std::string&, const Tensor<T>&)>& visit) const;
  std::vector<std::pair<std::string, Tensor<T>>> named() const;
  std::size_t num_scalars() const;
  void zero_grad();
};

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Copies parameter values into fresh leaves of another precision.
template <typename To, typename From>
ModelParams<To> convert_params(const ModelConfig& config, const ModelParams<From>& params);

// Padded id matrix, row-major [batch, length].
struct IdBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::size_t> lengths;

  static IdBatch from_sequences(const std::vector<std::vector<std::int32_t>>& sequences, std::int32_t pad = 0);
  std::vector<std::uint8_t> valid() const;
  std::vector<std::int32_t> row(std::size_t b) const;
};

struct AttentionRecord {
  std::string sublayer;
  std::size_t batch = 0, heads = 0, queries = 0, keys = 0;
  std::vector<double> weights;  // [batch, heads, queries, keys]
};

// Optional instrumentation filled during a forward pass.
struct ForwardTrace {
  std::vector<std::string> sublayers;
  bool keep_weights = false;
  std::vector<AttentionRecord> attention;
};

template <typename T>
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  ForwardTrace* trace = nullptr;
};

template <typename T>
struct EncodedStates {
  std::size_t batch = 0;
  Tensor<T> source;  // [batch * source_len, d]
  std::size_t source_len = 0;
  std::vector<std::uint8_t> source_valid;
  Tensor<T> example;  // nu^exp, [batch * example_len, d]
  std::size_t example_len = 0;
  std::vector<std::uint8_t> example_valid;
  Tensor<T> original_example;  // nu^oriexp for noise-masked variants

  // Rows of the batch picked (with repetition) by index.
  EncodedStates select(const std::vector<std::size_t>& rows) const;
};

struct ModelInputs {
  IdBatch source;
  std::optional<IdBatch> example;         // y^m
  std::optional<IdBatch> masked_example;  // M(y^m)
};

// Sinusoidal positional encoding value for (position, dimension).
double positional_encoding(std::size_t position, std::size_t dim, std::size_t d_model);

template <typename T>
Tensor<T> encode_source(const ModelParams<T>& params, const ModelConfig& config, const IdBatch& source,
                        ForwardContext<T>& ctx);

// Emb(y_j) + PE(j), [batch * length, d].
template <typename T>
Tensor<T> embed_example(const ModelParams<T>& params, const ModelConfig& config, const IdBatch& example);

template <typename T>
Tensor<T> encode_example_basic(const ModelParams<T>& params, const ModelConfig& config, const IdBatch& example,
                               const Tensor<T>& source_states, const IdBatch& source, ForwardContext<T>& ctx);

// Returns {nu^exp, nu^oriexp}.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_example_nme(const ModelParams<T>& params, const ModelConfig& config,
                                                   const IdBatch& masked, const IdBatch& original,
                                                   const Tensor<T>& source_states, const IdBatch& source,
                                                   ForwardContext<T>& ctx);

template <typename T>
EncodedStates<T> encode(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                        ForwardContext<T>& ctx);

// Id that opens the auxiliary prefix under this config.
std::int32_t auxiliary_start_symbol(const ModelConfig& config);

// Teacher-forced decoder over a prefix opened by BOS (or the auxiliary start
// symbol); logits [batch * len, tgt_vocab].
template <typename T>
Tensor<T> decode(const DecoderParams<T>& decoder, const ModelParams<T>& params, const ModelConfig& config,
                 const IdBatch& prefix, const EncodedStates<T>& states, ForwardContext<T>& ctx);

template <typename T>
struct JointLogits {
  Tensor<T> primary;
  Tensor<T> auxiliary;  // undefined for variants without the auxiliary path
};

// Primary path teacher-forces y, auxiliary path teacher-forces M(y); both run
// through the same decoder parameters.
template <typename T>
JointLogits<T> forward_joint(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                             const IdBatch& target_prefix, const IdBatch* auxiliary_prefix, ForwardContext<T>& ctx);

}  // namespace egnmt
