#include "egnmt/model.hpp"

#include <algorithm>
#include <cmath>

#include "egnmt/errors.hpp"
#include "egnmt/text.hpp"

namespace egnmt {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kBasic: return "basic";
    case Variant::kNme: return "nme";
    case Variant::kAd: return "ad";
    case Variant::kFinal: return "final";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (auto v : {Variant::kBaseline, Variant::kBasic, Variant::kNme, Variant::kAd, Variant::kFinal})
    if (to_string(v) == name) return v;
  throw InputError("unknown variant '" + name + "' (expected baseline, basic, nme, ad or final)");
}

bool uses_example(Variant v) { return v != Variant::kBaseline; }
bool uses_masked_example(Variant v) { return v == Variant::kNme || v == Variant::kFinal; }
bool uses_auxiliary(Variant v) { return v == Variant::kAd || v == Variant::kFinal; }

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw InputError("d_model must be a positive multiple of heads");
  if (example_encoder_layers != 1) throw InputError("the example encoder has exactly one layer");
  if (encoder_layers == 0 || decoder_layers == 0) throw InputError("encoder and decoder need at least one layer");
  if (ffn_dim == 0 || max_len == 0) throw InputError("ffn_dim and max_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("dropout must lie in [0, 1)");
  if (src_vocab <= Vocabulary::kReserved || tgt_vocab <= Vocabulary::kReserved)
    throw InputError("vocabulary sizes must exceed the reserved symbols");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"heads", heads},
          {"ffn_dim", ffn_dim},
          {"primary_encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"example_encoder_layers", example_encoder_layers},
          {"dropout", dropout},
          {"max_len", max_len},
          {"variant", to_string(variant)},
          {"auxiliary_start", mask_start_auxiliary ? "mask" : "bos"},
          {"src_vocab", src_vocab},
          {"tgt_vocab", tgt_vocab}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "d_model") c.d_model = value.get<std::size_t>();
    else if (key == "heads") c.heads = value.get<std::size_t>();
    else if (key == "ffn_dim") c.ffn_dim = value.get<std::size_t>();
    else if (key == "primary_encoder_layers") c.encoder_layers = value.get<std::size_t>();
    else if (key == "decoder_layers") c.decoder_layers = value.get<std::size_t>();
    else if (key == "example_encoder_layers") c.example_encoder_layers = value.get<std::size_t>();
    else if (key == "dropout") c.dropout = value.get<double>();
    else if (key == "max_len") c.max_len = value.get<std::size_t>();
    else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
    else if (key == "auxiliary_start") {
      const auto v = value.get<std::string>();
      if (v != "mask" && v != "bos") throw InputError("auxiliary_start must be 'mask' or 'bos'");
      c.mask_start_auxiliary = v == "mask";
    } else if (key == "src_vocab") c.src_vocab = value.get<std::size_t>();
    else if (key == "tgt_vocab") c.tgt_vocab = value.get<std::size_t>();
    else throw InputError("unknown model config key '" + key + "'");
  }
  return c;
}

namespace {

template <typename Linear, typename F>
void visit_linear(const std::string& name, Linear& p, F& f) {
  f(name + ".weight", p.weight);
  f(name + ".bias", p.bias);
}

template <typename Attention, typename F>
void visit_attention(const std::string& name, Attention& p, F& f) {
  visit_linear(name + ".query", p.query, f);
  visit_linear(name + ".key", p.key, f);
  visit_linear(name + ".value", p.value, f);
  visit_linear(name + ".output", p.output, f);
}

template <typename Norm, typename F>
void visit_norm(const std::string& name, Norm& p, F& f) {
  f(name + ".gain", p.gain);
  f(name + ".bias", p.bias);
}

template <typename Ffn, typename F>
void visit_ffn(const std::string& name, Ffn& p, F& f) {
  visit_linear(name + ".inner", p.inner, f);
  visit_linear(name + ".outer", p.outer, f);
}

template <typename Layer, typename F>
void visit_encoder_layer(const std::string& name, Layer& p, F& f) {
  visit_attention(name + ".self_attention", p.self_attention, f);
  visit_norm(name + ".self_norm", p.self_norm, f);
  visit_ffn(name + ".ffn", p.ffn, f);
  visit_norm(name + ".ffn_norm", p.ffn_norm, f);
}

template <typename Params, typename F>
void visit_all(Params& p, F& f) {
  f(std::string("source_embedding"), p.source_embedding);
  f(std::string("target_embedding"), p.target_embedding);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) visit_encoder_layer("encoder." + std::to_string(l), p.encoder[l], f);
  if (p.original_example_encoder) visit_encoder_layer("original_example_encoder", *p.original_example_encoder, f);
  if (p.example_encoder) {
    auto& e = *p.example_encoder;
    visit_attention("example_encoder.self_attention", e.self_attention, f);
    visit_norm("example_encoder.self_norm", e.self_norm, f);
    if (e.original) {
      visit_attention("example_encoder.original_attention", *e.original, f);
      visit_norm("example_encoder.original_norm", e.original_norm, f);
    }
    visit_attention("example_encoder.source_attention", e.source_attention, f);
    visit_norm("example_encoder.source_norm", e.source_norm, f);
    visit_ffn("example_encoder.ffn", e.ffn, f);
    visit_norm("example_encoder.ffn_norm", e.ffn_norm, f);
  }
  for (std::size_t l = 0; l < p.decoder.layers.size(); ++l) {
    auto& d = p.decoder.layers[l];
    const auto name = "decoder." + std::to_string(l);
    visit_attention(name + ".self_attention", d.self_attention, f);
    visit_norm(name + ".self_norm", d.self_norm, f);
    if (d.example_attention) {
      visit_attention(name + ".example_attention", *d.example_attention, f);
      visit_norm(name + ".example_norm", d.example_norm, f);
    }
    visit_attention(name + ".cross_attention", d.cross_attention, f);
    visit_norm(name + ".cross_norm", d.cross_norm, f);
    visit_ffn(name + ".ffn", d.ffn, f);
    visit_norm(name + ".ffn_norm", d.ffn_norm, f);
  }
  visit_linear("decoder.output", p.decoder.output, f);
}

template <typename T>
struct Initializer {
  Rng rng;
  Tensor<T> xavier(std::size_t in, std::size_t out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<T> v(in * out);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-limit, limit));
    return Tensor<T>::from({in, out}, std::move(v), true);
  }
  Tensor<T> normal(std::size_t rows, std::size_t cols, double stddev) {
    std::vector<T> v(rows * cols);
    for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
    return Tensor<T>::from({rows, cols}, std::move(v), true);
  }
  LinearParams<T> linear(std::size_t in, std::size_t out) { return {xavier(in, out), Tensor<T>::zeros({out}, true)}; }
  AttentionParams<T> attention(std::size_t d) { return {linear(d, d), linear(d, d), linear(d, d), linear(d, d)}; }
  NormParams<T> norm(std::size_t d) { return {Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)}; }
  FeedForwardParams<T> ffn(std::size_t d, std::size_t h) { return {linear(d, h), linear(h, d)}; }
  EncoderLayerParams<T> encoder_layer(std::size_t d, std::size_t h) { return {attention(d), norm(d), ffn(d, h), norm(d)}; }
};

}  // namespace

template <typename T>
void ModelParams<T>::for_each(const std::function<void(const std::string&, Tensor<T>&)>& visit) {
  auto f = [&](const std::string& name, Tensor<T>& t) { visit(name, t); };
  visit_all(*this, f);
}

template <typename T>
void ModelParams<T>::for_each(const std::function<void(const std::string&, const Tensor<T>&)>& visit) const {
  auto f = [&](const std::string& name, const Tensor<T>& t) { visit(name, t); };
  visit_all(*this, f);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for_each([&](const std::string& name, const Tensor<T>& t) { out.emplace_back(name, t); });
  return out;
}

template <typename T>
std::size_t ModelParams<T>::num_scalars() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for_each([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.d_model, h = config.ffn_dim;
  Initializer<T> init{Rng(seed).split(0x1417)};
  ModelParams<T> p;
  const double emb_std = 1.0 / std::sqrt(static_cast<double>(d));
  p.source_embedding = init.normal(config.src_vocab, d, emb_std);
  p.target_embedding = init.normal(config.tgt_vocab, d, emb_std);
  for (std::size_t l = 0; l < config.encoder_layers; ++l) p.encoder.push_back(init.encoder_layer(d, h));
  if (uses_masked_example(config.variant)) p.original_example_encoder = init.encoder_layer(d, h);
  if (uses_example(config.variant)) {
    ExampleEncoderParams<T> e;
    e.self_attention = init.attention(d);
    e.self_norm = init.norm(d);
    if (uses_masked_example(config.variant)) {
      e.original = init.attention(d);
      e.original_norm = init.norm(d);
    }
    e.source_attention = init.attention(d);
    e.source_norm = init.norm(d);
    e.ffn = init.ffn(d, h);
    e.ffn_norm = init.norm(d);
    p.example_encoder = std::move(e);
  }
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    DecoderLayerParams<T> layer;
    layer.self_attention = init.attention(d);
    layer.self_norm = init.norm(d);
    if (uses_example(config.variant)) {
      layer.example_attention = init.attention(d);
      layer.example_norm = init.norm(d);
    }
    layer.cross_attention = init.attention(d);
    layer.cross_norm = init.norm(d);
    layer.ffn = init.ffn(d, h);
    layer.ffn_norm = init.norm(d);
    p.decoder.layers.push_back(std::move(layer));
  }
  p.decoder.output = init.linear(d, config.tgt_vocab);
  return p;
}

template <typename To, typename From>
ModelParams<To> convert_params(const ModelConfig& config, const ModelParams<From>& params) {
  auto out = init_params<To>(config, 0);
  const auto source = params.named();
  std::size_t k = 0;
  out.for_each([&](const std::string& name, Tensor<To>& t) {
    if (k >= source.size() || source[k].first != name || source[k].second.shape() != t.shape())
      throw ContractError("parameter layout mismatch at " + name);
    auto values = source[k].second.data();
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<To>(values[i]);
    ++k;
  });
  return out;
}

std::int32_t auxiliary_start_symbol(const ModelConfig& config) {
  return config.mask_start_auxiliary ? Vocabulary::kMask : Vocabulary::kBos;
}

IdBatch IdBatch::from_sequences(const std::vector<std::vector<std::int32_t>>& sequences, std::int32_t pad) {
  IdBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) b.length = std::max(b.length, s.size());
  b.ids.assign(b.batch * b.length, pad);
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    std::copy(sequences[i].begin(), sequences[i].end(), b.ids.begin() + static_cast<std::ptrdiff_t>(i * b.length));
    b.lengths.push_back(sequences[i].size());
  }
  return b;
}

std::vector<std::uint8_t> IdBatch::valid() const {
  std::vector<std::uint8_t> v(batch * length, 0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < lengths[b]; ++t) v[b * length + t] = 1;
  return v;
}

std::vector<std::int32_t> IdBatch::row(std::size_t b) const {
  return {ids.begin() + static_cast<std::ptrdiff_t>(b * length),
          ids.begin() + static_cast<std::ptrdiff_t>(b * length + lengths.at(b))};
}

double positional_encoding(std::size_t position, std::size_t dim, std::size_t d_model) {
  const double exponent = static_cast<double>(dim - dim % 2) / static_cast<double>(d_model);
  const double angle = static_cast<double>(position) / std::pow(10000.0, exponent);
  return dim % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

namespace {

void require_batch(const IdBatch& b, const char* what) {
  if (b.batch == 0 || b.length == 0) throw ContractError(std::string(what) + ": empty batch");
  for (auto len : b.lengths)
    if (len == 0) throw ContractError(std::string(what) + ": every sequence needs at least one token");
}

template <typename T>
Tensor<T> select_rows(const Tensor<T>& states, std::size_t batch, const std::vector<std::size_t>& rows) {
  const std::size_t per_row = states.dim(0) / batch;
  const std::size_t d = states.dim(1);
  auto shaped = ops::reshape(states, {batch, per_row, d});
  auto picked = ops::index_select(shaped, std::span<const std::size_t>(rows));
  return ops::reshape(picked, {rows.size() * per_row, d});
}

std::vector<std::uint8_t> select_valid(const std::vector<std::uint8_t>& valid, std::size_t len,
                                       const std::vector<std::size_t>& rows) {
  std::vector<std::uint8_t> out;
  out.reserve(rows.size() * len);
  for (auto r : rows) out.insert(out.end(), valid.begin() + r * len, valid.begin() + (r + 1) * len);
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const LinearParams<T>& p) {
  return ops::add_row(ops::matmul(x, p.weight), p.bias);
}

template <typename T>
Tensor<T> multi_head(const AttentionParams<T>& p, const Tensor<T>& query, const Tensor<T>& memory,
                     const AttentionMask& mask, std::size_t heads, ForwardContext<T>& ctx, const std::string& name) {
  const std::size_t batch = mask.batch, nq = mask.queries, nk = mask.keys;
  const std::size_t d = query.dim(1), dh = d / heads;
  auto split = [&](const Tensor<T>& x, std::size_t len) {
    auto shaped = ops::reshape(x, {batch, len, heads, dh});
    return ops::reshape(ops::swap_middle_axes(shaped), {batch * heads, len, dh});
  };
  auto q = split(linear(query, p.query), nq);
  auto k = split(linear(memory, p.key), nk);
  auto v = split(linear(memory, p.value), nk);
  auto scores = ops::scale(ops::batched_matmul(q, k, true), T(1) / std::sqrt(static_cast<T>(dh)));
  auto weights = ops::masked_softmax(scores, mask, heads);
  if (ctx.trace) {
    ctx.trace->sublayers.push_back(name);
    if (ctx.trace->keep_weights) {
      AttentionRecord rec{name, batch, heads, nq, nk, {}};
      rec.weights.assign(weights.data().begin(), weights.data().end());
      ctx.trace->attention.push_back(std::move(rec));
    }
  }
  auto context = ops::batched_matmul(weights, v);
  auto merged = ops::reshape(ops::swap_middle_axes(ops::reshape(context, {batch, heads, nq, dh})), {batch * nq, d});
  return linear(merged, p.output);
}

template <typename T>
Tensor<T> feed_forward(const FeedForwardParams<T>& p, const Tensor<T>& x, ForwardContext<T>& ctx,
                       const std::string& name) {
  if (ctx.trace) ctx.trace->sublayers.push_back(name);
  return linear(ops::relu(linear(x, p.inner)), p.outer);
}

// LayerNorm(x + Dropout(sublayer)).
template <typename T>
Tensor<T> residual_norm(const Tensor<T>& x, const Tensor<T>& sublayer, const NormParams<T>& norm,
                        const ModelConfig& config, ForwardContext<T>& ctx) {
  Tensor<T> s = sublayer;
  if (ctx.training && config.dropout > 0.0) {
    if (!ctx.rng) throw ContractError("training forward pass needs a dropout rng");
    s = ops::dropout(sublayer, static_cast<T>(config.dropout), *ctx.rng);
  }
  return ops::layer_norm(ops::add(x, s), norm.gain, norm.bias);
}

AttentionMask make_mask(std::size_t batch, std::size_t queries, const IdBatch& keys, bool causal) {
  return {batch, queries, keys.length, keys.valid(), causal};
}

AttentionMask make_mask(std::size_t batch, std::size_t queries, std::size_t keys, std::vector<std::uint8_t> valid,
                        bool causal) {
  return {batch, queries, keys, std::move(valid), causal};
}

template <typename T>
Tensor<T> embed(const Tensor<T>& table, const ModelConfig& config, const IdBatch& ids) {
  const std::size_t d = config.d_model;
  auto emb = ops::scale(ops::embedding(table, std::span<const std::int32_t>(ids.ids)), std::sqrt(static_cast<T>(d)));
  std::vector<T> pe(ids.batch * ids.length * d);
  for (std::size_t b = 0; b < ids.batch; ++b)
    for (std::size_t t = 0; t < ids.length; ++t)
      for (std::size_t k = 0; k < d; ++k)
        pe[(b * ids.length + t) * d + k] = static_cast<T>(positional_encoding(t, k, d));
  return ops::add(emb, Tensor<T>::from({ids.batch * ids.length, d}, std::move(pe)));
}

template <typename T>
Tensor<T> encoder_layer(const EncoderLayerParams<T>& p, const Tensor<T>& x, const IdBatch& ids,
                        const ModelConfig& config, ForwardContext<T>& ctx, const std::string& name) {
  const auto mask = make_mask(ids.batch, ids.length, ids, false);
  auto h = residual_norm(x, multi_head(p.self_attention, x, x, mask, config.heads, ctx, name + ".self_attention"),
                         p.self_norm, config, ctx);
  return residual_norm(h, feed_forward(p.ffn, h, ctx, name + ".ffn"), p.ffn_norm, config, ctx);
}

void check_length(const IdBatch& b, const ModelConfig& config, const char* what) {
  if (b.length > config.max_len)
    throw InputError(std::string(what) + " length " + std::to_string(b.length) + " exceeds max_len " +
                     std::to_string(config.max_len));
}

}  // namespace

template <typename T>
EncodedStates<T> EncodedStates<T>::select(const std::vector<std::size_t>& rows) const {
  EncodedStates out;
  out.batch = rows.size();
  out.source = select_rows(source, batch, rows);
  out.source_len = source_len;
  out.source_valid = select_valid(source_valid, source_len, rows);
  if (example.defined()) {
    out.example = select_rows(example, batch, rows);
    out.example_len = example_len;
    out.example_valid = select_valid(example_valid, example_len, rows);
  }
  if (original_example.defined()) out.original_example = select_rows(original_example, batch, rows);
  return out;
}

template <typename T>
Tensor<T> encode_source(const ModelParams<T>& params, const ModelConfig& config, const IdBatch& source,
                        ForwardContext<T>& ctx) {
  require_batch(source, "source");
  check_length(source, config, "source");
  auto h = embed(params.source_embedding, config, source);
  for (std::size_t l = 0; l < params.encoder.size(); ++l)
    h = encoder_layer(params.encoder[l], h, source, config, ctx, "encoder." + std::to_string(l));
  return h;
}

template <typename T>
Tensor<T> embed_example(const ModelParams<T>& params, const ModelConfig& config, const IdBatch& example) {
  require_batch(example, "example");
  return embed(params.target_embedding, config, example);
}

template <typename T>
Tensor<T> encode_example_basic(const ModelParams<T>& params, const ModelConfig& config, const IdBatch& example,
                               const Tensor<T>& source_states, const IdBatch& source, ForwardContext<T>& ctx) {
  if (!params.example_encoder) throw ContractError("variant has no example encoder");
  check_length(example, config, "example");
  const auto& e = *params.example_encoder;
  auto y = embed_example(params, config, example);
  const auto self_mask = make_mask(example.batch, example.length, example, false);
  auto a = residual_norm(y, multi_head(e.self_attention, y, y, self_mask, config.heads, ctx, "example_encoder.self_attention"),
                         e.self_norm, config, ctx);
  const auto src_mask = make_mask(example.batch, example.length, source, false);
  auto f = residual_norm(
      a, multi_head(e.source_attention, a, source_states, src_mask, config.heads, ctx, "example_encoder.source_attention"),
      e.source_norm, config, ctx);
  return residual_norm(f, feed_forward(e.ffn, f, ctx, "example_encoder.ffn"), e.ffn_norm, config, ctx);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_example_nme(const ModelParams<T>& params, const ModelConfig& config,
                                                   const IdBatch& masked, const IdBatch& original,
                                                   const Tensor<T>& source_states, const IdBatch& source,
                                                   ForwardContext<T>& ctx) {
  if (!params.example_encoder || !params.example_encoder->original || !params.original_example_encoder)
    throw ContractError("variant has no noise-masked example encoder");
  // Word-level lengths agree; subword lengths may not, since a masked word
  // becomes a single mask unit.
  if (masked.batch != original.batch) throw InputError("masked and original example batches differ in size");
  check_length(masked, config, "example");
  check_length(original, config, "example");
  const auto& e = *params.example_encoder;

  auto original_states = encoder_layer(*params.original_example_encoder, embed_example(params, config, original),
                                       original, config, ctx, "original_example_encoder");

  auto y = embed_example(params, config, masked);
  const auto self_mask = make_mask(masked.batch, masked.length, masked, false);
  auto iota = residual_norm(
      y, multi_head(e.self_attention, y, y, self_mask, config.heads, ctx, "example_encoder.self_attention"), e.self_norm,
      config, ctx);
  const auto original_mask = make_mask(masked.batch, masked.length, original, false);
  auto k = residual_norm(iota,
                         multi_head(*e.original, iota, original_states, original_mask, config.heads, ctx,
                                    "example_encoder.original_attention"),
                         e.original_norm, config, ctx);
  const auto src_mask = make_mask(masked.batch, masked.length, source, false);
  auto f = residual_norm(
      k, multi_head(e.source_attention, k, source_states, src_mask, config.heads, ctx, "example_encoder.source_attention"),
      e.source_norm, config, ctx);
  auto out = residual_norm(f, feed_forward(e.ffn, f, ctx, "example_encoder.ffn"), e.ffn_norm, config, ctx);
  return {out, original_states};
}

template <typename T>
EncodedStates<T> encode(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                        ForwardContext<T>& ctx) {
  EncodedStates<T> s;
  s.batch = inputs.source.batch;
  s.source = encode_source(params, config, inputs.source, ctx);
  s.source_len = inputs.source.length;
  s.source_valid = inputs.source.valid();
  if (!uses_example(config.variant)) return s;

  if (!inputs.example) throw ContractError(to_string(config.variant) + " variant needs example inputs");
  if (inputs.example->batch != s.batch) throw ContractError("example batch size differs from source batch");
  if (uses_masked_example(config.variant)) {
    if (!inputs.masked_example) throw ContractError(to_string(config.variant) + " variant needs masked example inputs");
    auto [exp, orig] =
        encode_example_nme(params, config, *inputs.masked_example, *inputs.example, s.source, inputs.source, ctx);
    s.example = exp;
    s.original_example = orig;
    s.example_len = inputs.masked_example->length;
    s.example_valid = inputs.masked_example->valid();
  } else {
    s.example = encode_example_basic(params, config, *inputs.example, s.source, inputs.source, ctx);
    s.example_len = inputs.example->length;
    s.example_valid = inputs.example->valid();
  }
  return s;
}

template <typename T>
Tensor<T> decode(const DecoderParams<T>& decoder, const ModelParams<T>& params, const ModelConfig& config,
                 const IdBatch& prefix, const EncodedStates<T>& states, ForwardContext<T>& ctx) {
  require_batch(prefix, "target prefix");
  if (prefix.batch != states.batch) throw ContractError("prefix batch differs from encoded batch");
  for (std::size_t b = 0; b < prefix.batch; ++b)
    if (prefix.ids[b * prefix.length] != Vocabulary::kBos && prefix.ids[b * prefix.length] != Vocabulary::kMask)
      throw ContractError("decoder prefix must start with BOS");

  auto h = embed(params.target_embedding, config, prefix);
  const auto self_mask = make_mask(prefix.batch, prefix.length, prefix, true);
  const auto src_mask = make_mask(prefix.batch, prefix.length, states.source_len, states.source_valid, false);
  for (std::size_t l = 0; l < decoder.layers.size(); ++l) {
    const auto& layer = decoder.layers[l];
    const auto name = "decoder." + std::to_string(l);
    h = residual_norm(h, multi_head(layer.self_attention, h, h, self_mask, config.heads, ctx, name + ".self_attention"),
                      layer.self_norm, config, ctx);
    if (layer.example_attention) {
      if (!states.example.defined()) throw ContractError("decoder expects example encodings");
      const auto exp_mask = make_mask(prefix.batch, prefix.length, states.example_len, states.example_valid, false);
      h = residual_norm(
          h, multi_head(*layer.example_attention, h, states.example, exp_mask, config.heads, ctx, name + ".example_attention"),
          layer.example_norm, config, ctx);
    }
    h = residual_norm(
        h, multi_head(layer.cross_attention, h, states.source, src_mask, config.heads, ctx, name + ".cross_attention"),
        layer.cross_norm, config, ctx);
    h = residual_norm(h, feed_forward(layer.ffn, h, ctx, name + ".ffn"), layer.ffn_norm, config, ctx);
  }
  return linear(h, decoder.output);
}

template <typename T>
JointLogits<T> forward_joint(const ModelParams<T>& params, const ModelConfig& config, const ModelInputs& inputs,
                             const IdBatch& target_prefix, const IdBatch* auxiliary_prefix, ForwardContext<T>& ctx) {
  if (!uses_auxiliary(config.variant))
    throw ContractError("forward_joint needs the ad or final variant, got " + to_string(config.variant));
  if (!auxiliary_prefix) throw ContractError("forward_joint needs the masked reference prefix");
  const auto states = encode(params, config, inputs, ctx);
  JointLogits<T> out;
  out.primary = decode(params.primary_decoder(), params, config, target_prefix, states, ctx);
  out.auxiliary = decode(params.auxiliary_decoder(), params, config, *auxiliary_prefix, states, ctx);
  return out;
}

#define EGNMT_INSTANTIATE_MODEL(T)                                                                                   \
  template struct ModelParams<T>;                                                                                    \
  template struct EncodedStates<T>;                                                                                  \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                         \
  template Tensor<T> encode_source(const ModelParams<T>&, const ModelConfig&, const IdBatch&, ForwardContext<T>&);    \
  template Tensor<T> embed_example(const ModelParams<T>&, const ModelConfig&, const IdBatch&);                        \
  template Tensor<T> encode_example_basic(const ModelParams<T>&, const ModelConfig&, const IdBatch&, const Tensor<T>&, \
                                          const IdBatch&, ForwardContext<T>&);                                       \
  template std::pair<Tensor<T>, Tensor<T>> encode_example_nme(const ModelParams<T>&, const ModelConfig&,             \
                                                              const IdBatch&, const IdBatch&, const Tensor<T>&,      \
                                                              const IdBatch&, ForwardContext<T>&);                   \
  template EncodedStates<T> encode(const ModelParams<T>&, const ModelConfig&, const ModelInputs&, ForwardContext<T>&); \
  template Tensor<T> decode(const DecoderParams<T>&, const ModelParams<T>&, const ModelConfig&, const IdBatch&,       \
                            const EncodedStates<T>&, ForwardContext<T>&);                                            \
  template JointLogits<T> forward_joint(const ModelParams<T>&, const ModelConfig&, const ModelInputs&,               \
                                        const IdBatch&, const IdBatch*, ForwardContext<T>&);

EGNMT_INSTANTIATE_MODEL(float)
EGNMT_INSTANTIATE_MODEL(double)
#undef EGNMT_INSTANTIATE_MODEL

template ModelParams<double> convert_params<double, float>(const ModelConfig&, const ModelParams<float>&);
template ModelParams<float> convert_params<float, double>(const ModelConfig&, const ModelParams<double>&);
template ModelParams<float> convert_params<float, float>(const ModelConfig&, const ModelParams<float>&);
template ModelParams<double> convert_params<double, double>(const ModelConfig&, const ModelParams<double>&);

}  // namespace egnmt
