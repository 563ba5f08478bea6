#include "egnmt/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "egnmt/errors.hpp"

namespace egnmt {

namespace {

using Setter = std::function<void(const nlohmann::json&)>;

void apply(const nlohmann::json& j, const std::string& section, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw InputError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw InputError("unknown config key '" + section + key + "'");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception& e) {
      throw InputError("config key '" + section + key + "': " + e.what());
    }
  }
}

template <typename U>
Setter into(U& field) {
  return [&field](const nlohmann::json& v) { field = v.get<U>(); };
}

ReferenceMaskMode parse_mode(const std::string& s) {
  if (s == "lcs") return ReferenceMaskMode::kLcs;
  if (s == "bag") return ReferenceMaskMode::kBag;
  throw InputError("masking.reference_mode must be 'lcs' or 'bag'");
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  auto& a = c.preprocess.alignment;
  auto& opt = c.train.adam;
  apply(j, "",
        {{"seed", into(c.seed)},
         {"paths", [&](const nlohmann::json& v) {
            apply(v, "paths.",
                  {{"corpus", into(c.paths.corpus)},
                   {"example_db", into(c.paths.example_db)},
                   {"work_dir", into(c.paths.work_dir)}});
          }},
         {"model",
          [&](const nlohmann::json& v) {
            nlohmann::json merged = c.model.to_json();
            if (!v.is_object()) throw InputError("config section 'model' must be an object");
            for (const auto& [key, value] : v.items()) {
              if (!merged.contains(key)) throw InputError("unknown config key 'model." + key + "'");
              merged[key] = value;
            }
            c.model = ModelConfig::from_json(merged);
          }},
         {"optimizer", [&](const nlohmann::json& v) {
            apply(v, "optimizer.",
                  {{"lr", into(opt.lr)},
                   {"beta1", into(opt.beta1)},
                   {"beta2", into(opt.beta2)},
                   {"eps", into(opt.eps)},
                   {"warmup", into(opt.warmup)},
                   {"schedule", into(opt.schedule)},
                   {"clip_norm", [&](const nlohmann::json& x) {
                      if (x.is_null()) opt.clip_norm.reset();
                      else opt.clip_norm = x.get<double>();
                    }}});
          }},
         {"training", [&](const nlohmann::json& v) {
            apply(v, "training.",
                  {{"steps", into(c.train.steps)},
                   {"max_tokens", into(c.train.max_tokens)},
                   {"log_every", into(c.train.log_every)},
                   {"checkpoint_every", into(c.train.checkpoint_every)},
                   {"stop_loss", [&](const nlohmann::json& x) {
                      if (x.is_null()) c.train.stop_loss.reset();
                      else c.train.stop_loss = x.get<double>();
                    }}});
          }},
         {"retrieval", [&](const nlohmann::json& v) {
            apply(v, "retrieval.",
                  {{"topn", into(c.preprocess.retrieval.topn)},
                   {"exclude_self", into(c.preprocess.retrieval.exclude_self)}});
          }},
         {"alignment", [&](const nlohmann::json& v) {
            apply(v, "alignment.",
                  {{"iterations", into(a.iterations)},
                   {"null_word", into(a.null_word)},
                   {"diagonal_prior", into(a.diagonal_prior)},
                   {"diagonal_tension", into(a.diagonal_tension)},
                   {"null_probability", into(a.null_probability)},
                   {"null_threshold", into(c.preprocess.null_threshold)}});
          }},
         {"masking", [&](const nlohmann::json& v) {
            apply(v, "masking.", {{"reference_mode", [&](const nlohmann::json& x) {
                                     c.preprocess.reference_mode = parse_mode(x.get<std::string>());
                                   }}});
          }},
         {"bpe", [&](const nlohmann::json& v) { apply(v, "bpe.", {{"merges", into(c.bpe_merges)}}); }},
         {"decode", [&](const nlohmann::json& v) {
            apply(v, "decode.",
                  {{"beam", into(c.decode.beam)},
                   {"alpha", into(c.decode.alpha)},
                   {"max_output", into(c.decode.max_output)}});
          }}});
  c.train.seed = c.seed;
  return c;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json PipelineConfig::to_json() const {
  const auto& a = preprocess.alignment;
  const auto& opt = train.adam;
  return {
      {"seed", seed},
      {"paths", {{"corpus", paths.corpus}, {"example_db", paths.example_db}, {"work_dir", paths.work_dir}}},
      {"model", model.to_json()},
      {"optimizer",
       {{"lr", opt.lr},
        {"beta1", opt.beta1},
        {"beta2", opt.beta2},
        {"eps", opt.eps},
        {"warmup", opt.warmup},
        {"schedule", opt.schedule},
        {"clip_norm", opt.clip_norm ? nlohmann::json(*opt.clip_norm) : nlohmann::json()}}},
      {"training",
       {{"steps", train.steps},
        {"max_tokens", train.max_tokens},
        {"log_every", train.log_every},
        {"checkpoint_every", train.checkpoint_every},
        {"stop_loss", train.stop_loss ? nlohmann::json(*train.stop_loss) : nlohmann::json()}}},
      {"retrieval", {{"topn", preprocess.retrieval.topn}, {"exclude_self", preprocess.retrieval.exclude_self}}},
      {"alignment",
       {{"iterations", a.iterations},
        {"null_word", a.null_word},
        {"diagonal_prior", a.diagonal_prior},
        {"diagonal_tension", a.diagonal_tension},
        {"null_probability", a.null_probability},
        {"null_threshold", preprocess.null_threshold}}},
      {"masking", {{"reference_mode", preprocess.reference_mode == ReferenceMaskMode::kLcs ? "lcs" : "bag"}}},
      {"bpe", {{"merges", bpe_merges}}},
      {"decode", {{"beam", decode.beam}, {"alpha", decode.alpha}, {"max_output", decode.max_output}}},
  };
}

}  // namespace egnmt
