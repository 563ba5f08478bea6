#pragma once

#include <cstdint>
#include <string>

#include "egnmt/decode.hpp"
#include "egnmt/pipeline.hpp"
#include "json.hpp"

namespace egnmt {

struct PathConfig {
  std::string corpus;
  std::string example_db;
  std::string work_dir;
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  PathConfig paths;
  ModelConfig model;
  TrainOptions train;
  ManifestOptions preprocess;
  std::size_t bpe_merges = 0;
  DecodeOptions decode;

  // Start from defaults and overlay the given keys. Unknown keys throw InputError.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::string& path);
  // Every field, defaults included; dumps canonically (sorted keys).
  nlohmann::json to_json() const;
};

}  // namespace egnmt
