#pragma once

#include <string>

#include "egnmt/model.hpp"
#include "json.hpp"

namespace egnmt {

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
  nlohmann::json meta;
};

// Layout: "EGNMTCKP", u32 version, u64 header size, canonical JSON header,
// then per tensor (u32 name size, name, u32 rank, u64 dims, f32 data), then a
// u64 FNV-1a checksum of everything before it. All integers little-endian.
// The shared decoder is written once. Writes go to a temp file first.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams<float>& params,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t hash = 0xcbf29ce484222325ULL);

// Writes bytes to path via a sibling temp file and rename.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace egnmt
