#pragma once

// Binary checkpoint of a dense model:
//   "NMSCKPT\0", u32 version, u32 header length, JSON header, f32 LE data.
// The header lists the arch and every tensor (name, rows, cols) in storage
// order. Optimizer state is not stored.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "nmsearch/arch.hpp"
#include "nmsearch/supernet.hpp"

namespace nmsearch {

nlohmann::json arch_to_json(const ArchSpec& arch);
// Missing keys keep their defaults; unknown keys raise ConfigError.
ArchSpec arch_from_json(const nlohmann::json& j);

std::string serialize_checkpoint(const DenseModel& model);
DenseModel deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const DenseModel& model);
DenseModel load_checkpoint(const std::filesystem::path& path);

}  // namespace nmsearch
