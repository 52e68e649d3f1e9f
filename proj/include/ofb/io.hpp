#pragma once

// Files: architecture JSON, weight checkpoints (flat little-endian doubles
// plus a JSON manifest of names, shapes and byte offsets), line-JSON logs.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofb/pruner.hpp"
#include "ofb/search_space.hpp"
#include "ofb/vit.hpp"

namespace ofb {

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& j);

nlohmann::json vit_arch_to_json(const ViTArch& arch);
ViTArch vit_arch_from_json(const nlohmann::json& j);

// Writes <stem>.bin and <stem>.json.
void save_checkpoint(const ViTModel& model, const std::filesystem::path& stem);
ViTModel load_checkpoint(const std::filesystem::path& stem);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// One JSON value per line; a truncated final line is reported through
// `truncated` and skipped.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path, bool* truncated = nullptr);

std::vector<PruneEvent> read_prune_events(const std::filesystem::path& path);

}  // namespace ofb
