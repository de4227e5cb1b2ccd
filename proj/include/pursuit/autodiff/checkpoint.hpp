#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "pursuit/autodiff/param_store.hpp"

namespace pursuit::ad {

// Text checkpoint:
//   {"format": "pursuit-params", "version": 1, "step": <n>, "meta": {...},
//    "params": [{"name": ..., "shape": [...], "values": [...]}, ...]}
// Values are written with 17 significant digits so that reading them back
// reproduces every double bit for bit.

std::string serialize_params(const ParamStore& store, const nlohmann::json& meta = nlohmann::json::object());
ParamStore deserialize_params(const std::string& text, nlohmann::json* meta = nullptr);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store,
                     const nlohmann::json& meta = nlohmann::json::object());
ParamStore load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

}  // namespace pursuit::ad
