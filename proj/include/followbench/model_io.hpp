#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "followbench/models.hpp"

namespace followbench {

/// Rebuilds a policy from the document its to_json() produced. Known kinds:
/// idm, ghr, constant, mlp, recurrent, ddpg_actor.
ModelHandle load_model(const nlohmann::json& doc);
ModelHandle load_model(const std::filesystem::path& path);

void save_model(const Policy& model, const std::filesystem::path& path);

}  // namespace followbench
