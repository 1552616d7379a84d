// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "pathformer/model.hpp"
#include "pathformer/training.hpp"

// JSON (de)serialisation of the configuration types. Readers reject unknown
// keys and wrong types with a ConfigError naming the offending field path.
namespace pathformer::config_io {

using nlohmann::json;

json to_json(const model::ModelConfig& config);
model::ModelConfig model_from_json(const json& j, const std::string& path = "model");

json to_json(const training::TrainConfig& config);
training::TrainConfig train_from_json(const json& j, const std::string& path = "train");

json to_json(const training::SplitRatios& ratios);
training::SplitRatios ratios_from_json(const json& j, const std::string& path);

const char* ablation_name(int index);
// Sets the flag named `name` (no_inter, no_intra, no_decompose, no_pathways).
void set_ablation(model::AblationFlags& flags, const std::string& name);

// Top-level keys whose values differ, e.g. {"d_model", "pool"}.
std::vector<std::string> config_mismatches(const model::ModelConfig& expected, const model::ModelConfig& found,
                                           bool ignore_channels = false);

}  // namespace pathformer::config_io
