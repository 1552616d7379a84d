// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pathformer/config_io.hpp"
#include "pathformer/model.hpp"
#include "pathformer/training.hpp"

namespace pathformer::cli {

/// Everything one command needs, loaded from a JSON file:
///   {"dataset": {"path": "...", "split": [0.7, 0.1, 0.2]},
///    "model": {...}, "train": {...}, "output": "out", "seed": 0}
struct ExperimentConfig {
    std::string dataset_path;  // resolved against the config file's directory
    training::SplitRatios split;
    model::ModelConfig model;
    bool channels_given = false;  // false: channel count follows the dataset
    training::TrainConfig train;
    std::string output = "out";
    std::uint64_t seed = 0;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_experiment(const config_io::json& j, const std::string& base_dir = "");
ExperimentConfig load_experiment(const std::string& path);
config_io::json to_json(const ExperimentConfig& config);

struct PathwayRow {
    std::size_t block = 0;
    std::size_t patch_size = 0;
    double mean_weight = 0.0;     // average dense weight
    double selection_rate = 0.0;  // fraction of samples routing through this scale
};

struct PathwayReport {
    std::vector<PathwayRow> rows;
    std::size_t samples = 0;  // windows x channels
};

PathwayReport inspect_pathways(const model::PathformerModel& model, const training::Dataset& dataset,
                               training::Split split);
void write_pathways_csv(std::ostream& out, const PathwayReport& report);

// Forecast from the last H rows of `input`; returns [F, C] on the input's scale.
numerics::Tensor forecast_tail(const model::PathformerModel& model, const training::Dataset& input);

void write_metrics_json(std::ostream& out, const training::Metrics& metrics, double wall_clock_s);

// Parses argv and runs one command. Returns the process exit code.
int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pathformer::cli
