// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pathformer/model.hpp"

// Built-in numerical checks run by the `selfcheck` command.
namespace pathformer::selfcheck {

// Small model used by the gradient check: H=24, C=2, F=8, pool {2,3,6}, K=2, d_m=4.
model::ModelConfig toy_config();

struct GradientReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Central differences on a random smooth loss over every parameter scalar,
// with frequency/top-K choices (and router noise when `noisy`) frozen. The
// relative error is |ga - fd| / (|fd| + 1e-8).
GradientReport gradient_check(const model::ModelConfig& config, std::uint64_t seed, bool noisy, double step = 1e-4);

struct CheckLine {
    std::string name;
    bool pass = false;
    std::string detail;
};

std::vector<CheckLine> run_all(std::size_t gradient_seeds = 3);

}  // namespace pathformer::selfcheck
