// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pathformer/numerics/graph.hpp"
#include "pathformer/numerics/ops.hpp"

namespace testing {

using pathformer::numerics::Graph;
using pathformer::numerics::ParameterStore;
using pathformer::numerics::Shape;
using pathformer::numerics::Tensor;
using pathformer::numerics::Var;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = normal(rng);
    return t;
}

// Builds a scalar loss from named parameters on a fresh graph.
using LossBuilder = std::function<Var(Graph&, const ParameterStore&)>;

// Largest |ga - fd| / (|fd| + 1e-8) over every scalar of every parameter.
inline double max_fd_error(ParameterStore& store, const LossBuilder& build, double step = 1e-4) {
    Graph g;
    const auto grads = g.backward(build(g, store));
    double worst = 0.0;
    for (auto& [name, t] : store) {
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + step;
            double up, down;
            {
                Graph gu;
                up = build(gu, store).value().item();
            }
            t[i] = orig - step;
            {
                Graph gd;
                down = build(gd, store).value().item();
            }
            t[i] = orig;
            const double fd = (up - down) / (2.0 * step);
            const auto it = grads.find(name);  // parameters outside the graph have zero gradient
            const double ga = it == grads.end() ? 0.0 : it->second[i];
            worst = std::max(worst, std::abs(ga - fd) / (std::abs(fd) + 1e-8));
        }
    }
    return worst;
}

// Contracts an op output with fixed random weights so every element matters.
inline Var weighted_sum(Var y, const Tensor& weights) {
    return pathformer::numerics::sum(pathformer::numerics::mul(y, y.graph().constant(weights)));
}

}  // namespace testing
