// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pathformer/forward_context.hpp"
#include "pathformer/numerics/graph.hpp"

namespace pathformer::router {

using numerics::ParameterStore;
using numerics::Tensor;
using numerics::Var;

/// Softmax pathway weights and their top-K sparsification. Surviving sparse
/// weights are the dense values themselves; they are not renormalised.
struct PathwayWeights {
    std::vector<double> dense;
    std::vector<double> sparse;
    std::vector<bool> mask;

    std::vector<std::size_t> selected() const;
};

struct SparseSelection {
    std::vector<double> sparse;
    std::vector<bool> mask;
};

// Keeps the k largest entries; ties resolve to the lower index.
SparseSelection topk_sparsify(std::span<const double> dense, std::size_t k);

// Deterministic part of the gate without a graph. `noise` (length M, may be
// empty) holds the standard-normal draws scaled by softplus(x W_noise).
PathwayWeights route(std::span<const double> x_trans, const Tensor& w_r, const Tensor& w_noise, std::size_t k,
                     std::span<const double> noise = {});

struct RouterConfig {
    std::size_t features = 1;
    std::size_t paths = 4;
    std::size_t top_k = 2;
    bool noise = true;

    void validate() const;
};

struct RouteVars {
    Var dense;  // [M]
    PathwayWeights weights;
    std::vector<double> noise;
};

/// Noisy top-K gate: softmax(x W_r + eps * softplus(x W_noise)), eps ~ N(0, 1).
/// Noise is drawn only when the config enables it and the context is training.
class Router {
public:
    Router(std::string prefix, RouterConfig config);

    // Both matrices start at zero, so an untrained gate is uniform.
    void init_parameters(ParameterStore& store) const;
    std::vector<std::string> parameter_names() const;

    RouteVars forward(Var x_trans, const ParameterStore& store, ForwardContext& ctx) const;

    const RouterConfig& config() const { return config_; }

private:
    std::string prefix_;
    RouterConfig config_;
};

}  // namespace pathformer::router
