// SPDX-License-Identifier: Apache-2.0
#include "pathformer/router.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pathformer/errors.hpp"
#include "pathformer/numerics/ops.hpp"

namespace pathformer::router {

namespace nx = numerics;

std::vector<std::size_t> PathwayWeights::selected() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) out.push_back(i);
    }
    return out;
}

SparseSelection topk_sparsify(std::span<const double> dense, std::size_t k) {
    if (k < 1 || k > dense.size()) {
        throw ConfigError("top-K must be in [1, " + std::to_string(dense.size()) + "], got " + std::to_string(k));
    }
    std::vector<std::size_t> order(dense.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dense[a] > dense[b]; });
    SparseSelection out{std::vector<double>(dense.size(), 0.0), std::vector<bool>(dense.size(), false)};
    for (std::size_t i = 0; i < k; ++i) {
        out.mask[order[i]] = true;
        out.sparse[order[i]] = dense[order[i]];
    }
    return out;
}

namespace {

std::vector<double> row_times(std::span<const double> x, const Tensor& w) {
    const std::size_t d = w.extent(0), m = w.extent(1);
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < m; ++j) out[j] += x[i] * w.at(i, j);
    }
    return out;
}

double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

}  // namespace

PathwayWeights route(std::span<const double> x_trans, const Tensor& w_r, const Tensor& w_noise, std::size_t k,
                     std::span<const double> noise) {
    if (w_r.rank() != 2 || w_r.extent(0) != x_trans.size() || w_noise.shape() != w_r.shape()) {
        throw DimensionError("route: x_trans of length " + std::to_string(x_trans.size()) + " vs W_r " +
                             nx::shape_string(w_r.shape()) + ", W_noise " + nx::shape_string(w_noise.shape()));
    }
    const std::size_t m = w_r.extent(1);
    if (k < 1 || k > m) throw ConfigError("top-K " + std::to_string(k) + " exceeds pathway count " + std::to_string(m));
    std::vector<double> logits = row_times(x_trans, w_r);
    if (!noise.empty()) {
        if (noise.size() != m) throw DimensionError("route: noise length does not match pathway count");
        const std::vector<double> scale = row_times(x_trans, w_noise);
        for (std::size_t j = 0; j < m; ++j) logits[j] += noise[j] * softplus(scale[j]);
    }
    const Tensor dense = nx::softmax(Tensor::vector(logits), 0);
    PathwayWeights w;
    w.dense.assign(dense.data().begin(), dense.data().end());
    auto sel = topk_sparsify(w.dense, k);
    w.sparse = std::move(sel.sparse);
    w.mask = std::move(sel.mask);
    return w;
}

void RouterConfig::validate() const {
    if (features < 1) throw ConfigError("router needs at least one input feature");
    if (paths < 1) throw ConfigError("router needs at least one pathway");
    if (top_k < 1 || top_k > paths) {
        throw ConfigError("top_k must be in [1, " + std::to_string(paths) + "], got " + std::to_string(top_k));
    }
}

Router::Router(std::string prefix, RouterConfig config) : prefix_(std::move(prefix)), config_(config) {
    config_.validate();
}

void Router::init_parameters(ParameterStore& store) const {
    store.add(prefix_ + "w_r", Tensor({config_.features, config_.paths}));
    store.add(prefix_ + "w_noise", Tensor({config_.features, config_.paths}));
}

std::vector<std::string> Router::parameter_names() const { return {prefix_ + "w_noise", prefix_ + "w_r"}; }

RouteVars Router::forward(Var x_trans, const ParameterStore& store, ForwardContext& ctx) const {
    const Tensor& xv = x_trans.value();
    if (xv.size() != config_.features) {
        throw DimensionError("router expects x_trans of length " + std::to_string(config_.features) + ", got " +
                             nx::shape_string(xv.shape()));
    }
    nx::Graph& g = x_trans.graph();
    const Var x = nx::reshape(x_trans, {1, config_.features});
    Var logits = nx::matmul(x, g.parameter(store, prefix_ + "w_r"));
    const bool noisy = config_.noise && ctx.train;
    const std::size_t m = config_.paths;

    auto decide = [&]() {
        RoutingDecision d;
        if (noisy) {
            if (!ctx.rng) throw ContractError("router noise requires an rng in the forward context");
            std::normal_distribution<double> normal(0.0, 1.0);
            d.noise.resize(m);
            for (auto& e : d.noise) e = normal(*ctx.rng);
        }
        return d;
    };
    RoutingDecision* stored = ctx.selections ? &ctx.selections->routing(decide) : nullptr;
    RoutingDecision decision = stored ? *stored : decide();

    if (!decision.noise.empty()) {
        const Var scale = nx::softplus(nx::matmul(x, g.parameter(store, prefix_ + "w_noise")));
        logits = nx::add(logits, nx::mul(g.constant(Tensor({1, m}, decision.noise)), scale));
    }
    const Var dense = nx::reshape(nx::softmax(logits, 1), {m});

    RouteVars out;
    out.dense = dense;
    out.weights.dense.assign(dense.value().data().begin(), dense.value().data().end());
    if (ctx.selections && ctx.selections->replaying()) {
        out.weights.mask = decision.mask;
        out.weights.sparse.assign(m, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            if (out.weights.mask[i]) out.weights.sparse[i] = out.weights.dense[i];
        }
    } else {
        auto sel = topk_sparsify(out.weights.dense, config_.top_k);
        out.weights.sparse = std::move(sel.sparse);
        out.weights.mask = std::move(sel.mask);
        if (stored) stored->mask = out.weights.mask;
    }
    out.noise = std::move(decision.noise);
    return out;
}

}  // namespace pathformer::router
