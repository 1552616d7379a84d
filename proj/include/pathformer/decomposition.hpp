// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pathformer/forward_context.hpp"
#include "pathformer/numerics/graph.hpp"
#include "pathformer/numerics/tensor.hpp"

// Seasonal/trend front-end of the multi-scale router.
//
// Seasonality keeps the k_f strongest DFT bins of each feature column (the
// DC bin is kept in addition when `keep_dc` is set) and inverse-transforms
// them; the remainder is x - x_sea. Trend is a softmax-weighted mixture of
// moving averages of the remainder, one scalar weight per kernel. The merged
// routing feature is a learned temporal map (H -> 1, shared across features)
// over x + x_sea + x_trend.
namespace pathformer::decomposition {

using numerics::ParameterStore;
using numerics::Tensor;
using numerics::Var;

struct DecompositionConfig {
    std::size_t k_f = 5;
    std::vector<std::size_t> kernels{4, 8, 12};
    bool keep_dc = true;

    void validate(std::size_t length) const;

    friend bool operator==(const DecompositionConfig&, const DecompositionConfig&) = default;
};

/// Kept-bin mask of one column. Ties in amplitude resolve to the lower bin.
std::vector<bool> select_frequencies(std::span<const double> column, std::size_t k_f, bool keep_dc);
FrequencySelection select_frequencies(const Tensor& x, std::size_t k_f, bool keep_dc);

struct SeasonalSplit {
    Var x_sea;
    Var x_rem;
};

// x: [H, d]. The bin selection is an index choice and carries no gradient;
// gradients flow through the kept coefficients.
SeasonalSplit seasonality_decompose(Var x, const FrequencySelection& selection);
SeasonalSplit seasonality_decompose(Var x, std::size_t k_f, bool keep_dc = true);

// Mixing weights = softmax(x_rem.flatten() * mix_w + mix_b), shape [1, N].
Var trend_decompose(Var x_rem, std::span<const std::size_t> kernels, Var mix_w, Var mix_b,
                    Var* weights_out = nullptr);

// Collapses the temporal axis of `combined` [H, d] with merge_w [H, 1], merge_b [1] -> [d].
Var merge_transform(Var combined, Var merge_w, Var merge_b);
Var merge_transform(Var x, Var x_sea, Var x_trend, Var merge_w, Var merge_b);

struct DecompositionVars {
    Var x_sea, x_rem, x_trend;  // unset when decomposition is disabled
    Var kernel_weights;
    Var x_trans;
};

struct DecompositionResult {
    Tensor x_sea, x_rem, x_trend, x_trans;
};

/// Parameters and forward pass of the decomposition for a fixed (H, d).
class Decomposer {
public:
    Decomposer(std::string prefix, std::size_t length, std::size_t features, DecompositionConfig config,
               bool enabled = true);

    void init_parameters(ParameterStore& store, Rng& rng) const;
    std::vector<std::string> parameter_names() const;

    // With decomposition disabled, x_trans = merge(x) and the other outputs are unset.
    DecompositionVars forward(Var x, const ParameterStore& store, ForwardContext& ctx) const;
    DecompositionResult evaluate(const Tensor& x, const ParameterStore& store) const;

    const DecompositionConfig& config() const { return config_; }
    bool enabled() const { return enabled_; }

private:
    std::string name(const char* leaf) const { return prefix_ + leaf; }

    std::string prefix_;
    std::size_t length_;
    std::size_t features_;
    DecompositionConfig config_;
    bool enabled_;
};

}  // namespace pathformer::decomposition
