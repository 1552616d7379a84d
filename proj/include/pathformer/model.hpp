// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pathformer/decomposition.hpp"
#include "pathformer/forward_context.hpp"
#include "pathformer/mst_block.hpp"
#include "pathformer/numerics/graph.hpp"
#include "pathformer/router.hpp"

namespace pathformer::model {

using numerics::ParameterStore;
using numerics::Tensor;
using numerics::Var;

struct AblationFlags {
    bool no_inter = false;
    bool no_intra = false;
    bool no_decompose = false;
    bool no_pathways = false;

    bool any() const { return no_inter || no_intra || no_decompose || no_pathways; }
    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ModelConfig {
    std::size_t input_length = 96;  // H
    std::size_t pred_length = 96;   // F
    std::size_t channels = 1;       // C
    std::size_t num_blocks = 3;
    std::vector<std::size_t> pool{2, 3, 6, 12, 16, 24, 32};
    // Patch sizes of each block; empty selects the coarse-to-fine default.
    std::vector<std::vector<std::size_t>> block_patch_sizes;
    std::size_t scales_per_block = 4;
    std::size_t top_k = 2;
    std::size_t d_model = 16;
    decomposition::DecompositionConfig decomposition;
    AblationFlags ablation;
    bool revin_affine = false;
    bool router_noise = true;
    bool residual = true;
    bool ffn = false;
    std::size_t ffn_hidden = 0;
    bool learned_align = false;
    std::size_t predictor_hidden = 0;  // 0: single linear map

    // Resolved per-block patch sizes (fills the default assignment).
    std::vector<std::vector<std::size_t>> patch_sizes() const;
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Default assignment for the seven-size pool: coarse-to-fine over three blocks.
std::vector<std::vector<std::size_t>> default_block_patch_sizes();

/// Per-block AMS configurations implied by a model config and its ablation flags.
std::vector<mst::AmsBlockConfig> apply_ablation(const ModelConfig& config);

struct NormState {
    std::vector<double> mean;
    std::vector<double> stdev;
};

inline constexpr double kNormEpsilon = 1e-5;

// Per-channel window standardisation; std is floored at kNormEpsilon.
std::pair<Tensor, NormState> instance_normalize(const Tensor& x);
// Inverse of instance_normalize with the affine transform off.
Tensor denormalize(const Tensor& y, const NormState& state);

// h: flattened [H*d_m]; weight [H*d_m, F]; bias [F].
Var predictor(Var h, Var weight, Var bias);

struct Forecast {
    Tensor values;  // [F, C]
    // pathway_trace[block][channel]
    std::vector<std::vector<router::PathwayWeights>> pathway_trace;
};

/// Instance norm -> stacked AMS blocks -> linear predictor, applied to each
/// channel independently with parameters shared across channels.
class PathformerModel {
public:
    PathformerModel(ModelConfig config, std::uint64_t seed);
    // Adopts existing parameters; names and shapes must match the architecture.
    PathformerModel(ModelConfig config, ParameterStore parameters);

    PathformerModel(const PathformerModel& other);
    PathformerModel& operator=(const PathformerModel&) = delete;

    const ModelConfig& config() const { return config_; }
    const ParameterStore& parameters() const { return params_; }
    ParameterStore& parameters() { return params_; }
    const std::vector<mst::AmsBlock>& blocks() const { return blocks_; }

    struct ChannelPass {
        Var prediction;  // [F], original scale of the input series
        std::vector<router::RouteVars> routes;
        std::vector<Var> block_outputs;
    };
    // One channel through the network on `g`. `series` has length H.
    ChannelPass forward_channel(numerics::Graph& g, std::span<const double> series, std::size_t channel,
                                ForwardContext& ctx) const;

    Forecast forward(const Tensor& x, ForwardContext& ctx) const;
    Forecast forward(const Tensor& x) const;

    // Parameter names grouped by role.
    std::vector<std::string> router_parameter_names() const;      // gate + decomposition maps
    std::vector<std::string> predictor_parameter_names() const;
    std::vector<std::string> attention_parameter_names() const;    // everything inside the scale branches

private:
    void build();

    ModelConfig config_;
    std::vector<mst::AmsBlock> blocks_;
    ParameterStore params_;
};

}  // namespace pathformer::model
