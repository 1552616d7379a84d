// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pathformer/decomposition.hpp"
#include "pathformer/forward_context.hpp"
#include "pathformer/numerics/graph.hpp"
#include "pathformer/router.hpp"

// One Adaptive Multi-Scale block: per patch size, divide the series into
// patches, run intra-patch cross-attention against a learned query and
// inter-patch self-attention over flattened patches, fuse both, and
// aggregate the selected scales with the router's dense weights.
namespace pathformer::mst {

using numerics::ParameterStore;
using numerics::Shape;
using numerics::Tensor;
using numerics::Var;

/// Patch geometry of one scale. Series whose length is not a multiple of the
/// patch size are front-padded by replicating the first row.
struct ScaleSpec {
    std::size_t patch_size = 1;
    std::size_t patch_count = 1;
    std::size_t pad_len = 0;

    static ScaleSpec make(std::size_t length, std::size_t patch_size);
};

Tensor patch_divide(const Tensor& x, std::size_t patch_size);         // [H,d] -> [P,S,d]
Tensor patch_undivide(const Tensor& patches, std::size_t length);     // [P,S,d] -> [H,d]
Var patch_divide(Var x, const ScaleSpec& spec);
Var patch_undivide(Var patches, std::size_t length);

struct AttentionOutput {
    Var out;
    Var weights;  // attention probabilities; rows sum to one
};

// Key projections carry no bias: a key bias shifts every score of a softmax
// row by the same amount and so never changes the output.

// patches: embedded [P,S,d_m]; query [1,d_m]. Output [P,d_m], weights [P,1,S].
AttentionOutput intra_patch_attention(Var patches, Var query, Var key_w, Var value_w, Var value_b);
// patches: embedded [P,S,d_m], attended as P tokens of width S*d_m. Output [P,S*d_m], weights [P,P].
AttentionOutput inter_patch_attention(Var patches, Var query_w, Var query_b, Var key_w, Var value_w, Var value_b);
// Expands intra [P,d_m] along the patch-length axis with expand_w [1,S], expand_b [S]
// and adds inter [P,S*d_m] reshaped to [P,S,d_m]. Either branch may be unset.
Var dual_fuse(Var intra, Var inter, Var expand_w, Var expand_b, std::size_t patch_size, std::size_t d_model);

// Eq.-7 style aggregation: sum over masked-in i of dense[i] * outputs[i].
Var aggregate_scales(std::span<const Var> outputs, Var dense, const std::vector<bool>& mask);

struct AmsBlockConfig {
    std::size_t length = 96;      // H
    std::size_t in_features = 1;  // d
    std::size_t d_model = 16;
    std::vector<std::size_t> patch_sizes{12, 16, 24, 32};
    std::size_t top_k = 2;
    decomposition::DecompositionConfig decomposition;
    bool use_intra = true;
    bool use_inter = true;
    bool decompose = true;
    bool pathways = true;  // false: every scale runs, weights are the dense softmax
    bool router_noise = true;
    bool residual = true;
    bool ffn = false;
    std::size_t ffn_hidden = 0;  // 0 -> 2 * d_model
    bool learned_align = false;

    void validate() const;
};

/// One scale's divide -> embed -> dual attention -> fuse -> undivide pipeline.
class ScaleBranch {
public:
    ScaleBranch(std::string prefix, const AmsBlockConfig& block, std::size_t patch_size);

    void init_parameters(ParameterStore& store, Rng& rng) const;
    std::vector<std::string> parameter_names() const;

    struct Trace {
        Var output;  // [H, d_model], after T_i
        Var intra_weights, inter_weights;
    };
    Trace forward(Var x, const ParameterStore& store) const;

    const ScaleSpec& spec() const { return spec_; }

private:
    std::string name(const char* leaf) const { return prefix_ + leaf; }

    std::string prefix_;
    const AmsBlockConfig* block_;
    ScaleSpec spec_;
};

struct AmsOutput {
    Var out;  // [H, d_model]
    router::RouteVars routing;
    decomposition::DecompositionVars decomposition;
    std::vector<Var> scale_outputs;  // unset for skipped scales
};

class AmsBlock {
public:
    AmsBlock(std::string prefix, AmsBlockConfig config);
    AmsBlock(const AmsBlock&) = delete;
    AmsBlock& operator=(const AmsBlock&) = delete;
    AmsBlock(AmsBlock&&) = default;

    void init_parameters(ParameterStore& store, Rng& rng) const;
    std::vector<std::string> parameter_names() const;

    AmsOutput forward(Var x, const ParameterStore& store, ForwardContext& ctx) const;

    const AmsBlockConfig& config() const { return *config_; }
    const ScaleBranch& branch(std::size_t i) const { return branches_.at(i); }
    std::size_t scale_count() const { return branches_.size(); }
    const router::Router& gate() const { return router_; }
    const decomposition::Decomposer& decomposer() const { return decomposer_; }

private:
    std::string prefix_;
    std::unique_ptr<AmsBlockConfig> config_;  // stable address for the branches
    decomposition::Decomposer decomposer_;
    router::Router router_;
    std::vector<ScaleBranch> branches_;
};

}  // namespace pathformer::mst
