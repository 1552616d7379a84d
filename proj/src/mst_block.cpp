// SPDX-License-Identifier: Apache-2.0
#include "pathformer/mst_block.hpp"

#include <cmath>
#include <set>

#include "pathformer/errors.hpp"
#include "pathformer/init.hpp"
#include "pathformer/numerics/ops.hpp"

namespace pathformer::mst {

namespace nx = numerics;

ScaleSpec ScaleSpec::make(std::size_t length, std::size_t patch_size) {
    if (patch_size < 1) throw ConfigError("patch size must be >= 1");
    if (patch_size > length) {
        throw ConfigError("patch size " + std::to_string(patch_size) + " exceeds series length " + std::to_string(length));
    }
    ScaleSpec s;
    s.patch_size = patch_size;
    s.patch_count = (length + patch_size - 1) / patch_size;
    s.pad_len = s.patch_count * patch_size - length;
    return s;
}

namespace {

std::shared_ptr<std::vector<std::size_t>> divide_index(std::size_t length, std::size_t d, const ScaleSpec& spec) {
    const std::size_t rows = spec.patch_count * spec.patch_size;
    auto index = std::make_shared<std::vector<std::size_t>>(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t src = r < spec.pad_len ? 0 : r - spec.pad_len;
        for (std::size_t c = 0; c < d; ++c) (*index)[r * d + c] = src * d + c;
    }
    (void)length;
    return index;
}

std::shared_ptr<std::vector<std::size_t>> undivide_index(std::size_t rows, std::size_t length, std::size_t d) {
    const std::size_t pad = rows - length;
    auto index = std::make_shared<std::vector<std::size_t>>(length * d);
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t c = 0; c < d; ++c) (*index)[t * d + c] = (t + pad) * d + c;
    }
    return index;
}

void expect_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                             nx::shape_string(t.shape()));
    }
}

}  // namespace

Tensor patch_divide(const Tensor& x, std::size_t patch_size) {
    expect_rank(x, 2, "patch_divide");
    const ScaleSpec spec = ScaleSpec::make(x.extent(0), patch_size);
    const std::size_t d = x.extent(1);
    const auto index = divide_index(x.extent(0), d, spec);
    Tensor out({spec.patch_count, spec.patch_size, d});
    for (std::size_t i = 0; i < index->size(); ++i) out[i] = x[(*index)[i]];
    return out;
}

Tensor patch_undivide(const Tensor& patches, std::size_t length) {
    expect_rank(patches, 3, "patch_undivide");
    const std::size_t rows = patches.extent(0) * patches.extent(1), d = patches.extent(2);
    if (length > rows) throw DimensionError("patch_undivide: length exceeds the patched extent");
    const auto index = undivide_index(rows, length, d);
    Tensor out({length, d});
    for (std::size_t i = 0; i < index->size(); ++i) out[i] = patches[(*index)[i]];
    return out;
}

Var patch_divide(Var x, const ScaleSpec& spec) {
    const Tensor& xv = x.value();
    expect_rank(xv, 2, "patch_divide");
    const std::size_t h = xv.extent(0), d = xv.extent(1);
    if (spec.patch_count * spec.patch_size != h + spec.pad_len || spec.pad_len >= spec.patch_size) {
        throw DimensionError("patch_divide: scale spec does not match series length " + std::to_string(h));
    }
    return nx::gather(x, divide_index(h, d, spec), {spec.patch_count, spec.patch_size, d});
}

Var patch_undivide(Var patches, std::size_t length) {
    const Tensor& pv = patches.value();
    expect_rank(pv, 3, "patch_undivide");
    const std::size_t rows = pv.extent(0) * pv.extent(1), d = pv.extent(2);
    if (length > rows) throw DimensionError("patch_undivide: length exceeds the patched extent");
    return nx::gather(patches, undivide_index(rows, length, d), {length, d});
}

AttentionOutput intra_patch_attention(Var patches, Var query, Var key_w, Var value_w, Var value_b) {
    const Tensor& pv = patches.value();
    expect_rank(pv, 3, "intra_patch_attention");
    const std::size_t p = pv.extent(0), s = pv.extent(1), dm = pv.extent(2);
    if (query.value().shape() != Shape{1, dm}) {
        throw DimensionError("intra_patch_attention: query " + nx::shape_string(query.value().shape()) +
                             " does not match patches " + nx::shape_string(pv.shape()));
    }
    const Var keys = nx::matmul(patches, key_w);
    const Var values = nx::linear(patches, value_w, value_b);
    const Var scores = nx::scale(nx::matmul(keys, nx::transpose(query)), 1.0 / std::sqrt(static_cast<double>(dm)));
    const Var weights = nx::softmax(nx::reshape(scores, {p, 1, s}), 2);
    const Var out = nx::reshape(nx::matmul(weights, values), {p, dm});
    return {out, weights};
}

AttentionOutput inter_patch_attention(Var patches, Var query_w, Var query_b, Var key_w, Var value_w, Var value_b) {
    const Tensor& pv = patches.value();
    expect_rank(pv, 3, "inter_patch_attention");
    const std::size_t p = pv.extent(0), width = pv.extent(1) * pv.extent(2);
    const Var tokens = nx::reshape(patches, {p, width});
    const Var q = nx::linear(tokens, query_w, query_b);
    const Var k = nx::matmul(tokens, key_w);
    const Var v = nx::linear(tokens, value_w, value_b);
    const Var scores = nx::scale(nx::matmul(q, nx::transpose(k)), 1.0 / std::sqrt(static_cast<double>(width)));
    const Var weights = nx::softmax(scores, 1);
    return {nx::matmul(weights, v), weights};
}

Var dual_fuse(Var intra, Var inter, Var expand_w, Var expand_b, std::size_t patch_size, std::size_t d_model) {
    Var expanded;
    if (intra.valid()) {
        const Tensor& iv = intra.value();
        if (iv.rank() != 2 || iv.extent(1) != d_model) {
            throw DimensionError("dual_fuse: intra output " + nx::shape_string(iv.shape()) + " does not have width " +
                                 std::to_string(d_model));
        }
        const std::size_t p = iv.extent(0);
        // [P*d_m, 1] -> [P*d_m, S], then reorder to [P, S, d_m].
        const Var lifted = nx::linear(nx::reshape(intra, {p * d_model, 1}), expand_w, expand_b);
        auto index = std::make_shared<std::vector<std::size_t>>(p * patch_size * d_model);
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t s = 0; s < patch_size; ++s) {
                for (std::size_t c = 0; c < d_model; ++c) {
                    (*index)[(i * patch_size + s) * d_model + c] = (i * d_model + c) * patch_size + s;
                }
            }
        }
        expanded = nx::gather(lifted, std::move(index), {p, patch_size, d_model});
    }
    Var reshaped;
    if (inter.valid()) {
        const Tensor& tv = inter.value();
        if (tv.rank() != 2 || tv.extent(1) != patch_size * d_model) {
            throw DimensionError("dual_fuse: inter output " + nx::shape_string(tv.shape()) + " does not have width " +
                                 std::to_string(patch_size * d_model));
        }
        reshaped = nx::reshape(inter, {tv.extent(0), patch_size, d_model});
    }
    if (expanded.valid() && reshaped.valid()) {
        if (expanded.value().shape() != reshaped.value().shape()) {
            throw DimensionError("dual_fuse: intra and inter patch counts differ");
        }
        return nx::add(expanded, reshaped);
    }
    if (expanded.valid()) return expanded;
    if (reshaped.valid()) return reshaped;
    throw ContractError("dual_fuse: both attention branches are disabled");
}

Var aggregate_scales(std::span<const Var> outputs, Var dense, const std::vector<bool>& mask) {
    if (outputs.size() != mask.size() || dense.value().size() != mask.size()) {
        throw DimensionError("aggregate_scales: " + std::to_string(outputs.size()) + " outputs, " +
                             std::to_string(mask.size()) + " mask entries, " + std::to_string(dense.value().size()) +
                             " weights");
    }
    Var total;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        if (!mask[i]) continue;
        const Var term = nx::mul_scalar(outputs[i], nx::pick(dense, i));
        total = total.valid() ? nx::add(total, term) : term;
    }
    if (!total.valid()) throw ContractError("aggregate_scales: no pathway selected");
    return total;
}

void AmsBlockConfig::validate() const {
    if (length < 2) throw ConfigError("AMS block needs an input length >= 2");
    if (in_features < 1 || d_model < 1) throw ConfigError("AMS block needs positive feature and model widths");
    if (patch_sizes.empty()) throw ConfigError("AMS block needs at least one patch size");
    std::set<std::size_t> unique(patch_sizes.begin(), patch_sizes.end());
    if (unique.size() != patch_sizes.size()) throw ConfigError("AMS block patch sizes must be distinct");
    for (auto s : patch_sizes) (void)ScaleSpec::make(length, s);
    if (top_k < 1 || top_k > patch_sizes.size()) {
        throw ConfigError("top_k must be in [1, " + std::to_string(patch_sizes.size()) + "], got " + std::to_string(top_k));
    }
    if (!use_intra && !use_inter) throw ConfigError("intra- and inter-patch attention cannot both be disabled");
    decomposition.validate(length);
}

ScaleBranch::ScaleBranch(std::string prefix, const AmsBlockConfig& block, std::size_t patch_size)
    : prefix_(std::move(prefix)), block_(&block), spec_(ScaleSpec::make(block.length, patch_size)) {}

std::vector<std::string> ScaleBranch::parameter_names() const {
    std::vector<std::string> names{name("embed.weight"), name("embed.bias")};
    if (block_->use_intra) {
        for (const char* leaf : {"intra.query", "intra.key.weight", "intra.value.weight",
                                 "intra.value.bias", "expand.weight", "expand.bias"}) {
            names.push_back(name(leaf));
        }
    }
    if (block_->use_inter) {
        for (const char* leaf : {"inter.query.weight", "inter.query.bias", "inter.key.weight",
                                 "inter.value.weight", "inter.value.bias"}) {
            names.push_back(name(leaf));
        }
    }
    if (block_->ffn) {
        for (const char* leaf : {"ffn.in.weight", "ffn.in.bias", "ffn.out.weight", "ffn.out.bias"}) {
            names.push_back(name(leaf));
        }
    }
    if (block_->learned_align) {
        names.push_back(name("align.weight"));
        names.push_back(name("align.bias"));
    }
    return names;
}

void ScaleBranch::init_parameters(ParameterStore& store, Rng& rng) const {
    const std::size_t d = block_->in_features, dm = block_->d_model, s = spec_.patch_size, wide = s * dm;
    auto dense = [&](const char* w, const char* b, std::size_t in, std::size_t out) {
        store.add(name(w), init::uniform_fan_in({in, out}, in, rng));
        store.add(name(b), init::uniform_fan_in({out}, in, rng));
    };
    dense("embed.weight", "embed.bias", d, dm);
    if (block_->use_intra) {
        store.add(name("intra.query"), init::uniform_fan_in({1, dm}, dm, rng));
        store.add(name("intra.key.weight"), init::uniform_fan_in({dm, dm}, dm, rng));
        dense("intra.value.weight", "intra.value.bias", dm, dm);
        dense("expand.weight", "expand.bias", 1, s);
    }
    if (block_->use_inter) {
        dense("inter.query.weight", "inter.query.bias", wide, wide);
        store.add(name("inter.key.weight"), init::uniform_fan_in({wide, wide}, wide, rng));
        dense("inter.value.weight", "inter.value.bias", wide, wide);
    }
    if (block_->ffn) {
        const std::size_t hidden = block_->ffn_hidden ? block_->ffn_hidden : 2 * dm;
        dense("ffn.in.weight", "ffn.in.bias", dm, hidden);
        dense("ffn.out.weight", "ffn.out.bias", hidden, dm);
    }
    if (block_->learned_align) {
        const std::size_t h = block_->length;
        dense("align.weight", "align.bias", h, h);
    }
}

ScaleBranch::Trace ScaleBranch::forward(Var x, const ParameterStore& store) const {
    nx::Graph& g = x.graph();
    auto p = [&](const char* leaf) { return g.parameter(store, name(leaf)); };
    const std::size_t dm = block_->d_model;

    const Var patches = patch_divide(x, spec_);
    const Var embedded = nx::linear(patches, p("embed.weight"), p("embed.bias"));  // [P,S,d_m]

    Trace trace;
    Var intra, inter, expand_w, expand_b;
    if (block_->use_intra) {
        const AttentionOutput a = intra_patch_attention(embedded, p("intra.query"), p("intra.key.weight"),
                                                        p("intra.value.weight"), p("intra.value.bias"));
        intra = a.out;
        trace.intra_weights = a.weights;
        expand_w = p("expand.weight");
        expand_b = p("expand.bias");
    }
    if (block_->use_inter) {
        const AttentionOutput a =
            inter_patch_attention(embedded, p("inter.query.weight"), p("inter.query.bias"), p("inter.key.weight"),
                                  p("inter.value.weight"), p("inter.value.bias"));
        inter = a.out;
        trace.inter_weights = a.weights;
    }
    Var fused = dual_fuse(intra, inter, expand_w, expand_b, spec_.patch_size, dm);
    if (block_->residual) fused = nx::add(embedded, fused);

    Var out = patch_undivide(fused, block_->length);  // [H, d_m]
    if (block_->ffn) {
        const Var hidden = nx::gelu(nx::linear(out, p("ffn.in.weight"), p("ffn.in.bias")));
        out = nx::add(out, nx::linear(hidden, p("ffn.out.weight"), p("ffn.out.bias")));
    }
    if (block_->learned_align) {
        out = nx::transpose(nx::linear(nx::transpose(out), p("align.weight"), p("align.bias")));
    }
    trace.output = out;
    return trace;
}

namespace {

router::RouterConfig router_config(const AmsBlockConfig& c) {
    router::RouterConfig r;
    r.features = c.in_features;
    r.paths = c.patch_sizes.size();
    r.top_k = c.pathways ? c.top_k : c.patch_sizes.size();
    r.noise = c.router_noise;
    return r;
}

std::unique_ptr<AmsBlockConfig> validated(AmsBlockConfig c) {
    c.validate();
    return std::make_unique<AmsBlockConfig>(std::move(c));
}

}  // namespace

AmsBlock::AmsBlock(std::string prefix, AmsBlockConfig config)
    : prefix_(std::move(prefix)),
      config_(validated(std::move(config))),
      decomposer_(prefix_ + "decomp.", config_->length, config_->in_features, config_->decomposition,
                  config_->decompose),
      router_(prefix_ + "router.", router_config(*config_)) {
    for (auto s : config_->patch_sizes) {
        branches_.emplace_back(prefix_ + "s" + std::to_string(s) + ".", *config_, s);
    }
}

void AmsBlock::init_parameters(ParameterStore& store, Rng& rng) const {
    decomposer_.init_parameters(store, rng);
    router_.init_parameters(store);
    for (const auto& b : branches_) b.init_parameters(store, rng);
}

std::vector<std::string> AmsBlock::parameter_names() const {
    std::vector<std::string> names = decomposer_.parameter_names();
    for (auto& n : router_.parameter_names()) names.push_back(n);
    for (const auto& b : branches_) {
        for (auto& n : b.parameter_names()) names.push_back(n);
    }
    return names;
}

AmsOutput AmsBlock::forward(Var x, const ParameterStore& store, ForwardContext& ctx) const {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || xv.extent(0) != config_->length || xv.extent(1) != config_->in_features) {
        throw DimensionError("AMS block expects [" + std::to_string(config_->length) + "," +
                             std::to_string(config_->in_features) + "], got " + nx::shape_string(xv.shape()));
    }
    AmsOutput out;
    out.decomposition = decomposer_.forward(x, store, ctx);
    out.routing = router_.forward(out.decomposition.x_trans, store, ctx);
    out.scale_outputs.resize(branches_.size());
    for (std::size_t i = 0; i < branches_.size(); ++i) {
        if (!out.routing.weights.mask[i]) continue;
        out.scale_outputs[i] = branches_[i].forward(x, store).output;
        if (ctx.counters) ++ctx.counters->dual_attention_runs;
    }
    out.out = aggregate_scales(out.scale_outputs, out.routing.dense, out.routing.weights.mask);
    if (ctx.counters) ++ctx.counters->ams_forwards;
    return out;
}

}  // namespace pathformer::mst
