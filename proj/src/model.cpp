// SPDX-License-Identifier: Apache-2.0
#include "pathformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "pathformer/errors.hpp"
#include "pathformer/init.hpp"
#include "pathformer/numerics/ops.hpp"

namespace pathformer::model {

namespace nx = numerics;

std::vector<std::vector<std::size_t>> default_block_patch_sizes() {
    return {{12, 16, 24, 32}, {6, 12, 16, 24}, {2, 3, 6, 12}};
}

std::vector<std::vector<std::size_t>> ModelConfig::patch_sizes() const {
    if (!block_patch_sizes.empty()) return block_patch_sizes;
    auto table = default_block_patch_sizes();
    if (num_blocks > table.size()) {
        throw ConfigError("block_patch_sizes must be given explicitly for more than " + std::to_string(table.size()) +
                          " blocks");
    }
    table.resize(num_blocks);
    return table;
}

void ModelConfig::validate() const {
    if (input_length < 2) throw ConfigError("input_length must be >= 2");
    if (pred_length < 1) throw ConfigError("pred_length must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
    if (d_model < 1) throw ConfigError("d_model must be >= 1");
    if (pool.empty()) throw ConfigError("patch-size pool must not be empty");
    if (ablation.no_inter && ablation.no_intra) {
        throw ConfigError("ablations no_inter and no_intra cannot be combined");
    }
    const auto sizes = patch_sizes();
    if (sizes.size() != num_blocks) {
        throw ConfigError("block_patch_sizes lists " + std::to_string(sizes.size()) + " blocks, num_blocks is " +
                          std::to_string(num_blocks));
    }
    const std::set<std::size_t> pool_set(pool.begin(), pool.end());
    for (std::size_t b = 0; b < sizes.size(); ++b) {
        if (sizes[b].size() != scales_per_block) {
            throw ConfigError("block " + std::to_string(b) + " has " + std::to_string(sizes[b].size()) +
                              " patch sizes, scales_per_block is " + std::to_string(scales_per_block));
        }
        for (auto s : sizes[b]) {
            if (!pool_set.count(s)) {
                throw ConfigError("patch size " + std::to_string(s) + " of block " + std::to_string(b) +
                                  " is not in the pool");
            }
        }
    }
    if (top_k < 1 || top_k > scales_per_block) {
        throw ConfigError("top_k must be in [1, scales_per_block=" + std::to_string(scales_per_block) + "], got " +
                          std::to_string(top_k));
    }
    decomposition.validate(input_length);
}

std::vector<mst::AmsBlockConfig> apply_ablation(const ModelConfig& config) {
    config.validate();
    std::vector<mst::AmsBlockConfig> blocks;
    const auto sizes = config.patch_sizes();
    for (std::size_t b = 0; b < config.num_blocks; ++b) {
        mst::AmsBlockConfig c;
        c.length = config.input_length;
        c.in_features = b == 0 ? 1 : config.d_model;
        c.d_model = config.d_model;
        c.patch_sizes = sizes[b];
        c.top_k = config.top_k;
        c.decomposition = config.decomposition;
        c.use_inter = !config.ablation.no_inter;
        c.use_intra = !config.ablation.no_intra;
        c.decompose = !config.ablation.no_decompose;
        c.pathways = !config.ablation.no_pathways;
        c.router_noise = config.router_noise;
        c.residual = config.residual;
        c.ffn = config.ffn;
        c.ffn_hidden = config.ffn_hidden;
        c.learned_align = config.learned_align;
        c.validate();
        blocks.push_back(std::move(c));
    }
    return blocks;
}

namespace {

void channel_stats(std::span<const double> column, double& mean, double& stdev) {
    mean = 0.0;
    for (double v : column) mean += v;
    mean /= static_cast<double>(column.size());
    // A constant column's rounded sum can miss the value itself; use it directly.
    if (std::all_of(column.begin(), column.end(), [&](double v) { return v == column[0]; })) mean = column[0];
    double var = 0.0;
    for (double v : column) var += (v - mean) * (v - mean);
    var /= static_cast<double>(column.size());
    stdev = std::max(std::sqrt(var), kNormEpsilon);
}

}  // namespace

std::pair<Tensor, NormState> instance_normalize(const Tensor& x) {
    if (x.rank() != 2) throw DimensionError("instance_normalize: expected [H, C], got " + nx::shape_string(x.shape()));
    const std::size_t h = x.extent(0), c = x.extent(1);
    if (h < 2) throw ConfigError("instance_normalize: window length must be >= 2");
    NormState state{std::vector<double>(c), std::vector<double>(c)};
    Tensor out(x.shape());
    std::vector<double> column(h);
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t t = 0; t < h; ++t) column[t] = x.at(t, j);
        channel_stats(column, state.mean[j], state.stdev[j]);
        for (std::size_t t = 0; t < h; ++t) out.at(t, j) = (x.at(t, j) - state.mean[j]) / state.stdev[j];
    }
    return {std::move(out), std::move(state)};
}

Tensor denormalize(const Tensor& y, const NormState& state) {
    if (y.rank() != 2 || y.extent(1) != state.mean.size() || state.stdev.size() != state.mean.size()) {
        throw DimensionError("denormalize: prediction " + nx::shape_string(y.shape()) + " vs " +
                             std::to_string(state.mean.size()) + " normalised channels");
    }
    Tensor out(y.shape());
    for (std::size_t t = 0; t < y.extent(0); ++t) {
        for (std::size_t j = 0; j < y.extent(1); ++j) out.at(t, j) = y.at(t, j) * state.stdev[j] + state.mean[j];
    }
    return out;
}

Var predictor(Var h, Var weight, Var bias) {
    const Tensor& hv = h.value();
    if (weight.value().rank() != 2 || weight.value().extent(0) != hv.size()) {
        throw DimensionError("predictor: input of " + std::to_string(hv.size()) + " values vs weight " +
                             nx::shape_string(weight.value().shape()));
    }
    const Var out = nx::linear(nx::reshape(h, {1, hv.size()}), weight, bias);
    return nx::reshape(out, {weight.value().extent(1)});
}

PathformerModel::PathformerModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    build();
    Rng rng(seed);
    for (const auto& block : blocks_) block.init_parameters(params_, rng);
    const std::size_t flat = config_.input_length * config_.d_model;
    std::size_t head_in = flat;
    if (config_.predictor_hidden > 0) {
        params_.add("predictor.hidden.weight", init::uniform_fan_in({flat, config_.predictor_hidden}, flat, rng));
        params_.add("predictor.hidden.bias", init::uniform_fan_in({config_.predictor_hidden}, flat, rng));
        head_in = config_.predictor_hidden;
    }
    params_.add("predictor.weight", init::uniform_fan_in({head_in, config_.pred_length}, head_in, rng));
    params_.add("predictor.bias", init::uniform_fan_in({config_.pred_length}, head_in, rng));
    if (config_.revin_affine) {
        params_.add("revin.weight", Tensor({config_.channels}, 1.0));
        params_.add("revin.bias", Tensor({config_.channels}, 0.0));
    }
}

PathformerModel::PathformerModel(ModelConfig config, ParameterStore parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
    build();
    PathformerModel reference(config_, 0);
    std::vector<std::string> problems;
    for (const auto& [name, t] : reference.params_) {
        if (!params_.contains(name)) {
            problems.push_back("missing " + name);
        } else if (params_.get(name).shape() != t.shape()) {
            problems.push_back(name + " has shape " + nx::shape_string(params_.get(name).shape()) + ", expected " +
                               nx::shape_string(t.shape()));
        }
    }
    for (const auto& [name, _] : params_) {
        if (!reference.params_.contains(name)) problems.push_back("unexpected " + name);
    }
    if (!problems.empty()) {
        std::string msg = "parameters do not match the model architecture:";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ContractError(msg);
    }
}

PathformerModel::PathformerModel(const PathformerModel& other) : config_(other.config_), params_(other.params_) {
    build();
}

void PathformerModel::build() {
    const auto configs = apply_ablation(config_);
    blocks_.clear();
    for (std::size_t b = 0; b < configs.size(); ++b) {
        blocks_.emplace_back("block" + std::to_string(b) + ".", configs[b]);
    }
}

PathformerModel::ChannelPass PathformerModel::forward_channel(nx::Graph& g, std::span<const double> series,
                                                              std::size_t channel, ForwardContext& ctx) const {
    const std::size_t h = config_.input_length;
    if (series.size() != h) {
        throw DimensionError("forward_channel: series of length " + std::to_string(series.size()) +
                             ", model input length is " + std::to_string(h));
    }
    if (channel >= config_.channels) {
        throw ContractError("channel " + std::to_string(channel) + " out of range for a " +
                            std::to_string(config_.channels) + "-channel model");
    }
    double mean = 0.0, stdev = 1.0;
    channel_stats(series, mean, stdev);
    Tensor normed({h, 1});
    for (std::size_t t = 0; t < h; ++t) normed[t] = (series[t] - mean) / stdev;

    Var x = g.constant(std::move(normed));
    Var affine_w, affine_b;
    if (config_.revin_affine) {
        affine_w = nx::pick(g.parameter(params_, "revin.weight"), channel);
        affine_b = nx::reshape(nx::pick(g.parameter(params_, "revin.bias"), channel), {1});
        x = nx::add_bias(nx::mul_scalar(x, affine_w), affine_b);
    }

    ChannelPass pass;
    for (const auto& block : blocks_) {
        mst::AmsOutput out = block.forward(x, params_, ctx);
        x = out.out;
        pass.block_outputs.push_back(x);
        pass.routes.push_back(std::move(out.routing));
    }

    Var flat = nx::reshape(x, {x.value().size()});
    if (config_.predictor_hidden > 0) {
        flat = nx::gelu(predictor(flat, g.parameter(params_, "predictor.hidden.weight"),
                                  g.parameter(params_, "predictor.hidden.bias")));
    }
    Var y = predictor(flat, g.parameter(params_, "predictor.weight"), g.parameter(params_, "predictor.bias"));

    const std::size_t f = config_.pred_length;
    if (config_.revin_affine) {
        y = nx::add_bias(nx::reshape(y, {f, 1}), nx::scale(affine_b, -1.0));
        y = nx::mul_scalar(nx::reshape(y, {f}), nx::reciprocal(nx::add(affine_w, g.constant(Tensor::scalar(1e-10)))));
    }
    y = nx::add(nx::scale(y, stdev), g.constant(Tensor({f}, mean)));
    pass.prediction = y;
    return pass;
}

Forecast PathformerModel::forward(const Tensor& x, ForwardContext& ctx) const {
    if (x.rank() != 2 || x.extent(0) != config_.input_length || x.extent(1) != config_.channels) {
        throw ContractError("forward: input " + nx::shape_string(x.shape()) + " does not match the configured [" +
                            std::to_string(config_.input_length) + "," + std::to_string(config_.channels) + "]");
    }
    const std::size_t h = config_.input_length, c = config_.channels, f = config_.pred_length;
    Forecast out;
    out.values = Tensor({f, c});
    out.pathway_trace.assign(blocks_.size(), std::vector<router::PathwayWeights>(c));
    std::vector<double> column(h);
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t t = 0; t < h; ++t) column[t] = x.at(t, j);
        nx::Graph g;
        ChannelPass pass = forward_channel(g, column, j, ctx);
        const Tensor& pred = pass.prediction.value();
        for (std::size_t t = 0; t < f; ++t) out.values.at(t, j) = pred[t];
        for (std::size_t b = 0; b < blocks_.size(); ++b) out.pathway_trace[b][j] = pass.routes[b].weights;
    }
    return out;
}

Forecast PathformerModel::forward(const Tensor& x) const {
    ForwardContext ctx;
    return forward(x, ctx);
}

namespace {
bool contains(const std::string& s, const char* part) { return s.find(part) != std::string::npos; }
}  // namespace

std::vector<std::string> PathformerModel::router_parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) {
        if (contains(name, ".router.") || contains(name, ".decomp.")) out.push_back(name);
    }
    return out;
}

std::vector<std::string> PathformerModel::predictor_parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) {
        if (name.rfind("predictor.", 0) == 0) out.push_back(name);
    }
    return out;
}

std::vector<std::string> PathformerModel::attention_parameter_names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) {
        if (name.rfind("block", 0) == 0 && !contains(name, ".router.") && !contains(name, ".decomp.")) {
            out.push_back(name);
        }
    }
    return out;
}

}  // namespace pathformer::model
