// SPDX-License-Identifier: Apache-2.0
#include "pathformer/decomposition.hpp"

#include <algorithm>
#include <numeric>

#include "pathformer/errors.hpp"
#include "pathformer/init.hpp"
#include "pathformer/numerics/dft.hpp"
#include "pathformer/numerics/ops.hpp"

namespace pathformer::decomposition {

namespace nx = numerics;

void DecompositionConfig::validate(std::size_t length) const {
    const std::size_t bins = nx::spectrum_size(length);
    if (length < 2) throw ConfigError("decomposition needs an input length >= 2");
    if (k_f < 1 || k_f > bins) {
        throw ConfigError("k_f must be in [1, " + std::to_string(bins) + "] for input length " +
                          std::to_string(length) + ", got " + std::to_string(k_f));
    }
    if (kernels.empty()) throw ConfigError("decomposition kernels must not be empty");
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        if (kernels[i] < 1) throw ConfigError("decomposition kernels must be >= 1");
        if (i > 0 && kernels[i] <= kernels[i - 1]) throw ConfigError("decomposition kernels must be strictly increasing");
    }
}

std::vector<bool> select_frequencies(std::span<const double> column, std::size_t k_f, bool keep_dc) {
    const std::size_t bins = nx::spectrum_size(column.size());
    if (k_f < 1 || k_f > bins) {
        throw ConfigError("k_f out of range: " + std::to_string(k_f) + " not in [1, " + std::to_string(bins) + "]");
    }
    const nx::Spectrum spec = nx::rdft(column);
    std::vector<bool> keep(bins, false);
    const std::size_t first = keep_dc ? 1 : 0;
    if (keep_dc) keep[0] = true;
    // Amplitudes within a relative 1e-12 of the current maximum count as tied
    // and resolve to the lowest bin, so rounding noise cannot reorder them.
    const double top = *std::max_element(spec.amplitude.begin(), spec.amplitude.end());
    const double tol = 1e-12 * top;
    const std::size_t take = std::min(k_f, bins - first);
    for (std::size_t n = 0; n < take; ++n) {
        double best = -1.0;
        for (std::size_t b = first; b < bins; ++b) {
            if (!keep[b]) best = std::max(best, spec.amplitude[b]);
        }
        for (std::size_t b = first; b < bins; ++b) {
            if (!keep[b] && spec.amplitude[b] >= best - tol) {
                keep[b] = true;
                break;
            }
        }
    }
    return keep;
}

FrequencySelection select_frequencies(const Tensor& x, std::size_t k_f, bool keep_dc) {
    if (x.rank() != 2) throw DimensionError("select_frequencies: expected [H, d], got " + nx::shape_string(x.shape()));
    const std::size_t h = x.extent(0), d = x.extent(1);
    FrequencySelection sel;
    std::vector<double> column(h);
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t t = 0; t < h; ++t) column[t] = x.at(t, c);
        sel.keep.push_back(select_frequencies(column, k_f, keep_dc));
    }
    return sel;
}

namespace {

// Applies the per-column bin projection to an [H, d] tensor.
void project_columns(const Tensor& in, const FrequencySelection& sel, Tensor& out, bool accumulate) {
    const std::size_t h = in.extent(0), d = in.extent(1);
    std::vector<double> column(h), projected(h);
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t t = 0; t < h; ++t) column[t] = in.at(t, c);
        nx::project_onto_bins(column, sel.keep[c], projected);
        for (std::size_t t = 0; t < h; ++t) {
            if (accumulate) {
                out.at(t, c) += projected[t];
            } else {
                out.at(t, c) = projected[t];
            }
        }
    }
}

}  // namespace

SeasonalSplit seasonality_decompose(Var x, const FrequencySelection& selection) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw DimensionError("seasonality_decompose: expected [H, d], got " + nx::shape_string(xv.shape()));
    if (selection.keep.size() != xv.extent(1)) {
        throw DimensionError("seasonality_decompose: selection covers " + std::to_string(selection.keep.size()) +
                             " columns, input has " + std::to_string(xv.extent(1)));
    }
    for (const auto& k : selection.keep) {
        if (k.size() != nx::spectrum_size(xv.extent(0))) {
            throw DimensionError("seasonality_decompose: selection mask does not match input length");
        }
    }
    Tensor sea(xv.shape());
    project_columns(xv, selection, sea, false);
    Var x_sea = x.graph().record(std::move(sea), {x}, [selection](const nx::BackwardArgs& args) {
        project_columns(args.grad_output, selection, *args.grad_inputs[0], true);
    });
    return {x_sea, nx::sub(x, x_sea)};
}

SeasonalSplit seasonality_decompose(Var x, std::size_t k_f, bool keep_dc) {
    return seasonality_decompose(x, select_frequencies(x.value(), k_f, keep_dc));
}

Var trend_decompose(Var x_rem, std::span<const std::size_t> kernels, Var mix_w, Var mix_b, Var* weights_out) {
    if (kernels.empty()) throw ConfigError("trend_decompose: empty kernel list");
    const Tensor& rv = x_rem.value();
    if (rv.rank() != 2) throw DimensionError("trend_decompose: expected [H, d], got " + nx::shape_string(rv.shape()));
    const Var flat = nx::reshape(x_rem, {1, rv.size()});
    const Var logits = nx::linear(flat, mix_w, mix_b);
    if (logits.value().size() != kernels.size()) {
        throw DimensionError("trend_decompose: kernel-mix map yields " + std::to_string(logits.value().size()) +
                             " logits for " + std::to_string(kernels.size()) + " kernels");
    }
    const Var weights = nx::softmax(logits, 1);
    if (weights_out) *weights_out = weights;
    Var trend;
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        const Var term = nx::mul_scalar(nx::avg_pool_same(x_rem, kernels[i]), nx::pick(weights, i));
        trend = i == 0 ? term : nx::add(trend, term);
    }
    return trend;
}

Var merge_transform(Var combined, Var merge_w, Var merge_b) {
    const Tensor& cv = combined.value();
    if (cv.rank() != 2) throw DimensionError("merge_transform: expected [H, d], got " + nx::shape_string(cv.shape()));
    const Var merged = nx::linear(nx::transpose(combined), merge_w, merge_b);  // [d, 1]
    return nx::reshape(merged, {cv.extent(1)});
}

Var merge_transform(Var x, Var x_sea, Var x_trend, Var merge_w, Var merge_b) {
    return merge_transform(nx::add(nx::add(x, x_sea), x_trend), merge_w, merge_b);
}

Decomposer::Decomposer(std::string prefix, std::size_t length, std::size_t features, DecompositionConfig config,
                       bool enabled)
    : prefix_(std::move(prefix)), length_(length), features_(features), config_(std::move(config)), enabled_(enabled) {
    config_.validate(length_);
    if (features_ < 1) throw ConfigError("decomposition needs at least one feature");
}

std::vector<std::string> Decomposer::parameter_names() const {
    std::vector<std::string> names{name("merge.bias"), name("merge.weight")};
    if (enabled_) {
        names.push_back(name("kernel_mix.bias"));
        names.push_back(name("kernel_mix.weight"));
    }
    return names;
}

void Decomposer::init_parameters(ParameterStore& store, Rng& rng) const {
    const std::size_t n = config_.kernels.size();
    store.add(name("merge.weight"), init::uniform_fan_in({length_, 1}, length_, rng));
    store.add(name("merge.bias"), init::uniform_fan_in({1}, length_, rng));
    if (enabled_) {
        store.add(name("kernel_mix.weight"), init::uniform_fan_in({length_ * features_, n}, length_ * features_, rng));
        store.add(name("kernel_mix.bias"), init::uniform_fan_in({n}, length_ * features_, rng));
    }
}

DecompositionVars Decomposer::forward(Var x, const ParameterStore& store, ForwardContext& ctx) const {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || xv.extent(0) != length_ || xv.extent(1) != features_) {
        throw DimensionError("decomposition expects [" + std::to_string(length_) + "," + std::to_string(features_) +
                             "], got " + nx::shape_string(xv.shape()));
    }
    nx::Graph& g = x.graph();
    const Var merge_w = g.parameter(store, name("merge.weight"));
    const Var merge_b = g.parameter(store, name("merge.bias"));
    DecompositionVars out;
    if (!enabled_) {
        out.x_trans = merge_transform(x, merge_w, merge_b);
        return out;
    }
    auto compute = [&] { return select_frequencies(xv, config_.k_f, config_.keep_dc); };
    const FrequencySelection sel = ctx.selections ? ctx.selections->frequencies(compute) : compute();
    const SeasonalSplit split = seasonality_decompose(x, sel);
    out.x_sea = split.x_sea;
    out.x_rem = split.x_rem;
    out.x_trend = trend_decompose(split.x_rem, config_.kernels, g.parameter(store, name("kernel_mix.weight")),
                                  g.parameter(store, name("kernel_mix.bias")), &out.kernel_weights);
    out.x_trans = merge_transform(x, out.x_sea, out.x_trend, merge_w, merge_b);
    return out;
}

DecompositionResult Decomposer::evaluate(const Tensor& x, const ParameterStore& store) const {
    nx::Graph g;
    ForwardContext ctx;
    const DecompositionVars v = forward(g.constant(x), store, ctx);
    DecompositionResult r;
    if (enabled_) {
        r.x_sea = v.x_sea.value();
        r.x_rem = v.x_rem.value();
        r.x_trend = v.x_trend.value();
    }
    r.x_trans = v.x_trans.value();
    return r;
}

}  // namespace pathformer::decomposition
