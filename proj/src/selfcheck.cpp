// SPDX-License-Identifier: Apache-2.0
#include "pathformer/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "pathformer/decomposition.hpp"
#include "pathformer/numerics/dft.hpp"
#include "pathformer/numerics/ops.hpp"
#include "pathformer/router.hpp"

namespace pathformer::selfcheck {

namespace nx = numerics;

model::ModelConfig toy_config() {
    model::ModelConfig c;
    c.input_length = 24;
    c.pred_length = 8;
    c.channels = 2;
    c.num_blocks = 2;
    c.pool = {2, 3, 6};
    c.block_patch_sizes = {{2, 3, 6}, {2, 3, 6}};
    c.scales_per_block = 3;
    c.top_k = 2;
    c.d_model = 4;
    c.revin_affine = true;
    return c;
}

GradientReport gradient_check(const model::ModelConfig& config, std::uint64_t seed, bool noisy, double step) {
    model::PathformerModel net(config, seed);
    Rng rng(seed ^ 0x5eedULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    // Move the gate off its symmetric zero start so routing is not a tie.
    for (auto& [name, t] : net.parameters()) {
        if (name.find(".router.") != std::string::npos) {
            for (auto& v : t.storage()) v = 0.3 * normal(rng);
        }
    }
    const std::size_t h = config.input_length, f = config.pred_length, c = config.channels;
    std::vector<std::vector<double>> series(c, std::vector<double>(h));
    std::vector<nx::Tensor> weights;
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t t = 0; t < h; ++t) series[j][t] = std::sin(0.7 * t + j) + 0.3 * normal(rng);
        nx::Tensor w({f});
        for (auto& v : w.storage()) v = normal(rng);
        weights.push_back(std::move(w));
    }

    SelectionTape tape;
    Rng noise_rng(seed + 1);
    auto run = [&](nx::Gradients* grads) {
        double total = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            nx::Graph g;
            ForwardContext ctx;
            ctx.train = noisy;
            ctx.rng = &noise_rng;
            ctx.selections = &tape;
            const auto pass = net.forward_channel(g, series[j], j, ctx);
            const nx::Var loss = nx::sum(nx::mul(pass.prediction, g.constant(weights[j])));
            total += loss.value().item();
            if (grads) {
                for (auto& [name, gt] : g.backward(loss)) {
                    auto [it, fresh] = grads->try_emplace(name, gt);
                    if (!fresh) it->second += gt;
                }
            }
        }
        return total;
    };

    nx::Gradients analytic;
    run(&analytic);
    tape.freeze();

    GradientReport report;
    for (auto& [name, param] : net.parameters()) {
        const auto it = analytic.find(name);
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double orig = param[i];
            param[i] = orig + step;
            tape.freeze();
            const double up = run(nullptr);
            param[i] = orig - step;
            tape.freeze();
            const double down = run(nullptr);
            param[i] = orig;
            const double fd = (up - down) / (2.0 * step);
            const double ga = it == analytic.end() ? 0.0 : it->second[i];
            const double rel = std::abs(ga - fd) / (std::abs(fd) + 1e-8);
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_parameter = name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

CheckLine dft_check() {
    const std::size_t h = 96;
    std::vector<double> x(h);
    for (std::size_t t = 0; t < h; ++t) x[t] = std::sin(2.0 * std::numbers::pi * t / 24.0);
    const auto keep = decomposition::select_frequencies(x, 1, true);
    std::vector<double> sea(h);
    nx::project_onto_bins(x, keep, sea);
    double err = 0.0;
    for (std::size_t t = 0; t < h; ++t) err = std::max(err, std::abs(sea[t] - x[t]));
    std::vector<double> noisy(h);
    Rng rng(7);
    std::normal_distribution<double> normal;
    for (auto& v : noisy) v = normal(rng);
    const auto back = nx::irdft(nx::rdft(noisy));
    double round = 0.0;
    for (std::size_t t = 0; t < h; ++t) round = std::max(round, std::abs(back[t] - noisy[t]));
    return {"dft", err < 1e-6 && round < 1e-9,
            "k_f=1 sinusoid error " + fmt("%.2e", err) + ", full round trip " + fmt("%.2e", round)};
}

CheckLine topk_check() {
    Rng rng(11);
    std::normal_distribution<double> normal;
    bool ok = true;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        const std::size_t m = 4, k = 1 + trial % m, d = 8;
        nx::Tensor w_r({d, m}), w_n({d, m});
        for (auto& v : w_r.storage()) v = normal(rng);
        for (auto& v : w_n.storage()) v = normal(rng);
        std::vector<double> x(d), eps(m);
        for (auto& v : x) v = normal(rng);
        for (auto& v : eps) v = normal(rng);
        const auto r = router::route(x, w_r, w_n, k, eps);
        double total = 0.0;
        std::size_t nonzero = 0;
        for (std::size_t i = 0; i < m; ++i) {
            total += r.dense[i];
            nonzero += r.mask[i] ? 1 : 0;
        }
        ok = nonzero == k && std::abs(total - 1.0) < 1e-9;
    }
    return {"top-k", ok, "1000 random routings"};
}

}  // namespace

std::vector<CheckLine> run_all(std::size_t gradient_seeds) {
    std::vector<CheckLine> lines;
    for (std::size_t s = 0; s < gradient_seeds; ++s) {
        const bool noisy = s % 2 == 1;
        const auto rep = gradient_check(toy_config(), 100 + s, noisy);
        lines.push_back({"gradient seed " + std::to_string(100 + s) + (noisy ? " (noise)" : ""),
                         rep.max_rel_error < 1e-4,
                         std::to_string(rep.checked) + " scalars, max rel error " + fmt("%.2e", rep.max_rel_error) +
                             " at " + rep.worst_parameter});
    }
    lines.push_back(dft_check());
    lines.push_back(topk_check());
    return lines;
}

}  // namespace pathformer::selfcheck
