// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pathformer/errors.hpp"
#include "pathformer/numerics/ops.hpp"
#include "pathformer/router.hpp"
#include "support.hpp"

using namespace pathformer;
using namespace pathformer::router;
using numerics::Graph;
using testing::random_tensor;

namespace {

std::vector<double> softmax_oracle(const std::vector<double>& z) {
    long double mx = *std::max_element(z.begin(), z.end()), s = 0.0L;
    std::vector<long double> e(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) s += e[i] = std::exp(static_cast<long double>(z[i]) - mx);
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<double>(e[i] / s);
    return out;
}

std::vector<double> logits_oracle(const std::vector<double>& x, const Tensor& w) {
    std::vector<double> out(w.extent(1), 0.0);
    for (std::size_t j = 0; j < w.extent(1); ++j) {
        for (std::size_t i = 0; i < x.size(); ++i) out[j] += x[i] * w.at(i, j);
    }
    return out;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
    const Tensor t = random_tensor({n}, rng);
    return {t.data().begin(), t.data().end()};
}

std::size_t nonzeros(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [](double x) { return x != 0.0; }));
}

}  // namespace

TEST_SUITE("topk") {
    TEST_CASE("clear maximum") {
        const std::vector<double> dense{0.5, 0.3, 0.2};
        const auto s = topk_sparsify(dense, 1);
        CHECK(s.sparse == std::vector<double>{0.5, 0.0, 0.0});
        CHECK(s.mask == std::vector<bool>{true, false, false});
    }

    TEST_CASE("ties resolve to the lower index") {
        const std::vector<double> dense{0.4, 0.4, 0.2};
        const auto s = topk_sparsify(dense, 1);
        CHECK(s.mask == std::vector<bool>{true, false, false});
        const std::vector<double> later{0.2, 0.4, 0.4};
        CHECK(topk_sparsify(later, 1).mask == std::vector<bool>{false, true, false});
    }

    TEST_CASE("matches the brute-force largest set") {
        std::mt19937_64 rng(21);
        for (int trial = 0; trial < 50; ++trial) {
            const auto dense = random_vector(8, rng);
            const auto s = topk_sparsify(dense, 3);
            // Exhaustive search over all 3-subsets for the one with the largest values.
            std::vector<std::size_t> best;
            double best_sum = -1e300;
            for (std::size_t a = 0; a < 8; ++a) {
                for (std::size_t b = a + 1; b < 8; ++b) {
                    for (std::size_t c = b + 1; c < 8; ++c) {
                        const double sum = dense[a] + dense[b] + dense[c];
                        if (sum > best_sum) {
                            best_sum = sum;
                            best = {a, b, c};
                        }
                    }
                }
            }
            std::vector<std::size_t> got;
            for (std::size_t i = 0; i < 8; ++i) {
                if (s.mask[i]) got.push_back(i);
            }
            CHECK(got == best);
            for (std::size_t i = 0; i < 8; ++i) CHECK(s.sparse[i] == (s.mask[i] ? dense[i] : 0.0));
        }
    }

    TEST_CASE("k out of range") {
        const std::vector<double> dense{0.5, 0.5};
        CHECK_THROWS_AS(topk_sparsify(dense, 0), ConfigError);
        CHECK_THROWS_AS(topk_sparsify(dense, 3), ConfigError);
    }
}

TEST_SUITE("route") {
    TEST_CASE("zero weights give a uniform gate") {
        const Tensor z({3, 4});
        const std::vector<double> x{1.0, -2.0, 0.5};
        const auto w = route(x, z, z, 2);
        for (double v : w.dense) CHECK(v == 0.25);
        CHECK(w.mask == std::vector<bool>{true, true, false, false});
        CHECK(w.selected() == std::vector<std::size_t>{0, 1});
    }

    TEST_CASE("noise-free route matches the softmax oracle and repeats") {
        std::mt19937_64 rng(22);
        const Tensor wr = random_tensor({5, 4}, rng), wn = random_tensor({5, 4}, rng);
        const auto x = random_vector(5, rng);
        const auto want = softmax_oracle(logits_oracle(x, wr));
        const auto a = route(x, wr, wn, 2), b = route(x, wr, wn, 2);
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(a.dense[j] - want[j]) < 1e-14);
        CHECK(a.dense == b.dense);
        CHECK(a.mask == b.mask);
    }

    TEST_CASE("noise enters through the softplus scale") {
        std::mt19937_64 rng(23);
        const Tensor wr = random_tensor({3, 4}, rng), wn = random_tensor({3, 4}, rng);
        const auto x = random_vector(3, rng);
        const std::vector<double> eps{0.3, -1.2, 0.7, 2.0};
        auto z = logits_oracle(x, wr);
        const auto s = logits_oracle(x, wn);
        for (std::size_t j = 0; j < 4; ++j) z[j] += eps[j] * std::log1p(std::exp(s[j]));
        const auto want = softmax_oracle(z);
        const auto w = route(x, wr, wn, 2, eps);
        for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(w.dense[j] - want[j]) < 1e-14);
    }

    TEST_CASE("K equal to M keeps the dense weights") {
        std::mt19937_64 rng(24);
        const Tensor wr = random_tensor({2, 5}, rng);
        const auto w = route(random_vector(2, rng), wr, Tensor({2, 5}), 5);
        CHECK(w.sparse == w.dense);
    }

    TEST_CASE("K above M is a config error") {
        const Tensor z({2, 3});
        const std::vector<double> x{1.0, 1.0};
        CHECK_THROWS_AS(route(x, z, z, 4), ConfigError);
        CHECK_THROWS_AS(RouterConfig({2, 3, 4, true}).validate(), ConfigError);
    }

    TEST_CASE("exactly K nonzeros and dense sums to one") {
        std::mt19937_64 rng(25);
        std::normal_distribution<double> normal;
        for (int trial = 0; trial < 500; ++trial) {
            const std::size_t m = 2 + static_cast<std::size_t>(trial % 6), k = 1 + static_cast<std::size_t>(trial % m);
            const Tensor wr = random_tensor({4, m}, rng, 3.0), wn = random_tensor({4, m}, rng);
            std::vector<double> eps(m);
            for (auto& e : eps) e = normal(rng);
            const auto w = route(random_vector(4, rng), wr, wn, k, eps);
            CHECK(nonzeros(w.sparse) == k);
            CHECK(std::count(w.mask.begin(), w.mask.end(), true) == static_cast<long>(k));
            CHECK(std::abs(std::accumulate(w.dense.begin(), w.dense.end(), 0.0) - 1.0) < 1e-9);
            for (double v : w.dense) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
        }
    }

    TEST_CASE("permuting the pathways permutes the output") {
        std::mt19937_64 rng(26);
        const Tensor wr = random_tensor({3, 4}, rng), wn = random_tensor({3, 4}, rng);
        const auto x = random_vector(3, rng);
        const std::vector<double> eps{0.1, -0.4, 0.9, -1.3};
        const std::size_t perm[] = {2, 0, 3, 1};
        Tensor pr({3, 4}), pn({3, 4});
        std::vector<double> peps(4);
        for (std::size_t j = 0; j < 4; ++j) {
            for (std::size_t i = 0; i < 3; ++i) {
                pr.at(i, j) = wr.at(i, perm[j]);
                pn.at(i, j) = wn.at(i, perm[j]);
            }
            peps[j] = eps[perm[j]];
        }
        const auto a = route(x, wr, wn, 2, eps), b = route(x, pr, pn, 2, peps);
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(b.dense[j] == doctest::Approx(a.dense[perm[j]]).epsilon(1e-14));
            CHECK(b.mask[j] == a.mask[perm[j]]);
        }
    }
}

TEST_SUITE("router") {
    TEST_CASE("untrained gate is uniform") {
        Router r("r.", {3, 4, 2, true});
        ParameterStore store;
        r.init_parameters(store);
        Graph g;
        std::mt19937_64 rng(1);
        ForwardContext ctx;
        const auto out = r.forward(g.constant(Tensor::vector({0.2, -0.1, 0.4})), store, ctx);
        for (double v : out.weights.dense) CHECK(v == 0.25);
        CHECK(out.noise.empty());
    }

    TEST_CASE("noise is drawn only in training") {
        Router r("r.", {2, 4, 2, true});
        ParameterStore store;
        r.init_parameters(store);
        std::mt19937_64 rng(2);
        const Tensor x = Tensor::vector({1.0, 2.0});
        {
            Graph g;
            ForwardContext ctx{true, &rng};
            const auto out = r.forward(g.constant(x), store, ctx);
            CHECK(out.noise.size() == 4);
            CHECK(out.weights.dense != std::vector<double>(4, 0.25));
        }
        {
            Graph g;
            ForwardContext ctx{false, &rng};
            CHECK(r.forward(g.constant(x), store, ctx).noise.empty());
        }
        {
            Router quiet("q.", {2, 4, 2, false});
            quiet.init_parameters(store);
            Graph g;
            ForwardContext ctx{true, &rng};
            CHECK(quiet.forward(g.constant(x), store, ctx).noise.empty());
        }
    }

    TEST_CASE("graph forward agrees with the graph-free route") {
        std::mt19937_64 rng(27);
        Router r("r.", {3, 5, 2, true});
        ParameterStore store;
        r.init_parameters(store);
        store.get("r.w_r") = random_tensor({3, 5}, rng);
        store.get("r.w_noise") = random_tensor({3, 5}, rng);
        const Tensor x = random_tensor({3}, rng);
        Graph g;
        std::mt19937_64 noise_rng(5);
        ForwardContext ctx{true, &noise_rng};
        const auto out = r.forward(g.constant(x), store, ctx);
        const auto want = route(x.data(), store.get("r.w_r"), store.get("r.w_noise"), 2, out.noise);
        for (std::size_t j = 0; j < 5; ++j) CHECK(out.weights.dense[j] == doctest::Approx(want.dense[j]).epsilon(1e-14));
        CHECK(out.weights.mask == want.mask);
    }

    TEST_CASE("gate gradients match finite differences with noise frozen") {
        std::mt19937_64 rng(28);
        Router r("r.", {3, 4, 2, true});
        ParameterStore store;
        r.init_parameters(store);
        store.get("r.w_r") = random_tensor({3, 4}, rng, 0.5);
        store.get("r.w_noise") = random_tensor({3, 4}, rng, 0.5);
        store.add("x", random_tensor({3}, rng));
        const Tensor weights = random_tensor({4}, rng);
        SelectionTape tape;
        std::mt19937_64 noise_rng(6);
        const auto build = [&](Graph& g, const ParameterStore& s) {
            if (tape.routing_records() > 0) tape.freeze();
            ForwardContext ctx{true, &noise_rng, &tape};
            const auto out = r.forward(g.parameter(s, "x"), s, ctx);
            // Only masked-in pathways contribute, as in the block aggregation.
            Tensor masked = weights;
            for (std::size_t j = 0; j < 4; ++j) {
                if (!out.weights.mask[j]) masked[j] = 0.0;
            }
            return testing::weighted_sum(out.dense, masked);
        };
        {
            Graph g;
            build(g, store);
        }
        CHECK(testing::max_fd_error(store, build) < 1e-6);
        Graph g;
        const auto grads = g.backward(build(g, store));
        double noise_grad = 0.0;
        for (double v : grads.at("r.w_noise").data()) noise_grad += std::abs(v);
        CHECK(noise_grad > 0.0);
    }
}
