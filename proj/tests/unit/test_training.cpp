// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <sstream>

#include "pathformer/errors.hpp"
#include "pathformer/model.hpp"
#include "pathformer/training.hpp"
#include "support.hpp"

using namespace pathformer;
using namespace pathformer::training;
using model::ModelConfig;
using model::PathformerModel;
using numerics::Tensor;
using testing::random_tensor;

namespace {

Dataset ramp(std::size_t length, std::size_t channels = 1, SplitRatios ratios = {1.0, 0.0, 0.0}) {
    Tensor v({length, channels});
    for (std::size_t t = 0; t < length; ++t) {
        for (std::size_t j = 0; j < channels; ++j) v.at(t, j) = static_cast<double>(t) * static_cast<double>(j + 1);
    }
    return Dataset(std::move(v), {}, ratios);
}

ModelConfig small_model(std::size_t h = 24, std::size_t f = 6, std::size_t channels = 1) {
    ModelConfig c;
    c.input_length = h;
    c.pred_length = f;
    c.channels = channels;
    c.num_blocks = 2;
    c.pool = {2, 3, 6};
    c.block_patch_sizes = {{2, 3, 6}, {2, 3, 6}};
    c.scales_per_block = 3;
    c.top_k = 2;
    c.d_model = 4;
    c.decomposition.k_f = 3;
    return c;
}

Dataset small_synthetic(double phase = 0.0, std::uint64_t seed = 0) {
    SyntheticSpec s;
    s.length = 300;
    s.phase = phase;
    s.seed = seed;
    return make_synthetic(s);
}

TrainConfig quick(std::size_t epochs) {
    TrainConfig tc;
    tc.max_epochs = epochs;
    tc.batch_size = 16;
    tc.threads = 1;
    return tc;
}

bool same_bytes(const Tensor& a, const Tensor& b) { return std::ranges::equal(a.data(), b.data()); }

}  // namespace

TEST_SUITE("dataset") {
    TEST_CASE("splits are chronological and statistics come from train") {
        const Dataset ds = ramp(100, 2, {0.7, 0.1, 0.2});
        CHECK(ds.range(Split::train) == std::pair<std::size_t, std::size_t>{0, 70});
        CHECK(ds.range(Split::val) == std::pair<std::size_t, std::size_t>{70, 80});
        CHECK(ds.range(Split::test) == std::pair<std::size_t, std::size_t>{80, 100});
        CHECK(ds.mean()[0] == doctest::Approx(34.5));
        CHECK(ds.mean()[1] == doctest::Approx(69.0));
        // Population variance of 0..69 is (70^2 - 1) / 12.
        CHECK(ds.stdev()[0] == doctest::Approx(std::sqrt((70.0 * 70.0 - 1.0) / 12.0)));
        CHECK(ds.channel_names() == std::vector<std::string>{"ch0", "ch1"});
    }

    TEST_CASE("constant train split gets unit scale") {
        const Dataset ds(Tensor({20, 1}, 3.0), {"x"});
        CHECK(ds.stdev()[0] == 1.0);
        CHECK(ds.standardize(3.0, 0) == 0.0);
    }

    TEST_CASE("invalid inputs") {
        CHECK_THROWS_AS(Dataset(Tensor({10, 1}), {}, {0.5, 0.2, 0.2}), ConfigError);
        Tensor bad({10, 1});
        bad[3] = std::nan("");
        CHECK_THROWS_AS(Dataset(bad, {}), DataError);
        CHECK_THROWS_AS(Dataset(Tensor({10, 2}), {"a"}), DataError);
    }

    TEST_CASE("csv round trip and errors") {
        std::istringstream in("date,a,b\n2020-01-01,1.5,2\n2020-01-02,-3,4e2\n");
        const Dataset ds = read_csv(in, {1.0, 0.0, 0.0});
        CHECK(ds.channel_names() == std::vector<std::string>{"a", "b"});
        CHECK(ds.values().at(1, 1) == 400.0);
        std::ostringstream out;
        write_csv(out, ds.values(), ds.channel_names());
        std::istringstream again(out.str());
        CHECK(same_bytes(read_csv(again, {1.0, 0.0, 0.0}).values(), ds.values()));

        std::istringstream missing("date,a,b\n2020,1,2\n2021,,3\n");
        CHECK_THROWS_WITH_AS(read_csv(missing, {}, "x.csv"), doctest::Contains("row 2"), DataError);
        std::istringstream text("date,a\n2020,abc\n");
        CHECK_THROWS_WITH_AS(read_csv(text, {}, "x.csv"), doctest::Contains("column 'a'"), DataError);
        std::istringstream short_row("date,a,b\n2020,1\n");
        CHECK_THROWS_AS(read_csv(short_row), DataError);
        CHECK_THROWS_AS(load_csv("/nonexistent/data.csv"), DataError);
    }

    TEST_CASE("synthetic series follows its formula") {
        SyntheticSpec s;
        s.length = 50;
        s.noise_std = 0.0;
        const Dataset ds = make_synthetic(s);
        for (std::size_t t = 0; t < 50; ++t) {
            const double td = static_cast<double>(t);
            const double want = std::sin(2.0 * M_PI * td / 12.0) + 0.5 * std::sin(2.0 * M_PI * td / 48.0) + 1e-3 * td;
            CHECK(ds.values()[t] == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_SUITE("windows") {
    TEST_CASE("window counts") {
        const Dataset exact = ramp(8);
        CHECK(WindowSet(exact, 5, 3, Split::train).size() == 1);
        const Dataset more = ramp(17);
        CHECK(WindowSet(more, 5, 3, Split::train).size() == 10);
    }

    TEST_CASE("windows tile a ramp") {
        const Dataset ds = ramp(40, 2, {0.5, 0.25, 0.25});
        const WindowSet w(ds, 4, 2, Split::val);
        CHECK(w.size() == 10 - 4 - 2 + 1);
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto win = w.at(i);
            CHECK(win.start == 20 + i);
            for (std::size_t j = 0; j < 2; ++j) {
                for (std::size_t k = 0; k < 4; ++k) {
                    const double raw = static_cast<double>(20 + i + k) * static_cast<double>(j + 1);
                    CHECK(win.input.at(k, j) == doctest::Approx((raw - ds.mean()[j]) / ds.stdev()[j]));
                }
                for (std::size_t k = 0; k < 2; ++k) {
                    const double raw = static_cast<double>(24 + i + k) * static_cast<double>(j + 1);
                    CHECK(win.target.at(k, j) == doctest::Approx((raw - ds.mean()[j]) / ds.stdev()[j]));
                }
            }
            std::vector<double> input;
            Tensor target;
            w.channel(i, 1, input, target);
            CHECK(input.size() == 4);
            CHECK(input[0] == win.input.at(0, 1));
            CHECK(target[1] == win.target.at(1, 1));
        }
    }

    TEST_CASE("short split is a data error naming it") {
        const Dataset ds = ramp(40, 1, {0.8, 0.1, 0.1});
        CHECK_THROWS_WITH_AS(WindowSet(ds, 4, 2, Split::val), doctest::Contains("split 'val' has 4 rows"), DataError);
    }
}

TEST_SUITE("adam") {
    TEST_CASE("zero learning rate leaves parameters unchanged") {
        PathformerModel m(small_model(), 1);
        const numerics::ParameterStore before = m.parameters();
        TrainConfig tc = quick(2);
        tc.lr = 0.0;
        std::mt19937_64 rng(1);
        Adam opt({0.0}, m.parameters().names());
        for (int s = 0; s < 5; ++s) {
            numerics::Gradients g;
            for (const auto& [name, t] : m.parameters()) g[name] = random_tensor(t.shape(), rng);
            opt.step(m.parameters(), g);
        }
        for (const auto& [name, t] : before) CHECK(same_bytes(m.parameters().get(name), t));
        CHECK_NOTHROW(tc.validate());
        tc.lr = -1e-3;
        CHECK_THROWS_AS(tc.validate(), ConfigError);
    }

    TEST_CASE("three steps on a quadratic match hand-computed updates") {
        // loss = (w - 3)^2, so g = 2 (w - 3).
        numerics::ParameterStore p;
        p.add("w", Tensor::vector({0.5}));
        const AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
        Adam opt(cfg, {"w"});
        long double w = 0.5L, m = 0.0L, v = 0.0L;
        for (int t = 1; t <= 3; ++t) {
            const double g = 2.0 * (p.get("w")[0] - 3.0);
            opt.step(p, {{"w", Tensor::vector({g})}});
            const long double gl = 2.0L * (w - 3.0L);
            m = 0.9L * m + 0.1L * gl;
            v = 0.999L * v + 0.001L * gl * gl;
            const long double mh = m / (1.0L - std::pow(0.9L, t)), vh = v / (1.0L - std::pow(0.999L, t));
            w -= 0.1L * mh / (std::sqrt(vh) + 1e-8L);
            CHECK(std::abs(p.get("w")[0] - static_cast<double>(w)) < 1e-12);
        }
        // Each early Adam step moves by about lr.
        CHECK(static_cast<double>(w) == doctest::Approx(0.8).epsilon(1e-3));
    }

    TEST_CASE("one step never increases a convex quadratic") {
        std::mt19937_64 rng(2);
        for (int trial = 0; trial < 20; ++trial) {
            const Tensor a = random_tensor({4, 4}, rng);
            Tensor spd({4, 4});
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 4; ++j) {
                    for (std::size_t k = 0; k < 4; ++k) spd.at(i, j) += a.at(k, i) * a.at(k, j);
                }
                spd.at(i, i) += 0.1;
            }
            const Tensor b = random_tensor({4}, rng);
            auto loss = [&](const Tensor& x) {
                double q = 0.0;
                for (std::size_t i = 0; i < 4; ++i) {
                    for (std::size_t j = 0; j < 4; ++j) q += 0.5 * x[i] * spd.at(i, j) * x[j];
                    q -= b[i] * x[i];
                }
                return q;
            };
            for (double lr : {1e-3, 1e-4, 1e-5}) {
                numerics::ParameterStore p;
                p.add("x", random_tensor({4}, rng));
                Tensor grad({4});
                for (std::size_t i = 0; i < 4; ++i) {
                    grad[i] = -b[i];
                    for (std::size_t j = 0; j < 4; ++j) grad[i] += spd.at(i, j) * p.get("x")[j];
                }
                const double before = loss(p.get("x"));
                Adam opt({lr}, {"x"});
                opt.step(p, {{"x", grad}});
                CHECK(loss(p.get("x")) <= before);
            }
        }
    }

    TEST_CASE("missing gradients are a contract error") {
        numerics::ParameterStore p;
        p.add("w", Tensor::vector({1.0}));
        Adam opt({}, {"w"});
        CHECK_THROWS_AS(opt.step(p, {}), ContractError);
    }
}

TEST_SUITE("evaluate") {
    // Zero predictor weights reduce the forecast to window mean + window std * bias.
    PathformerModel constant_forecaster(const ModelConfig& c, double bias) {
        PathformerModel m(c, 3);
        auto& w = m.parameters().get("predictor.weight");
        w = Tensor(w.shape());
        auto& b = m.parameters().get("predictor.bias");
        b = Tensor(b.shape(), bias);
        return m;
    }

    TEST_CASE("perfect predictions score zero") {
        const Dataset ds(Tensor({80, 1}, 2.0), {"x"}, {0.5, 0.25, 0.25});
        const PathformerModel m = constant_forecaster(small_model(12, 4), 0.0);
        const Metrics r = evaluate(m, ds, Split::test);
        CHECK(r.mse == 0.0);
        CHECK(r.mae == 0.0);
        CHECK(r.windows == 20 - 12 - 4 + 1);
    }

    TEST_CASE("a constant offset gives delta and delta squared") {
        const Dataset ds(Tensor({80, 1}, 2.0), {"x"}, {0.5, 0.25, 0.25});
        const double delta = 0.25;
        const PathformerModel m = constant_forecaster(small_model(12, 4), delta / model::kNormEpsilon);
        const Metrics r = evaluate(m, ds, Split::val);
        CHECK(r.mae == doctest::Approx(delta).epsilon(1e-9));
        CHECK(r.mse == doctest::Approx(delta * delta).epsilon(1e-9));
    }

    TEST_CASE("random case matches a per-element loop") {
        std::mt19937_64 rng(4);
        const Tensor values = random_tensor({60, 2}, rng);
        const Dataset ds(values, {}, {0.5, 0.25, 0.25});
        auto c = small_model(8, 3, 2);
        c.router_noise = false;
        const PathformerModel m(c, 5);
        const WindowSet w(ds, 8, 3, Split::test);
        double sq = 0.0, ab = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto win = w.at(i);
            const Tensor y = m.forward(win.input).values;
            for (std::size_t k = 0; k < y.size(); ++k) {
                const double e = y[k] - win.target[k];
                sq += e * e;
                ab += std::abs(e);
                ++n;
            }
        }
        const Metrics r = evaluate(m, ds, Split::test);
        CHECK(r.mse == doctest::Approx(sq / static_cast<double>(n)).epsilon(1e-12));
        CHECK(r.mae == doctest::Approx(ab / static_cast<double>(n)).epsilon(1e-12));
        const Metrics raw = evaluate(m, ds, Split::test, true);
        CHECK(raw.mse != r.mse);
    }

    TEST_CASE("empty split and channel mismatch") {
        const Dataset ds = ramp(60, 1, {0.8, 0.2, 0.0});
        const PathformerModel m(small_model(8, 3), 6);
        CHECK_THROWS_AS(evaluate(m, ds, Split::test), DataError);
        const Dataset two = ramp(60, 2, {0.5, 0.25, 0.25});
        CHECK_THROWS_AS(evaluate(m, two, Split::val), ContractError);
    }
}

TEST_SUITE("baselines") {
    TEST_CASE("seasonal naive matches a loop") {
        std::mt19937_64 rng(7);
        const Dataset ds(random_tensor({60, 1}, rng), {}, {0.5, 0.25, 0.25});
        const std::size_t h = 8, f = 5, season = 3;
        const WindowSet w(ds, h, f, Split::val);
        double sq = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const auto win = w.at(i);
            for (std::size_t k = 0; k < f; ++k) {
                // Walk back whole seasons until the source index falls inside the input window.
                long src = static_cast<long>(h + k);
                while (src >= static_cast<long>(h)) src -= static_cast<long>(season);
                const double e = win.input[static_cast<std::size_t>(src)] - win.target[k];
                sq += e * e;
            }
        }
        const Metrics r = seasonal_naive(ds, h, f, season, Split::val);
        CHECK(r.mse == doctest::Approx(sq / static_cast<double>(w.size() * f)).epsilon(1e-12));
        CHECK_THROWS_AS(seasonal_naive(ds, h, f, 9, Split::val), ConfigError);
    }

    TEST_CASE("linear baseline fits an exactly linear process") {
        const Dataset ds = ramp(200, 2, {0.6, 0.2, 0.2});
        const LinearBaseline lb(ds, 10, 4);
        CHECK(lb.evaluate(ds, Split::test).mse < 1e-8);
    }
}

TEST_SUITE("training") {
    TEST_CASE("loss decreases and the best epoch is restored") {
        PathformerModel m(small_model(), 8);
        const Dataset ds = small_synthetic();
        std::vector<EpochRecord> seen;
        const TrainResult r = train(m, ds, quick(4), [&](const EpochRecord& e) { seen.push_back(e); });
        REQUIRE(r.history.size() == 4);
        CHECK(seen.size() == 4);
        CHECK(r.history.back().train_loss < r.history.front().train_loss);
        const auto best = std::min_element(r.history.begin(), r.history.end(),
                                           [](const auto& a, const auto& b) { return a.val_loss < b.val_loss; });
        CHECK(r.best_epoch == best->epoch);
        CHECK(r.best_val_loss == best->val_loss);
        // Restored parameters reproduce the best validation loss (L1 equals MAE).
        CHECK(evaluate(m, ds, Split::val).mae == doctest::Approx(r.best_val_loss).epsilon(1e-12));
        CHECK(r.trainable_scalars == r.total_scalars);
    }

    TEST_CASE("early stopping honours patience") {
        PathformerModel m(small_model(), 9);
        TrainConfig tc = quick(30);
        tc.lr = 1e-9;
        tc.early_stop_patience = 1;
        const TrainResult r = train(m, small_synthetic(), tc);
        CHECK(r.stopped_early);
        CHECK(r.history.size() < 30);
        CHECK(r.history.size() == r.best_epoch + 1);
    }

    TEST_CASE("identical seeds reproduce bit for bit") {
        const Dataset ds = small_synthetic();
        PathformerModel a(small_model(), 10), b(small_model(), 10);
        const TrainResult ra = train(a, ds, quick(2)), rb = train(b, ds, quick(2));
        for (std::size_t i = 0; i < ra.history.size(); ++i) {
            CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
            CHECK(ra.history[i].val_loss == rb.history[i].val_loss);
        }
        for (const auto& [name, t] : a.parameters()) CHECK(same_bytes(b.parameters().get(name), t));
    }

    TEST_CASE("threaded training agrees with a single worker") {
        const Dataset ds = small_synthetic();
        PathformerModel a(small_model(), 11), b(small_model(), 11);
        TrainConfig one = quick(1), many = quick(1);
        many.threads = 3;
        train(a, ds, one);
        train(b, ds, many);
        double worst = 0.0;
        for (const auto& [name, t] : a.parameters()) worst = std::max(worst, numerics::max_abs_diff(b.parameters().get(name), t));
        CHECK(worst < 1e-10);
    }

    TEST_CASE("divergence raises a training error naming the step") {
        PathformerModel m(small_model(), 12);
        TrainConfig tc = quick(3);
        tc.lr = 1e200;
        CHECK_THROWS_WITH_AS(train(m, small_synthetic(), tc), doctest::Contains("at step"), TrainingError);
    }

    TEST_CASE("balance penalty trains and stays finite") {
        PathformerModel m(small_model(), 13);
        TrainConfig tc = quick(1);
        tc.balance_coef = 0.1;
        const TrainResult r = train(m, small_synthetic(), tc);
        CHECK(std::isfinite(r.history[0].train_loss));
        tc.balance_coef = -1.0;
        CHECK_THROWS_AS(tc.validate(), ConfigError);
    }

    TEST_CASE("thread count resolution") {
        CHECK(resolve_threads(4) == 4);
        ::setenv("PATHFORMER_THREADS", "3", 1);
        CHECK(resolve_threads(0) == 3);
        ::unsetenv("PATHFORMER_THREADS");
        CHECK(resolve_threads(0) == 1);
    }

    TEST_CASE("a low-noise sinusoid reaches train L1 below 0.05") {
        SyntheticSpec s;
        s.length = 600;
        s.noise_std = 0.005;
        const Dataset ds = make_synthetic(s);
        auto c = small_model(48, 12);
        c.pool = {3, 6, 12};
        c.block_patch_sizes = {{3, 6, 12}, {3, 6, 12}};
        c.router_noise = false;
        PathformerModel m(c, 14);
        TrainConfig tc = quick(20);
        tc.batch_size = 32;
        const TrainResult r = train(m, ds, tc);
        double best_train = 1e300;
        for (const auto& e : r.history) best_train = std::min(best_train, e.train_loss);
        MESSAGE("best train L1 " << best_train);
        CHECK(best_train < 0.05);
    }
}

TEST_SUITE("transfer") {
    TEST_CASE("modes behave as specified") {
        const Dataset source = small_synthetic(0.0, 1), target = small_synthetic(0.7, 2);
        PathformerModel pre(small_model(), 15);
        train(pre, source, quick(2));

        PathformerModel zs(pre);
        const TransferResult z = transfer(zs, target, TransferMode::zero_shot, quick(1));
        const Metrics direct = evaluate(pre, target, Split::test);
        CHECK(z.metrics.mse == direct.mse);
        CHECK(z.metrics.mae == direct.mae);
        CHECK_FALSE(z.training.has_value());

        const auto attention = pre.attention_parameter_names();
        PathformerModel part(pre);
        const TransferResult p = transfer(part, target, TransferMode::part_tuning, quick(1));
        for (const auto& n : attention) CHECK(same_bytes(part.parameters().get(n), pre.parameters().get(n)));
        CHECK_FALSE(same_bytes(part.parameters().get("predictor.weight"), pre.parameters().get("predictor.weight")));
        CHECK(p.trainable_scalars < p.total_scalars);

        PathformerModel full(pre);
        const TransferResult f = transfer(full, target, TransferMode::full_tuning, quick(1));
        const bool changed = std::any_of(attention.begin(), attention.end(), [&](const auto& n) {
            return !same_bytes(full.parameters().get(n), pre.parameters().get(n));
        });
        CHECK(changed);
        CHECK(f.trainable_scalars == f.total_scalars);

        CHECK_THROWS_AS(transfer(full, target, TransferMode::none, quick(1)), ConfigError);
    }

    TEST_CASE("part tuning trains under half the default parameters") {
        ModelConfig c;
        c.pred_length = 24;
        const PathformerModel m(c, 16);
        const auto names = trainable_names(m, TransferMode::part_tuning);
        std::size_t trainable = 0;
        for (const auto& n : names) trainable += m.parameters().get(n).size();
        CHECK(2 * trainable < m.parameters().scalar_count());
        CHECK(trainable_names(m, TransferMode::full_tuning).size() == m.parameters().size());
    }

    TEST_CASE("mode names parse") {
        CHECK(parse_transfer_mode("part_tuning") == TransferMode::part_tuning);
        CHECK(std::string(transfer_mode_name(TransferMode::zero_shot)) == "zero_shot");
        CHECK_THROWS_AS(parse_transfer_mode("half_tuning"), ConfigError);
    }
}
