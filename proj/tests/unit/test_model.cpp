// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "pathformer/checkpoint.hpp"
#include "pathformer/config_io.hpp"
#include "pathformer/errors.hpp"
#include "pathformer/model.hpp"
#include "pathformer/numerics/ops.hpp"
#include "support.hpp"

using namespace pathformer;
using namespace pathformer::model;
using numerics::Graph;
using numerics::max_abs_diff;
using testing::random_tensor;

namespace {

ModelConfig tiny(std::size_t channels = 2) {
    ModelConfig c;
    c.input_length = 24;
    c.pred_length = 6;
    c.channels = channels;
    c.num_blocks = 2;
    c.pool = {2, 3, 6, 12};
    c.block_patch_sizes = {{3, 6, 12}, {2, 3, 6}};
    c.scales_per_block = 3;
    c.top_k = 2;
    c.d_model = 4;
    c.decomposition.k_f = 3;
    c.router_noise = false;
    return c;
}

// Gives the gates non-uniform weights so routing differs between inputs.
void tilt_routers(PathformerModel& m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& [name, t] : m.parameters()) {
        if (name.find(".router.w_r") != std::string::npos) t = random_tensor(t.shape(), rng, 0.5);
    }
}

Tensor column_swap(const Tensor& x, const std::vector<std::size_t>& perm) {
    Tensor out(x.shape());
    for (std::size_t t = 0; t < x.extent(0); ++t) {
        for (std::size_t j = 0; j < perm.size(); ++j) out.at(t, j) = x.at(t, perm[j]);
    }
    return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("pathformer_unit_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("instance norm") {
    TEST_CASE("constant channel normalises to zero") {
        const Tensor x({10, 1}, 4.2);
        const auto [z, state] = instance_normalize(x);
        for (double v : z.data()) CHECK(v == 0.0);
        CHECK(state.mean[0] == doctest::Approx(4.2));
        CHECK(state.stdev[0] == kNormEpsilon);
    }

    TEST_CASE("standardised channel is a fixed point") {
        Tensor x({8, 1});
        const double raw[] = {1, -1, 2, -2, 0.5, -0.5, 1.5, -1.5};
        double ss = 0.0;
        for (double v : raw) ss += v * v;
        const double sd = std::sqrt(ss / 8.0);
        for (std::size_t i = 0; i < 8; ++i) x[i] = raw[i] / sd;
        const auto [z, state] = instance_normalize(x);
        CHECK(max_abs_diff(z, x) < 1e-6);
    }

    TEST_CASE("normalise then denormalise round-trips") {
        std::mt19937_64 rng(51);
        Tensor x = random_tensor({30, 3}, rng, 4.0);
        for (std::size_t t = 0; t < 30; ++t) x.at(t, 1) += 100.0;
        const auto [z, state] = instance_normalize(x);
        CHECK(max_abs_diff(denormalize(z, state), x) < 1e-9);
    }

    TEST_CASE("denormalise by hand") {
        const NormState state{{3.0}, {2.0}};
        CHECK(denormalize(Tensor::matrix({{1.0}}), state).item() == 5.0);
        const NormState two{{1.5, -2.0}, {0.5, 3.0}};
        const Tensor y = denormalize(Tensor({4, 2}), two);
        for (std::size_t t = 0; t < 4; ++t) {
            CHECK(y.at(t, 0) == 1.5);
            CHECK(y.at(t, 1) == -2.0);
        }
    }

    TEST_CASE("errors") {
        CHECK_THROWS_AS(instance_normalize(Tensor({1, 2})), ConfigError);
        CHECK_THROWS_AS(denormalize(Tensor({4, 2}), NormState{{0.0}, {1.0}}), DimensionError);
    }
}

TEST_SUITE("predictor") {
    TEST_CASE("zero weights return the bias") {
        std::mt19937_64 rng(52);
        const Tensor b = random_tensor({5}, rng);
        Graph g;
        const Var y = predictor(g.constant(random_tensor({12}, rng)), g.constant(Tensor({12, 5})), g.constant(b));
        CHECK(std::ranges::equal(y.value().data(), b.data()));
    }

    TEST_CASE("selector weights pick entries") {
        Tensor h({6});
        for (std::size_t i = 0; i < 6; ++i) h[i] = 10.0 + static_cast<double>(i);
        Tensor w({6, 3});
        w.at(4, 0) = 1.0;
        w.at(0, 1) = 1.0;
        w.at(5, 2) = 1.0;
        Graph g;
        const Var y = predictor(g.constant(h), g.constant(w), g.constant(Tensor({3})));
        CHECK(y.value()[0] == 14.0);
        CHECK(y.value()[1] == 10.0);
        CHECK(y.value()[2] == 15.0);
    }

    TEST_CASE("random case matches the matmul oracle") {
        std::mt19937_64 rng(53);
        const Tensor h = random_tensor({7}, rng), w = random_tensor({7, 4}, rng), b = random_tensor({4}, rng);
        Graph g;
        const Var y = predictor(g.constant(h), g.constant(w), g.constant(b));
        for (std::size_t f = 0; f < 4; ++f) {
            double acc = b[f];
            for (std::size_t i = 0; i < 7; ++i) acc += h[i] * w.at(i, f);
            CHECK(std::abs(y.value()[f] - acc) < 1e-12);
        }
    }

    TEST_CASE("mismatch is a dimension error") {
        Graph g;
        CHECK_THROWS_AS(predictor(g.constant(Tensor({7})), g.constant(Tensor({6, 4})), g.constant(Tensor({4}))),
                        DimensionError);
    }
}

TEST_SUITE("model") {
    TEST_CASE("forecast shape on the default architecture") {
        ModelConfig c;
        c.channels = 7;
        c.router_noise = false;
        PathformerModel m(c, 1);
        std::mt19937_64 rng(54);
        const Forecast f = m.forward(random_tensor({96, 7}, rng));
        CHECK(f.values.shape() == numerics::Shape{96, 7});
        CHECK(f.values.all_finite());
        REQUIRE(f.pathway_trace.size() == 3);
        CHECK(f.pathway_trace[0].size() == 7);
    }

    TEST_CASE("forecast shape across lengths") {
        std::mt19937_64 rng(55);
        for (std::size_t h : {36u, 48u, 96u}) {
            for (std::size_t f : {12u, 24u}) {
                auto c = tiny(1);
                c.input_length = h;
                c.pred_length = f;
                PathformerModel m(c, 2);
                CHECK(m.forward(random_tensor({h, 1}, rng)).values.shape() == numerics::Shape{f, 1});
            }
        }
    }

    TEST_CASE("forward is deterministic with noise off") {
        PathformerModel m(tiny(), 3);
        tilt_routers(m, 4);
        std::mt19937_64 rng(56);
        const Tensor x = random_tensor({24, 2}, rng);
        CHECK(std::ranges::equal(m.forward(x).values.data(), m.forward(x).values.data()));
    }

    TEST_CASE("single channel uses the same path as each channel of many") {
        PathformerModel multi(tiny(3), 5);
        tilt_routers(multi, 6);
        auto c1 = tiny(1);
        PathformerModel single(c1, multi.parameters());
        std::mt19937_64 rng(57);
        const Tensor x = random_tensor({24, 3}, rng);
        const Tensor all = multi.forward(x).values;
        for (std::size_t j = 0; j < 3; ++j) {
            Tensor col({24, 1});
            for (std::size_t t = 0; t < 24; ++t) col[t] = x.at(t, j);
            const Tensor one = single.forward(col).values;
            for (std::size_t f = 0; f < 6; ++f) CHECK(one[f] == all.at(f, j));
        }
    }

    TEST_CASE("permuting channels permutes forecasts exactly") {
        PathformerModel m(tiny(3), 7);
        tilt_routers(m, 8);
        std::mt19937_64 rng(58);
        const Tensor x = random_tensor({24, 3}, rng);
        const std::vector<std::size_t> perm{2, 0, 1};
        const Tensor a = m.forward(x).values, b = m.forward(column_swap(x, perm)).values;
        CHECK(std::ranges::equal(b.data(), column_swap(a, perm).data()));
    }

    TEST_CASE("adding a constant to a channel shifts its forecast") {
        PathformerModel m(tiny(2), 9);
        tilt_routers(m, 10);
        std::mt19937_64 rng(59);
        const Tensor x = random_tensor({24, 2}, rng);
        Tensor shifted = x;
        for (std::size_t t = 0; t < 24; ++t) shifted.at(t, 1) += 7.5;
        const Tensor a = m.forward(x).values, b = m.forward(shifted).values;
        for (std::size_t f = 0; f < 6; ++f) {
            CHECK(b.at(f, 0) == a.at(f, 0));
            CHECK(std::abs(b.at(f, 1) - a.at(f, 1) - 7.5) < 1e-6);
        }
    }

    TEST_CASE("affine normalisation round-trips at identity parameters") {
        auto c = tiny(2);
        c.revin_affine = true;
        PathformerModel with(c, 11);
        c.revin_affine = false;
        ParameterStore plain;
        for (const auto& [name, t] : with.parameters()) {
            if (name.rfind("revin.", 0) != 0) plain.add(name, t);
        }
        PathformerModel without(c, plain);
        std::mt19937_64 rng(60);
        const Tensor x = random_tensor({24, 2}, rng);
        CHECK(max_abs_diff(with.forward(x).values, without.forward(x).values) < 1e-8);
    }

    TEST_CASE("wrong input shape is a contract error") {
        PathformerModel m(tiny(2), 12);
        CHECK_THROWS_AS(m.forward(Tensor({24, 3})), ContractError);
        CHECK_THROWS_AS(m.forward(Tensor({23, 2})), ContractError);
    }

    TEST_CASE("foreign parameter stores are rejected") {
        PathformerModel m(tiny(2), 13);
        ParameterStore missing = m.parameters();
        ParameterStore partial;
        for (const auto& [name, t] : missing) {
            if (name != "predictor.bias") partial.add(name, t);
        }
        CHECK_THROWS_AS(PathformerModel(tiny(2), partial), ContractError);
        ParameterStore reshaped = m.parameters();
        reshaped.get("predictor.bias") = Tensor({7});
        CHECK_THROWS_AS(PathformerModel(tiny(2), reshaped), ContractError);
    }

    TEST_CASE("parameter groups partition the store") {
        PathformerModel m(tiny(2), 14);
        auto all = m.router_parameter_names();
        for (auto& n : m.predictor_parameter_names()) all.push_back(n);
        for (auto& n : m.attention_parameter_names()) all.push_back(n);
        std::sort(all.begin(), all.end());
        CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
        CHECK(all == m.parameters().names());
    }
}

TEST_SUITE("config") {
    TEST_CASE("patch sizes must come from the pool") {
        auto c = tiny();
        c.block_patch_sizes = {{3, 6, 16}, {2, 3, 6}};
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = tiny();
        c.top_k = 4;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        c = tiny();
        c.block_patch_sizes = {{3, 6}, {2, 3, 6}};
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("default block assignment") {
        ModelConfig c;
        CHECK(c.patch_sizes() == default_block_patch_sizes());
        CHECK(c.patch_sizes()[0] == std::vector<std::size_t>{12, 16, 24, 32});
        CHECK(c.patch_sizes()[2] == std::vector<std::size_t>{2, 3, 6, 12});
        CHECK_NOTHROW(c.validate());
    }

    TEST_CASE("json round trip") {
        auto c = tiny(3);
        c.ablation.no_decompose = true;
        c.revin_affine = true;
        const auto back = config_io::model_from_json(config_io::to_json(c));
        CHECK(back == c);
    }

    TEST_CASE("unknown and mistyped keys are rejected") {
        auto j = config_io::to_json(tiny());
        j["d_modle"] = 8;
        CHECK_THROWS_WITH_AS(config_io::model_from_json(j), "model.d_modle: unknown key", ConfigError);
        auto k = config_io::to_json(tiny());
        k["top_k"] = "two";
        CHECK_THROWS_AS(config_io::model_from_json(k), ConfigError);
        auto a = config_io::to_json(tiny());
        a["ablation"] = {"no_everything"};
        CHECK_THROWS_AS(config_io::model_from_json(a), ConfigError);
    }
}

TEST_SUITE("ablation") {
    TEST_CASE("default flags leave the architecture unchanged") {
        const auto blocks = apply_ablation(tiny());
        REQUIRE(blocks.size() == 2);
        for (const auto& b : blocks) {
            CHECK(b.use_intra);
            CHECK(b.use_inter);
            CHECK(b.decompose);
            CHECK(b.pathways);
        }
        CHECK(blocks[0].in_features == 1);
        CHECK(blocks[1].in_features == 4);
    }

    TEST_CASE("inter and intra cannot both be removed") {
        auto c = tiny();
        c.ablation.no_inter = c.ablation.no_intra = true;
        CHECK_THROWS_AS(c.validate(), ConfigError);
        CHECK_THROWS_AS(PathformerModel(c, 1), ConfigError);
    }

    TEST_CASE("each flag removes its component") {
        for (int i = 0; i < 4; ++i) {
            auto c = tiny(1);
            config_io::set_ablation(c.ablation, config_io::ablation_name(i));
            PathformerModel m(c, 15);
            const auto names = m.parameters().names();
            auto has = [&](const char* part) {
                return std::any_of(names.begin(), names.end(), [&](const auto& n) { return n.find(part) != std::string::npos; });
            };
            if (c.ablation.no_inter) CHECK_FALSE(has(".inter."));
            if (c.ablation.no_intra) CHECK_FALSE(has(".intra."));
            if (c.ablation.no_decompose) CHECK_FALSE(has(".kernel_mix."));
            std::mt19937_64 rng(61);
            Instrumentation counters;
            ForwardContext ctx;
            ctx.counters = &counters;
            const Forecast f = m.forward(random_tensor({24, 1}, rng), ctx);
            CHECK(f.values.all_finite());
            CHECK(counters.dual_attention_runs == (c.ablation.no_pathways ? 6u : 4u));
        }
    }

    TEST_CASE("without pathways the dense weights mix both scales") {
        auto c = tiny(1);
        c.num_blocks = 1;
        c.block_patch_sizes = {{3, 6}};
        c.scales_per_block = 2;
        c.top_k = 1;
        c.ablation.no_pathways = true;
        PathformerModel m(c, 16);
        tilt_routers(m, 17);
        const auto& block = m.blocks()[0];
        std::mt19937_64 rng(62);
        const Tensor x = random_tensor({24, 1}, rng);
        const auto [z, state] = instance_normalize(x);
        Graph g;
        ForwardContext ctx;
        const auto out = block.forward(g.constant(z), m.parameters(), ctx);
        CHECK(out.routing.weights.mask == std::vector<bool>{true, true});
        const auto& w = out.routing.weights.dense;
        const Tensor a = block.branch(0).forward(g.constant(z), m.parameters()).output.value();
        const Tensor b = block.branch(1).forward(g.constant(z), m.parameters()).output.value();
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(out.out.value()[i] - (w[0] * a[i] + w[1] * b[i])) < 1e-12);
    }

    TEST_CASE("without decomposition routing sees x only through the merge map") {
        auto c = tiny(1);
        c.ablation.no_decompose = true;
        PathformerModel m(c, 18);
        const auto& block = m.blocks()[0];
        std::mt19937_64 rng(63);
        const Tensor x = random_tensor({24, 1}, rng);
        Graph g;
        ForwardContext ctx;
        const auto out = block.forward(g.constant(x), m.parameters(), ctx);
        CHECK_FALSE(out.decomposition.x_sea.valid());
        const Tensor& w = m.parameters().get("block0.decomp.merge.weight");
        double want = m.parameters().get("block0.decomp.merge.bias")[0];
        for (std::size_t t = 0; t < 24; ++t) want += w[t] * x[t];
        CHECK(std::abs(out.decomposition.x_trans.value()[0] - want) < 1e-12);
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("round trip preserves parameters bit for bit") {
        auto c = tiny(2);
        c.revin_affine = true;
        PathformerModel m(c, 19);
        tilt_routers(m, 20);
        const auto dir = scratch_dir("ckpt");
        const std::string path = (dir / "m.ckpt").string();
        checkpoint::save(path, m);
        const PathformerModel back = checkpoint::load(path);
        CHECK(back.config() == m.config());
        for (const auto& [name, t] : m.parameters()) {
            CHECK(std::ranges::equal(back.parameters().get(name).data(), t.data()));
        }
        std::mt19937_64 rng(64);
        const Tensor x = random_tensor({24, 2}, rng);
        CHECK(std::ranges::equal(back.forward(x).values.data(), m.forward(x).values.data()));
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("stream starts with the magic and version") {
        PathformerModel m(tiny(1), 21);
        std::ostringstream out;
        checkpoint::write(out, m);
        const std::string bytes = out.str();
        CHECK(bytes.substr(0, 4) == "PFCK");
        CHECK(static_cast<unsigned char>(bytes[4]) == 1);
        std::istringstream bad("NOPE" + bytes.substr(4));
        CHECK_THROWS_AS(checkpoint::read(bad), DataError);
        std::istringstream truncated(bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(checkpoint::read(truncated), DataError);
    }

    TEST_CASE("architecture mismatch names the keys") {
        PathformerModel m(tiny(2), 22);
        const auto dir = scratch_dir("mismatch");
        const std::string path = (dir / "m.ckpt").string();
        checkpoint::save(path, m);
        auto other = tiny(2);
        other.d_model = 8;
        CHECK_THROWS_WITH_AS(checkpoint::load_compatible(path, other), doctest::Contains("d_model"), ContractError);
        auto wider = tiny(5);
        CHECK_THROWS_AS(checkpoint::load_compatible(path, wider), ContractError);
        CHECK(checkpoint::load_compatible(path, wider, true).config().channels == 5);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("missing file is a data error naming the path") {
        CHECK_THROWS_WITH_AS(checkpoint::load("/nonexistent/x.ckpt"), doctest::Contains("/nonexistent/x.ckpt"), DataError);
    }
}
