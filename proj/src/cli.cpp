// SPDX-License-Identifier: Apache-2.0
#include "pathformer/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "pathformer/checkpoint.hpp"
#include "pathformer/errors.hpp"
#include "pathformer/selfcheck.hpp"

namespace pathformer::cli {

namespace fs = std::filesystem;
using config_io::json;

ExperimentConfig parse_experiment(const json& j, const std::string& base_dir) {
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    for (const auto& [k, _] : j.items()) {
        if (k != "dataset" && k != "model" && k != "train" && k != "output" && k != "seed") {
            throw ConfigError("config." + k + ": unknown key");
        }
    }
    ExperimentConfig c;
    if (!j.contains("dataset")) throw ConfigError("config.dataset: required");
    const json& d = j.at("dataset");
    if (!d.is_object()) throw ConfigError("config.dataset: expected a JSON object");
    for (const auto& [k, _] : d.items()) {
        if (k != "path" && k != "split") throw ConfigError("config.dataset." + k + ": unknown key");
    }
    if (!d.contains("path") || !d.at("path").is_string()) throw ConfigError("config.dataset.path: expected a string");
    fs::path p = d.at("path").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
    if (!fs::exists(p)) throw ConfigError("config.dataset.path: file '" + p.string() + "' does not exist");
    c.dataset_path = p.string();
    if (d.contains("split")) c.split = config_io::ratios_from_json(d.at("split"), "config.dataset.split");

    if (j.contains("model")) {
        c.model = config_io::model_from_json(j.at("model"), "config.model");
        c.channels_given = j.at("model").contains("channels");
    }
    if (j.contains("train")) c.train = config_io::train_from_json(j.at("train"), "config.train");
    if (j.contains("output")) {
        if (!j.at("output").is_string()) throw ConfigError("config.output: expected a string");
        c.output = j.at("output").get<std::string>();
    }
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw ConfigError("config.seed: expected a nonnegative integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    return c;
}

ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file '" + path + "' not found or unreadable");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_experiment(j, fs::path(path).parent_path().string());
}

json to_json(const ExperimentConfig& c) {
    json model = config_io::to_json(c.model);
    if (!c.channels_given) model.erase("channels");
    return json{{"dataset", {{"path", c.dataset_path}, {"split", config_io::to_json(c.split)}}},
                {"model", model},
                {"train", config_io::to_json(c.train)},
                {"output", c.output},
                {"seed", c.seed}};
}

PathwayReport inspect_pathways(const model::PathformerModel& model, const training::Dataset& dataset,
                               training::Split split) {
    const auto& mc = model.config();
    const training::WindowSet windows(dataset, mc.input_length, mc.pred_length, split);
    PathwayReport report;
    const auto& blocks = model.blocks();
    std::vector<std::vector<double>> weight_sum(blocks.size()), picks(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        weight_sum[b].assign(blocks[b].scale_count(), 0.0);
        picks[b].assign(blocks[b].scale_count(), 0.0);
    }
    std::vector<double> input;
    numerics::Tensor target;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        for (std::size_t ch = 0; ch < windows.channels(); ++ch) {
            windows.channel(i, ch, input, target);
            numerics::Graph g;
            ForwardContext ctx;
            const auto pass = model.forward_channel(g, input, ch, ctx);
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                const auto& w = pass.routes[b].weights;
                for (std::size_t s = 0; s < w.dense.size(); ++s) {
                    weight_sum[b][s] += w.dense[s];
                    picks[b][s] += w.mask[s] ? 1.0 : 0.0;
                }
            }
            ++report.samples;
        }
    }
    const double n = static_cast<double>(report.samples);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t s = 0; s < blocks[b].scale_count(); ++s) {
            report.rows.push_back({b, blocks[b].config().patch_sizes[s], weight_sum[b][s] / n, picks[b][s] / n});
        }
    }
    return report;
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_pathways_csv(std::ostream& out, const PathwayReport& report) {
    out << "block,patch_size,mean_weight,selection_rate\n";
    for (const auto& r : report.rows) {
        out << r.block << ',' << r.patch_size << ',' << num(r.mean_weight) << ',' << num(r.selection_rate) << '\n';
    }
}

numerics::Tensor forecast_tail(const model::PathformerModel& model, const training::Dataset& input) {
    const auto& mc = model.config();
    if (input.length() < mc.input_length) {
        throw DataError("forecast input has " + std::to_string(input.length()) + " rows; the model needs at least H=" +
                        std::to_string(mc.input_length));
    }
    if (input.channels() != mc.channels) {
        throw DataError("forecast input has " + std::to_string(input.channels()) + " channels; the model expects " +
                        std::to_string(mc.channels));
    }
    const std::size_t start = input.length() - mc.input_length;
    numerics::Tensor window({mc.input_length, mc.channels});
    for (std::size_t t = 0; t < mc.input_length; ++t) {
        for (std::size_t j = 0; j < mc.channels; ++j) window.at(t, j) = input.values().at(start + t, j);
    }
    return model.forward(window).values;
}

void write_metrics_json(std::ostream& out, const training::Metrics& m, double wall_clock_s) {
    out << json{{"mse", m.mse}, {"mae", m.mae}, {"windows", m.windows}, {"wall_clock_s", wall_clock_s}}.dump(2)
        << '\n';
}

namespace {

struct Options {
    std::string config;
    std::string output;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    std::vector<std::string> ablate;
    std::string transfer;
    std::string input;
    std::string split = "test";
    std::size_t gradient_seeds = 3;
};

struct Session {
    ExperimentConfig exp;
    training::Dataset dataset;
    fs::path output;
    std::string checkpoint;
};

Session open_session(const Options& o) {
    ExperimentConfig exp = load_experiment(o.config);
    for (const auto& a : o.ablate) config_io::set_ablation(exp.model.ablation, a);
    if (o.seed) {
        exp.seed = *o.seed;
        exp.train.seed = *o.seed;
    }
    if (!o.output.empty()) exp.output = o.output;
    training::Dataset ds = training::load_csv(exp.dataset_path, exp.split);
    if (!exp.channels_given) exp.model.channels = ds.channels();
    exp.model.validate();
    fs::path out = exp.output;
    fs::create_directories(out);
    std::string ckpt = o.checkpoint.empty() ? (out / "model.ckpt").string() : o.checkpoint;
    return {std::move(exp), std::move(ds), std::move(out), std::move(ckpt)};
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write '" + path.string() + "'");
    f << text;
}

template <class Fn>
void write_with(const fs::path& path, Fn&& fn) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write '" + path.string() + "'");
    fn(f);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_train(const Options& o, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    Session s = open_session(o);
    model::PathformerModel net(s.exp.model, s.exp.seed);
    out << "training " << net.parameters().scalar_count() << " parameters on " << s.exp.dataset_path << '\n';
    const auto result = training::train(net, s.dataset, s.exp.train, [&](const training::EpochRecord& r) {
        out << "epoch " << r.epoch << " train_loss=" << r.train_loss << " val_loss=" << r.val_loss << " ("
            << r.seconds << "s)\n";
        out.flush();
    });
    const auto metrics = training::evaluate(net, s.dataset, training::Split::test, s.exp.train.raw_scale_metrics,
                                            s.exp.train.threads);
    checkpoint::save(s.checkpoint, net);
    write_with(s.output / "history.csv", [&](std::ostream& f) {
        f << "epoch,train_loss,val_loss,seconds\n";
        for (const auto& r : result.history) {
            f << r.epoch << ',' << num(r.train_loss) << ',' << num(r.val_loss) << ',' << num(r.seconds) << '\n';
        }
    });
    write_file(s.output / "config.json", to_json(s.exp).dump(2) + "\n");
    write_with(s.output / "metrics.json", [&](std::ostream& f) { write_metrics_json(f, metrics, seconds_since(t0)); });
    out << "best epoch " << result.best_epoch << ", test mse=" << metrics.mse << " mae=" << metrics.mae
        << "; checkpoint " << s.checkpoint << '\n';
    return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    Session s = open_session(o);
    const auto net = checkpoint::load_compatible(s.checkpoint, s.exp.model, !s.exp.channels_given);
    const auto metrics = training::evaluate(net, s.dataset, training::parse_split(o.split),
                                            s.exp.train.raw_scale_metrics, s.exp.train.threads);
    write_with(s.output / "metrics.json", [&](std::ostream& f) { write_metrics_json(f, metrics, seconds_since(t0)); });
    out << o.split << " mse=" << metrics.mse << " mae=" << metrics.mae << " windows=" << metrics.windows << '\n';
    return 0;
}

int cmd_forecast(const Options& o, std::ostream& out) {
    Session s = open_session(o);
    if (o.input.empty()) throw ConfigError("forecast needs --input CSV");
    const auto input = training::load_csv(o.input, {1.0, 0.0, 0.0});
    const auto net = checkpoint::load_compatible(s.checkpoint, s.exp.model, !s.exp.channels_given);
    const auto values = forecast_tail(net, input);
    write_with(s.output / "forecast.csv", [&](std::ostream& f) { training::write_csv(f, values, input.channel_names()); });
    const std::size_t h = net.config().input_length, start = input.length() - h;
    numerics::Tensor tail({h, input.channels()});
    for (std::size_t t = 0; t < h; ++t) {
        for (std::size_t j = 0; j < input.channels(); ++j) tail.at(t, j) = input.values().at(start + t, j);
    }
    write_with(s.output / "input_tail.csv", [&](std::ostream& f) { training::write_csv(f, tail, input.channel_names()); });
    out << "wrote " << values.extent(0) << " forecast rows to " << (s.output / "forecast.csv").string() << '\n';
    return 0;
}

int cmd_transfer(const Options& o, std::ostream& out) {
    Session s = open_session(o);
    training::TransferMode mode = s.exp.train.transfer_mode;
    if (!o.transfer.empty()) mode = training::parse_transfer_mode(o.transfer);
    if (mode == training::TransferMode::none) throw ConfigError("transfer needs --transfer zero_shot|part_tuning|full_tuning");
    auto net = checkpoint::load_compatible(s.checkpoint, s.exp.model, !s.exp.channels_given);
    const auto result = training::transfer(net, s.dataset, mode, s.exp.train);
    write_with(s.output / "metrics.json",
               [&](std::ostream& f) { write_metrics_json(f, result.metrics, result.wall_clock_s); });
    write_file(s.output / "transfer.json",
               json{{"mode", training::transfer_mode_name(mode)},
                    {"trainable_parameters", result.trainable_scalars},
                    {"total_parameters", result.total_scalars},
                    {"wall_clock_s", result.wall_clock_s}}
                       .dump(2) +
                   "\n");
    if (mode != training::TransferMode::zero_shot) checkpoint::save((s.output / "transfer.ckpt").string(), net);
    out << training::transfer_mode_name(mode) << ": test mse=" << result.metrics.mse << " mae=" << result.metrics.mae
        << " trainable=" << result.trainable_scalars << "/" << result.total_scalars << " in " << result.wall_clock_s
        << "s\n";
    return 0;
}

int cmd_inspect(const Options& o, std::ostream& out) {
    Session s = open_session(o);
    const auto net = checkpoint::load_compatible(s.checkpoint, s.exp.model, !s.exp.channels_given);
    const auto report = inspect_pathways(net, s.dataset, training::parse_split(o.split));
    write_with(s.output / "pathways.csv", [&](std::ostream& f) { write_pathways_csv(f, report); });
    write_pathways_csv(out, report);
    return 0;
}

int cmd_selfcheck(const Options& o, std::ostream& out) {
    bool ok = true;
    for (const auto& line : selfcheck::run_all(o.gradient_seeds)) {
        out << (line.pass ? "PASS " : "FAIL ") << line.name << ": " << line.detail << '\n';
        ok = ok && line.pass;
    }
    return ok ? 0 : 1;
}

}  // namespace

int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-scale transformer forecaster with adaptive pathways"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Experiment config (JSON)")->required();
        sub->add_option("--output", o.output, "Output directory (overrides the config)");
        sub->add_option("--seed", o.seed, "Seed for initialisation and training");
        sub->add_option("--checkpoint", o.checkpoint, "Checkpoint path (default <output>/model.ckpt)");
        sub->add_option("--ablate", o.ablate, "no_inter|no_intra|no_decompose|no_pathways (repeatable)")
            ->check(CLI::IsMember({"no_inter", "no_intra", "no_decompose", "no_pathways"}));
    };
    auto* train = app.add_subcommand("train", "Train a model and report test metrics");
    common(train);
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    common(eval);
    eval->add_option("--split", o.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* fc = app.add_subcommand("forecast", "Forecast from the tail of a CSV");
    common(fc);
    fc->add_option("--input", o.input, "CSV with at least H rows")->required();
    auto* tr = app.add_subcommand("transfer", "Adapt a pretrained checkpoint to the configured dataset");
    common(tr);
    tr->add_option("--transfer", o.transfer, "zero_shot|part_tuning|full_tuning")
        ->check(CLI::IsMember({"zero_shot", "part_tuning", "full_tuning"}));
    auto* ip = app.add_subcommand("inspect-pathways", "Average routing weights per block and patch size");
    common(ip);
    ip->add_option("--split", o.split, "train|val|test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* sc = app.add_subcommand("selfcheck", "Gradient, DFT and top-K checks");
    sc->add_option("--gradient-seeds", o.gradient_seeds, "Seeds for the gradient check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (train->parsed()) return cmd_train(o, out);
        if (eval->parsed()) return cmd_eval(o, out);
        if (fc->parsed()) return cmd_forecast(o, out);
        if (tr->parsed()) return cmd_transfer(o, out);
        if (ip->parsed()) return cmd_inspect(o, out);
        if (sc->parsed()) return cmd_selfcheck(o, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace pathformer::cli
