// SPDX-License-Identifier: Apache-2.0
#include "pathformer/training.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "pathformer/errors.hpp"
#include "pathformer/numerics/ops.hpp"

namespace pathformer::training {

namespace nx = numerics;

const char* split_name(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

void SplitRatios::validate() const {
    if (!(train > 0.0) || !(val >= 0.0) || !(test >= 0.0)) {
        throw ConfigError("split ratios must be nonnegative with a positive train share");
    }
    if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

Dataset::Dataset(Tensor values, std::vector<std::string> channel_names, SplitRatios ratios)
    : values_(std::move(values)), names_(std::move(channel_names)), ratios_(ratios) {
    ratios_.validate();
    if (values_.rank() != 2) throw DataError("dataset values must be a (T, C) matrix");
    if (!values_.all_finite()) throw DataError("dataset contains non-finite values");
    const std::size_t t = values_.extent(0), c = values_.extent(1);
    if (names_.empty()) {
        for (std::size_t j = 0; j < c; ++j) names_.push_back("ch" + std::to_string(j));
    }
    if (names_.size() != c) throw DataError("channel name count does not match the column count");
    train_end_ = static_cast<std::size_t>(std::floor(static_cast<double>(t) * ratios_.train));
    val_end_ = train_end_ + static_cast<std::size_t>(std::floor(static_cast<double>(t) * ratios_.val));
    if (train_end_ == 0) throw DataError("train split is empty");

    mean_.assign(c, 0.0);
    stdev_.assign(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < train_end_; ++i) m += values_.at(i, j);
        m /= static_cast<double>(train_end_);
        double var = 0.0;
        for (std::size_t i = 0; i < train_end_; ++i) var += (values_.at(i, j) - m) * (values_.at(i, j) - m);
        var /= static_cast<double>(train_end_);
        mean_[j] = m;
        stdev_[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
}

std::pair<std::size_t, std::size_t> Dataset::range(Split split) const {
    switch (split) {
        case Split::train: return {0, train_end_};
        case Split::val: return {train_end_, val_end_};
        case Split::test: return {val_end_, length()};
    }
    return {0, 0};
}

std::size_t Dataset::split_length(Split split) const {
    const auto [b, e] = range(split);
    return e - b;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string trim(std::string s) {
    const auto is_space = [](unsigned char ch) { return std::isspace(ch) != 0; };
    while (!s.empty() && is_space(s.back())) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && is_space(s[i])) ++i;
    return s.substr(i);
}

}  // namespace

Dataset read_csv(std::istream& in, SplitRatios ratios, const std::string& source) {
    std::string line;
    if (!std::getline(in, line)) throw DataError(source + ": empty file");
    const auto header = split_fields(trim(line));
    if (header.size() < 2) throw DataError(source + ": header needs a timestamp column and at least one channel");
    std::vector<std::string> names;
    for (std::size_t j = 1; j < header.size(); ++j) names.push_back(trim(header[j]));
    const std::size_t c = names.size();

    std::vector<double> data;
    std::size_t rows = 0, line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        ++rows;
        const auto fields = split_fields(line);
        const std::string where = source + ": row " + std::to_string(rows) + " (line " + std::to_string(line_no) + ")";
        if (fields.size() != c + 1) {
            throw DataError(where + " has " + std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(c + 1));
        }
        for (std::size_t j = 0; j < c; ++j) {
            const std::string f = trim(fields[j + 1]);
            double v = 0.0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw DataError(where + ": missing or invalid value in column '" + names[j] + "'");
            }
            data.push_back(v);
        }
    }
    if (rows == 0) throw DataError(source + ": no data rows");
    return Dataset(Tensor({rows, c}, std::move(data)), std::move(names), ratios);
}

Dataset load_csv(const std::string& path, SplitRatios ratios) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file '" + path + "'");
    return read_csv(in, ratios, path);
}

void write_csv(std::ostream& out, const Tensor& values, const std::vector<std::string>& channel_names) {
    if (values.rank() != 2 || values.extent(1) != channel_names.size()) {
        throw DimensionError("write_csv: values " + nx::shape_string(values.shape()) + " vs " +
                             std::to_string(channel_names.size()) + " channel names");
    }
    out << "date";
    for (const auto& n : channel_names) out << ',' << n;
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < values.extent(0); ++i) {
        out << i;
        for (std::size_t j = 0; j < values.extent(1); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", values.at(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
}

Dataset make_synthetic(const SyntheticSpec& spec, SplitRatios ratios) {
    constexpr double kTwoPi = 6.283185307179586;
    Rng rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Tensor values({spec.length, 1});
    for (std::size_t t = 0; t < spec.length; ++t) {
        const double td = static_cast<double>(t);
        values[t] = std::sin(kTwoPi * td / 12.0 + spec.phase) + 0.5 * std::sin(kTwoPi * td / 48.0 + spec.phase) +
                    spec.trend_slope * td + spec.noise_std * noise(rng);
    }
    return Dataset(std::move(values), {"value"}, ratios);
}

WindowSet::WindowSet(const Dataset& dataset, std::size_t input_length, std::size_t pred_length, Split split)
    : dataset_(&dataset), h_(input_length), f_(pred_length), split_(split) {
    if (h_ < 1 || f_ < 1) throw ConfigError("window lengths must be positive");
    const auto [b, e] = dataset.range(split);
    const std::size_t len = e - b;
    if (len < h_ + f_) {
        throw DataError(std::string("split '") + split_name(split) + "' has " + std::to_string(len) +
                        " rows; windows need at least H+F=" + std::to_string(h_ + f_));
    }
    begin_ = b;
    count_ = len - h_ - f_ + 1;
}

TimeSeriesWindow WindowSet::at(std::size_t index) const {
    if (index >= count_) throw ContractError("window index " + std::to_string(index) + " out of range");
    const std::size_t c = channels();
    const std::size_t s = begin_ + index;
    TimeSeriesWindow w{s, Tensor({h_, c}), Tensor({f_, c})};
    const Tensor& v = dataset_->values();
    for (std::size_t t = 0; t < h_; ++t) {
        for (std::size_t j = 0; j < c; ++j) w.input.at(t, j) = dataset_->standardize(v.at(s + t, j), j);
    }
    for (std::size_t t = 0; t < f_; ++t) {
        for (std::size_t j = 0; j < c; ++j) w.target.at(t, j) = dataset_->standardize(v.at(s + h_ + t, j), j);
    }
    return w;
}

void WindowSet::channel(std::size_t index, std::size_t channel, std::vector<double>& input, Tensor& target) const {
    if (index >= count_ || channel >= channels()) throw ContractError("window/channel index out of range");
    const std::size_t s = begin_ + index;
    const Tensor& v = dataset_->values();
    input.resize(h_);
    for (std::size_t t = 0; t < h_; ++t) input[t] = dataset_->standardize(v.at(s + t, channel), channel);
    if (target.shape() != nx::Shape{f_}) target = Tensor({f_});
    for (std::size_t t = 0; t < f_; ++t) target[t] = dataset_->standardize(v.at(s + h_ + t, channel), channel);
}

WindowSet make_windows(const Dataset& dataset, std::size_t input_length, std::size_t pred_length, Split split) {
    return WindowSet(dataset, input_length, pred_length, split);
}

const char* transfer_mode_name(TransferMode mode) {
    switch (mode) {
        case TransferMode::none: return "none";
        case TransferMode::zero_shot: return "zero_shot";
        case TransferMode::part_tuning: return "part_tuning";
        case TransferMode::full_tuning: return "full_tuning";
    }
    return "?";
}

TransferMode parse_transfer_mode(const std::string& name) {
    if (name == "none") return TransferMode::none;
    if (name == "zero_shot") return TransferMode::zero_shot;
    if (name == "part_tuning") return TransferMode::part_tuning;
    if (name == "full_tuning") return TransferMode::full_tuning;
    throw ConfigError("unknown transfer mode '" + name + "' (expected zero_shot, part_tuning or full_tuning)");
}

Adam::Adam(AdamConfig config, std::vector<std::string> trainable) : config_(config), names_(std::move(trainable)) {
    if (!(config_.lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
}

void Adam::step(ParameterStore& params, const nx::Gradients& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (const auto& name : names_) {
        Tensor& p = params.get(name);
        const auto it = grads.find(name);
        if (it == grads.end()) throw ContractError("no gradient for trainable parameter " + name);
        const Tensor& g = it->second;
        if (g.shape() != p.shape()) throw DimensionError("gradient shape mismatch for " + name);
        auto [mi, fresh] = m_.try_emplace(name, Tensor::zeros_like(p));
        Tensor& m = mi->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros_like(p)).first->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite nonnegative number");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(balance_coef >= 0.0)) throw ConfigError("balance_coef must be nonnegative");
}

std::size_t resolve_threads(std::size_t requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("PATHFORMER_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
        throw ConfigError(std::string("PATHFORMER_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

std::vector<std::string> trainable_names(const model::PathformerModel& model, TransferMode mode) {
    if (mode != TransferMode::part_tuning) return model.parameters().names();
    auto names = model.router_parameter_names();
    const auto head = model.predictor_parameter_names();
    names.insert(names.end(), head.begin(), head.end());
    std::sort(names.begin(), names.end());
    return names;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    return splitmix(splitmix(splitmix(splitmix(seed) ^ a) ^ b) ^ c);
}

// Runs body(worker, begin, end) over `count` items split into contiguous chunks.
template <class Body>
void parallel_chunks(std::size_t count, std::size_t workers, Body&& body) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        body(std::size_t{0}, std::size_t{0}, count);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t b = std::min(count, w * chunk), e = std::min(count, b + chunk);
        pool.emplace_back([&, w, b, e] {
            try {
                body(w, b, e);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

nx::Var sample_loss(nx::Var prediction, const Tensor& target, LossKind kind) {
    return kind == LossKind::l1 ? nx::l1_loss(prediction, target) : nx::mse_loss(prediction, target);
}

nx::Var balance_penalty(const model::PathformerModel::ChannelPass& pass, double coef) {
    nx::Var total;
    for (const auto& route : pass.routes) {
        const std::size_t m = route.weights.dense.size();
        nx::Graph& g = route.dense.graph();
        const nx::Var centred = nx::sub(route.dense, g.constant(Tensor({m}, 1.0 / static_cast<double>(m))));
        const nx::Var term = nx::scale(nx::sum(nx::square(centred)), coef * static_cast<double>(m));
        total = total.valid() ? nx::add(total, term) : term;
    }
    return total;
}

struct ErrorSums {
    double abs = 0.0, sq = 0.0;
    std::size_t count = 0;
};

// Per-element error sums over every (window, channel) of a split, noise off.
ErrorSums error_sums(const model::PathformerModel& model, const WindowSet& windows, bool raw_scale,
                     std::size_t threads) {
    const std::size_t c = windows.channels();
    const std::size_t total = windows.size() * c;
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, total));
    std::vector<ErrorSums> partial(workers);
    const Dataset& ds = windows.dataset();
    parallel_chunks(total, workers, [&](std::size_t w, std::size_t b, std::size_t e) {
        std::vector<double> input;
        Tensor target;
        ErrorSums& acc = partial[w];
        for (std::size_t s = b; s < e; ++s) {
            const std::size_t win = s / c, ch = s % c;
            windows.channel(win, ch, input, target);
            nx::Graph g;
            ForwardContext ctx;
            const Tensor& pred = model.forward_channel(g, input, ch, ctx).prediction.value();
            for (std::size_t t = 0; t < target.size(); ++t) {
                double p = pred[t], y = target[t];
                if (raw_scale) {
                    p = ds.destandardize(p, ch);
                    y = ds.destandardize(y, ch);
                }
                acc.abs += std::abs(p - y);
                acc.sq += (p - y) * (p - y);
                ++acc.count;
            }
        }
    });
    ErrorSums out;
    for (const auto& p : partial) {
        out.abs += p.abs;
        out.sq += p.sq;
        out.count += p.count;
    }
    return out;
}

double scalar_count(const ParameterStore& store, const std::vector<std::string>& names) {
    double n = 0.0;
    for (const auto& name : names) n += static_cast<double>(store.get(name).size());
    return n;
}

}  // namespace

TrainResult train(model::PathformerModel& model, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    const auto& mc = model.config();
    if (mc.channels != dataset.channels()) {
        throw ContractError("model has " + std::to_string(mc.channels) + " channels, dataset has " +
                            std::to_string(dataset.channels()));
    }
    const WindowSet train_windows(dataset, mc.input_length, mc.pred_length, Split::train);
    const WindowSet val_windows(dataset, mc.input_length, mc.pred_length, Split::val);
    const std::size_t c = dataset.channels();
    const std::size_t threads = resolve_threads(config.threads);

    std::vector<std::size_t> samples(train_windows.size() * c);
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = i;

    ParameterStore& params = model.parameters();
    const auto names = trainable_names(model, config.transfer_mode);
    Adam optimizer(config.adam(), names);

    TrainResult result;
    result.total_scalars = params.scalar_count();
    result.trainable_scalars = static_cast<std::size_t>(scalar_count(params, names));
    result.best_val_loss = std::numeric_limits<double>::infinity();
    ParameterStore best = params;
    std::size_t since_best = 0;

    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, config.batch_size));
    std::vector<GradientBuffer> buffers;
    for (std::size_t w = 0; w < workers; ++w) buffers.emplace_back(params);

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle_rng(derive_seed(config.seed, epoch));
        std::shuffle(samples.begin(), samples.end(), shuffle_rng);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < samples.size(); start += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, samples.size() - start);
            const std::size_t step = result.steps;
            std::vector<double> loss_sums(workers, 0.0);
            for (auto& b : buffers) b.zero();
            parallel_chunks(n, workers, [&](std::size_t w, std::size_t b, std::size_t e) {
                std::vector<double> input;
                Tensor target;
                for (std::size_t k = b; k < e; ++k) {
                    const std::size_t sample = samples[start + k];
                    train_windows.channel(sample / c, sample % c, input, target);
                    Rng rng(derive_seed(config.seed, epoch + 1, step + 1, sample));
                    nx::Graph g;
                    ForwardContext ctx;
                    ctx.train = true;
                    ctx.rng = &rng;
                    const auto pass = model.forward_channel(g, input, sample % c, ctx);
                    nx::Var loss = sample_loss(pass.prediction, target, config.loss);
                    if (config.balance_coef > 0.0) loss = nx::add(loss, balance_penalty(pass, config.balance_coef));
                    loss_sums[w] += loss.value().item();
                    g.backward_into(loss, buffers[w], 1.0 / static_cast<double>(n));
                }
            });
            double batch_loss = 0.0;
            for (std::size_t w = 0; w < workers; ++w) {
                batch_loss += loss_sums[w];
                if (w > 0) buffers[0] += buffers[w];
            }
            if (!std::isfinite(batch_loss)) {
                throw TrainingError("non-finite training loss at step " + std::to_string(step + 1) + " (epoch " +
                                    std::to_string(epoch + 1) + ")");
            }
            epoch_loss += batch_loss;
            optimizer.step(params, buffers[0].tensors());
            ++result.steps;
        }

        const ErrorSums val = error_sums(model, val_windows, false, threads);
        const double val_loss = config.loss == LossKind::l1 ? val.abs / static_cast<double>(val.count)
                                                            : val.sq / static_cast<double>(val.count);
        if (!std::isfinite(val_loss)) {
            throw TrainingError("non-finite validation loss after step " + std::to_string(result.steps));
        }
        EpochRecord rec{epoch + 1, epoch_loss / static_cast<double>(samples.size()), val_loss,
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch + 1;
            best = params;
            since_best = 0;
        } else if (++since_best >= config.early_stop_patience) {
            result.stopped_early = true;
            break;
        }
    }
    params = std::move(best);
    return result;
}

Metrics evaluate(const model::PathformerModel& model, const Dataset& dataset, Split split, bool raw_scale,
                 std::size_t threads) {
    const auto& mc = model.config();
    if (mc.channels != dataset.channels()) {
        throw ContractError("model has " + std::to_string(mc.channels) + " channels, dataset has " +
                            std::to_string(dataset.channels()));
    }
    const WindowSet windows(dataset, mc.input_length, mc.pred_length, split);
    const ErrorSums sums = error_sums(model, windows, raw_scale, resolve_threads(threads));
    return {sums.sq / static_cast<double>(sums.count), sums.abs / static_cast<double>(sums.count), windows.size()};
}

TransferResult transfer(model::PathformerModel& pretrained, const Dataset& target, TransferMode mode,
                        const TrainConfig& config) {
    if (mode == TransferMode::none) throw ConfigError("transfer needs a mode: zero_shot, part_tuning or full_tuning");
    const auto t0 = std::chrono::steady_clock::now();
    TransferResult out;
    out.total_scalars = pretrained.parameters().scalar_count();
    if (mode != TransferMode::zero_shot) {
        TrainConfig tc = config;
        tc.transfer_mode = mode;
        out.training = train(pretrained, target, tc);
        out.trainable_scalars = out.training->trainable_scalars;
    }
    out.metrics = evaluate(pretrained, target, Split::test, config.raw_scale_metrics, config.threads);
    out.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

Metrics seasonal_naive(const Dataset& dataset, std::size_t input_length, std::size_t pred_length,
                       std::size_t season, Split split) {
    if (season < 1 || season > input_length) {
        throw ConfigError("season must be in [1, H=" + std::to_string(input_length) + "]");
    }
    const WindowSet windows(dataset, input_length, pred_length, split);
    double abs_sum = 0.0, sq_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const auto w = windows.at(i);
        for (std::size_t h = 0; h < pred_length; ++h) {
            const std::size_t back = season * (h / season + 1);
            const std::size_t src = input_length + h - back;
            for (std::size_t j = 0; j < windows.channels(); ++j) {
                const double e = w.input.at(src, j) - w.target.at(h, j);
                abs_sum += std::abs(e);
                sq_sum += e * e;
                ++n;
            }
        }
    }
    return {sq_sum / static_cast<double>(n), abs_sum / static_cast<double>(n), windows.size()};
}

LinearBaseline::LinearBaseline(const Dataset& dataset, std::size_t input_length, std::size_t pred_length,
                               double ridge)
    : h_(input_length), f_(pred_length) {
    const WindowSet windows(dataset, h_, f_, Split::train);
    const std::size_t n = windows.size();
    std::vector<double> input;
    Tensor target;
    for (std::size_t ch = 0; ch < dataset.channels(); ++ch) {
        Eigen::MatrixXd x(n, h_ + 1), y(n, f_);
        for (std::size_t i = 0; i < n; ++i) {
            windows.channel(i, ch, input, target);
            for (std::size_t t = 0; t < h_; ++t) x(i, t) = input[t];
            x(i, h_) = 1.0;
            for (std::size_t t = 0; t < f_; ++t) y(i, t) = target[t];
        }
        Eigen::MatrixXd gram = x.transpose() * x;
        gram.diagonal().array() += ridge * static_cast<double>(n);
        const Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);
        Tensor wt({h_ + 1, f_});
        for (std::size_t r = 0; r <= h_; ++r) {
            for (std::size_t t = 0; t < f_; ++t) wt.at(r, t) = w(r, t);
        }
        weights_.push_back(std::move(wt));
    }
}

Metrics LinearBaseline::evaluate(const Dataset& dataset, Split split) const {
    if (dataset.channels() != weights_.size()) throw ContractError("linear baseline fitted for a different channel count");
    const WindowSet windows(dataset, h_, f_, split);
    std::vector<double> input;
    Tensor target;
    double abs_sum = 0.0, sq_sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        for (std::size_t ch = 0; ch < dataset.channels(); ++ch) {
            windows.channel(i, ch, input, target);
            const Tensor& w = weights_[ch];
            for (std::size_t t = 0; t < f_; ++t) {
                double p = w.at(h_, t);
                for (std::size_t r = 0; r < h_; ++r) p += input[r] * w.at(r, t);
                const double e = p - target[t];
                abs_sum += std::abs(e);
                sq_sum += e * e;
                ++n;
            }
        }
    }
    return {sq_sum / static_cast<double>(n), abs_sum / static_cast<double>(n), windows.size()};
}

}  // namespace pathformer::training
