// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pathformer/model.hpp"
#include "pathformer/numerics/graph.hpp"

namespace pathformer::training {

using numerics::GradientBuffer;
using numerics::ParameterStore;
using numerics::Tensor;

enum class Split { train, val, test };
const char* split_name(Split split);
Split parse_split(const std::string& name);

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;

    void validate() const;
    friend bool operator==(const SplitRatios&, const SplitRatios&) = default;
};

/// A (T, C) series with chronological, contiguous train/val/test splits and
/// standardisation statistics taken from the train split only.
class Dataset {
public:
    Dataset(Tensor values, std::vector<std::string> channel_names, SplitRatios ratios = {});

    const Tensor& values() const { return values_; }
    std::size_t length() const { return values_.extent(0); }
    std::size_t channels() const { return values_.extent(1); }
    const std::vector<std::string>& channel_names() const { return names_; }
    const SplitRatios& ratios() const { return ratios_; }

    // Half-open [begin, end) row range of a split.
    std::pair<std::size_t, std::size_t> range(Split split) const;
    std::size_t split_length(Split split) const;

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& stdev() const { return stdev_; }
    double standardize(double value, std::size_t channel) const { return (value - mean_[channel]) / stdev_[channel]; }
    double destandardize(double value, std::size_t channel) const { return value * stdev_[channel] + mean_[channel]; }

private:
    Tensor values_;
    std::vector<std::string> names_;
    SplitRatios ratios_;
    std::size_t train_end_ = 0, val_end_ = 0;
    std::vector<double> mean_, stdev_;
};

// Header row; first column a timestamp (ignored); remaining columns numeric.
Dataset read_csv(std::istream& in, SplitRatios ratios = {}, const std::string& source = "<stream>");
Dataset load_csv(const std::string& path, SplitRatios ratios = {});
void write_csv(std::ostream& out, const Tensor& values, const std::vector<std::string>& channel_names);

struct SyntheticSpec {
    std::size_t length = 2000;
    double noise_std = 0.05;
    double trend_slope = 1e-3;  // per step
    double phase = 0.0;         // radians, added to both sinusoids
    std::uint64_t seed = 0;
};
// sin(2*pi*t/12) + 0.5*sin(2*pi*t/48) + slope*t + N(0, noise_std^2), one channel.
Dataset make_synthetic(const SyntheticSpec& spec, SplitRatios ratios = {});

struct TimeSeriesWindow {
    std::size_t start = 0;  // absolute row of the first input step
    Tensor input;           // [H, C], standardised
    Tensor target;          // [F, C], standardised
};

/// Stride-1 windows over one split.
class WindowSet {
public:
    WindowSet(const Dataset& dataset, std::size_t input_length, std::size_t pred_length, Split split);

    std::size_t size() const { return count_; }
    std::size_t input_length() const { return h_; }
    std::size_t pred_length() const { return f_; }
    std::size_t channels() const { return dataset_->channels(); }
    Split split() const { return split_; }
    const Dataset& dataset() const { return *dataset_; }

    TimeSeriesWindow at(std::size_t index) const;
    // One channel of one window, standardised.
    void channel(std::size_t index, std::size_t channel, std::vector<double>& input, Tensor& target) const;

private:
    const Dataset* dataset_;
    std::size_t h_, f_;
    Split split_;
    std::size_t begin_ = 0, count_ = 0;
};

WindowSet make_windows(const Dataset& dataset, std::size_t input_length, std::size_t pred_length, Split split);

enum class LossKind { l1, l2 };
enum class TransferMode { none, zero_shot, part_tuning, full_tuning };
const char* transfer_mode_name(TransferMode mode);
TransferMode parse_transfer_mode(const std::string& name);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Only the named parameters are updated.
class Adam {
public:
    Adam(AdamConfig config, std::vector<std::string> trainable);

    void step(ParameterStore& params, const numerics::Gradients& grads);
    std::size_t steps() const { return t_; }
    const std::vector<std::string>& trainable() const { return names_; }

private:
    AdamConfig config_;
    std::vector<std::string> names_;
    std::map<std::string, Tensor> m_, v_;
    std::size_t t_ = 0;
};

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LossKind loss = LossKind::l1;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 10;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    TransferMode transfer_mode = TransferMode::none;
    std::size_t threads = 0;          // 0: PATHFORMER_THREADS or 1
    // Routing balance penalty: coef * M * sum_i (dense_i - 1/M)^2 per block and sample.
    double balance_coef = 0.0;
    bool raw_scale_metrics = false;   // evaluate on the original data scale

    void validate() const;
    AdamConfig adam() const { return {lr, beta1, beta2, eps}; }
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Worker count: `requested` if nonzero, else PATHFORMER_THREADS, else 1.
std::size_t resolve_threads(std::size_t requested);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::size_t steps = 0;
    bool stopped_early = false;
    std::size_t trainable_scalars = 0;
    std::size_t total_scalars = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Parameter names the optimizer updates for a transfer mode (none/full: all).
std::vector<std::string> trainable_names(const model::PathformerModel& model, TransferMode mode);

/// Trains in place; on return the model holds the best-validation parameters.
TrainResult train(model::PathformerModel& model, const Dataset& dataset, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct Metrics {
    double mse = 0.0;
    double mae = 0.0;
    std::size_t windows = 0;
};

Metrics evaluate(const model::PathformerModel& model, const Dataset& dataset, Split split, bool raw_scale = false,
                 std::size_t threads = 0);

struct TransferResult {
    Metrics metrics;
    double wall_clock_s = 0.0;
    std::size_t trainable_scalars = 0;
    std::size_t total_scalars = 0;
    std::optional<TrainResult> training;
};

/// Adapts `pretrained` (in place) to `target` and reports test metrics.
TransferResult transfer(model::PathformerModel& pretrained, const Dataset& target, TransferMode mode,
                        const TrainConfig& config);

// Seasonal-naive forecast: step h copies the value one season earlier than it.
Metrics seasonal_naive(const Dataset& dataset, std::size_t input_length, std::size_t pred_length,
                       std::size_t season, Split split);

/// Least-squares H -> F map (with intercept) fitted per channel on the train split.
class LinearBaseline {
public:
    LinearBaseline(const Dataset& dataset, std::size_t input_length, std::size_t pred_length, double ridge = 1e-6);
    Metrics evaluate(const Dataset& dataset, Split split) const;

private:
    std::size_t h_, f_;
    std::vector<Tensor> weights_;  // per channel [H + 1, F]
};

}  // namespace pathformer::training
