// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <vector>

namespace pathformer {

using Rng = std::mt19937_64;

/// Kept DFT bins per feature column: keep[column][bin].
struct FrequencySelection {
    std::vector<std::vector<bool>> keep;
};

/// The non-differentiable choices of one routing call.
struct RoutingDecision {
    std::vector<double> noise;  // standard-normal draws; empty when noise is off
    std::vector<bool> mask;     // selected pathways
};

/// Records the discrete choices a forward pass makes (frequency selection,
/// router noise, top-K mask) and can replay them in call order. Replaying
/// freezes those choices while the parameters move, which is what the
/// finite-difference checks need.
class SelectionTape {
public:
    void freeze() {
        replaying_ = true;
        freq_cursor_ = route_cursor_ = 0;
    }
    bool replaying() const { return replaying_; }

    const FrequencySelection& frequencies(const std::function<FrequencySelection()>& compute);
    // The returned record stays valid and may be completed by the caller while recording.
    RoutingDecision& routing(const std::function<RoutingDecision()>& compute);

    std::size_t frequency_records() const { return freqs_.size(); }
    std::size_t routing_records() const { return routes_.size(); }

private:
    bool replaying_ = false;
    std::deque<FrequencySelection> freqs_;
    std::deque<RoutingDecision> routes_;
    std::size_t freq_cursor_ = 0;
    std::size_t route_cursor_ = 0;
};

struct Instrumentation {
    std::size_t dual_attention_runs = 0;
    std::size_t ams_forwards = 0;
};

/// Per-call forward options. Router noise is drawn only when `train` is set.
struct ForwardContext {
    bool train = false;
    Rng* rng = nullptr;
    SelectionTape* selections = nullptr;
    Instrumentation* counters = nullptr;
};

}  // namespace pathformer
