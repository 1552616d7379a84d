// SPDX-License-Identifier: Apache-2.0
#include "pathformer/forward_context.hpp"

#include "pathformer/errors.hpp"

namespace pathformer {

const FrequencySelection& SelectionTape::frequencies(const std::function<FrequencySelection()>& compute) {
    if (!replaying_) {
        freqs_.push_back(compute());
        return freqs_.back();
    }
    if (freq_cursor_ >= freqs_.size()) throw ContractError("selection tape exhausted (frequency selections)");
    return freqs_[freq_cursor_++];
}

RoutingDecision& SelectionTape::routing(const std::function<RoutingDecision()>& compute) {
    if (!replaying_) {
        routes_.push_back(compute());
        return routes_.back();
    }
    if (route_cursor_ >= routes_.size()) throw ContractError("selection tape exhausted (routing decisions)");
    return routes_[route_cursor_++];
}

}  // namespace pathformer
