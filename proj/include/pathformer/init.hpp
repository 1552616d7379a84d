// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <random>

#include "pathformer/forward_context.hpp"
#include "pathformer/numerics/tensor.hpp"

namespace pathformer::init {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default.
inline numerics::Tensor uniform_fan_in(numerics::Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    numerics::Tensor t(std::move(shape));
    for (auto& v : t.storage()) v = dist(rng);
    return t;
}

}  // namespace pathformer::init
