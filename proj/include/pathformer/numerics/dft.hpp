// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pathformer::numerics {

/// Half spectrum of a real series of length H: bins 0..H/2.
///
/// Convention: the forward transform is unnormalized, X_k = sum_t x_t e^{-2 pi i k t / H};
/// the inverse carries the 1/H factor. amplitude[k] = |X_k|, phase[k] = arg X_k.
struct Spectrum {
    std::size_t length = 0;  // H
    std::vector<double> amplitude;
    std::vector<double> phase;
};

std::size_t spectrum_size(std::size_t length);

Spectrum rdft(std::span<const double> x);

// Inverse from amplitude/phase; bins with `keep[k] == false` are treated as zero.
// An empty `keep` keeps every bin.
std::vector<double> irdft(const Spectrum& spectrum, const std::vector<bool>& keep = {});

// Projects x onto the real Fourier basis of the bins in `keep` (same result as
// rdft -> zero unkept bins -> irdft). The projection is symmetric, so it also
// maps gradients.
void project_onto_bins(std::span<const double> x, const std::vector<bool>& keep, std::span<double> out);

}  // namespace pathformer::numerics
