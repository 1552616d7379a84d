// SPDX-License-Identifier: Apache-2.0
#include "pathformer/numerics/dft.hpp"

#include <cmath>
#include <map>
#include <numbers>

#include "pathformer/errors.hpp"

namespace pathformer::numerics {

namespace {

struct Twiddles {
    std::vector<double> cos, sin;  // indexed by (k * t) mod H
};

const Twiddles& twiddles(std::size_t h) {
    thread_local std::map<std::size_t, Twiddles> cache;
    auto it = cache.find(h);
    if (it != cache.end()) return it->second;
    Twiddles tw;
    tw.cos.resize(h);
    tw.sin.resize(h);
    for (std::size_t j = 0; j < h; ++j) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(h);
        tw.cos[j] = std::cos(angle);
        tw.sin[j] = std::sin(angle);
    }
    return cache.emplace(h, std::move(tw)).first->second;
}

void check_length(std::size_t h) {
    if (h < 2) throw ConfigError("DFT requires a series of length >= 2, got " + std::to_string(h));
}

// Weight of bin k when folding the conjugate half back into a real series.
double fold_weight(std::size_t k, std::size_t h) { return (k == 0 || 2 * k == h) ? 1.0 : 2.0; }

}  // namespace

std::size_t spectrum_size(std::size_t length) { return length / 2 + 1; }

Spectrum rdft(std::span<const double> x) {
    const std::size_t h = x.size();
    check_length(h);
    const Twiddles& tw = twiddles(h);
    Spectrum s;
    s.length = h;
    const std::size_t bins = spectrum_size(h);
    s.amplitude.resize(bins);
    s.phase.resize(bins);
    for (std::size_t k = 0; k < bins; ++k) {
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < h; ++t) {
            const std::size_t j = (k * t) % h;
            re += x[t] * tw.cos[j];
            im -= x[t] * tw.sin[j];
        }
        s.amplitude[k] = std::hypot(re, im);
        s.phase[k] = std::atan2(im, re);
    }
    return s;
}

std::vector<double> irdft(const Spectrum& spectrum, const std::vector<bool>& keep) {
    const std::size_t h = spectrum.length;
    check_length(h);
    const std::size_t bins = spectrum_size(h);
    if (spectrum.amplitude.size() != bins || spectrum.phase.size() != bins || (!keep.empty() && keep.size() != bins)) {
        throw DimensionError("irdft: spectrum arrays do not match length " + std::to_string(h));
    }
    const Twiddles& tw = twiddles(h);
    std::vector<double> out(h, 0.0);
    for (std::size_t k = 0; k < bins; ++k) {
        if (!keep.empty() && !keep[k]) continue;
        const double w = fold_weight(k, h) / static_cast<double>(h);
        const double re = spectrum.amplitude[k] * std::cos(spectrum.phase[k]);
        const double im = spectrum.amplitude[k] * std::sin(spectrum.phase[k]);
        for (std::size_t t = 0; t < h; ++t) {
            const std::size_t j = (k * t) % h;
            out[t] += w * (re * tw.cos[j] - im * tw.sin[j]);
        }
    }
    return out;
}

void project_onto_bins(std::span<const double> x, const std::vector<bool>& keep, std::span<double> out) {
    const std::size_t h = x.size();
    check_length(h);
    if (keep.size() != spectrum_size(h) || out.size() != h) {
        throw DimensionError("project_onto_bins: mask or output length does not match series length " +
                             std::to_string(h));
    }
    const Twiddles& tw = twiddles(h);
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        if (!keep[k]) continue;
        double re = 0.0, im = 0.0;
        for (std::size_t t = 0; t < h; ++t) {
            const std::size_t j = (k * t) % h;
            re += x[t] * tw.cos[j];
            im -= x[t] * tw.sin[j];
        }
        const double w = fold_weight(k, h) / static_cast<double>(h);
        for (std::size_t t = 0; t < h; ++t) {
            const std::size_t j = (k * t) % h;
            out[t] += w * (re * tw.cos[j] - im * tw.sin[j]);
        }
    }
}

}  // namespace pathformer::numerics
