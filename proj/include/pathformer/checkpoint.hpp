// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "pathformer/model.hpp"

// Binary model checkpoints; the byte layout is described in docs/checkpoint_format.md.
namespace pathformer::checkpoint {

inline constexpr char kMagic[4] = {'P', 'F', 'C', 'K'};
inline constexpr std::uint32_t kFormatVersion = 1;

void write(std::ostream& out, const model::PathformerModel& model);
model::PathformerModel read(std::istream& in, const std::string& source = "<stream>");

void save(const std::string& path, const model::PathformerModel& model);
model::PathformerModel load(const std::string& path);

// Loads and checks the stored architecture against `expected`; differing
// config keys raise a ContractError that lists them. With `ignore_channels`,
// the returned model adopts the expected channel count.
model::PathformerModel load_compatible(const std::string& path, const model::ModelConfig& expected,
                                       bool ignore_channels = false);

}  // namespace pathformer::checkpoint
