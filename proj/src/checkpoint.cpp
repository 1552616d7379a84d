// SPDX-License-Identifier: Apache-2.0
#include "pathformer/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "pathformer/config_io.hpp"
#include "pathformer/errors.hpp"

namespace pathformer::checkpoint {

namespace {

template <class U>
void put_le(std::ostream& out, U value) {
    std::array<char, sizeof(U)> bytes;
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

void put_string(std::ostream& out, const std::string& s) {
    put_le<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Input {
public:
    Input(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

    template <class U>
    U le() {
        std::array<unsigned char, sizeof(U)> bytes;
        bytes_in(reinterpret_cast<char*>(bytes.data()), bytes.size());
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
        return v;
    }

    std::string string(std::uint64_t limit) {
        const auto n = le<std::uint64_t>();
        if (n > limit) fail("string length " + std::to_string(n) + " exceeds limit");
        std::string s(n, '\0');
        bytes_in(s.data(), n);
        return s;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw DataError("checkpoint " + source_ + ": " + what);
    }

private:
    void bytes_in(char* dst, std::size_t n) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated file");
    }

    std::istream& in_;
    std::string source_;
};

}  // namespace

void write(std::ostream& out, const model::PathformerModel& model) {
    out.write(kMagic, 4);
    put_le<std::uint32_t>(out, kFormatVersion);
    put_string(out, config_io::to_json(model.config()).dump());
    const auto& params = model.parameters();
    put_le<std::uint64_t>(out, params.size());
    for (const auto& [name, t] : params) {
        put_string(out, name);
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
        for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw DataError("failed to write checkpoint");
}

model::PathformerModel read(std::istream& in, const std::string& source) {
    Input rd(in, source);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) rd.fail("not a model checkpoint (bad magic)");
    const auto version = rd.le<std::uint32_t>();
    if (version != kFormatVersion) {
        rd.fail("unsupported format version " + std::to_string(version) + " (expected " +
                std::to_string(kFormatVersion) + ")");
    }
    model::ModelConfig config;
    try {
        config = config_io::model_from_json(config_io::json::parse(rd.string(1 << 20)), "checkpoint.config");
    } catch (const config_io::json::exception& e) {
        rd.fail(std::string("malformed config: ") + e.what());
    }
    const auto count = rd.le<std::uint64_t>();
    numerics::ParameterStore params;
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = rd.string(4096);
        const auto rank = rd.le<std::uint32_t>();
        if (rank > 8) rd.fail("tensor " + name + " has implausible rank " + std::to_string(rank));
        numerics::Shape shape(rank);
        std::uint64_t size = 1;
        for (auto& e : shape) {
            e = rd.le<std::uint64_t>();
            if (e == 0 || e > (1ULL << 32)) rd.fail("tensor " + name + " has an invalid extent");
            size *= e;
        }
        if (size > (1ULL << 31)) rd.fail("tensor " + name + " is implausibly large");
        std::vector<double> values(size);
        for (auto& v : values) v = std::bit_cast<double>(rd.le<std::uint64_t>());
        params.add(name, numerics::Tensor(std::move(shape), std::move(values)));
    }
    return model::PathformerModel(std::move(config), std::move(params));
}

void save(const std::string& path, const model::PathformerModel& model) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint file '" + path + "'");
    write(out, model);
}

model::PathformerModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint file '" + path + "' not found or unreadable");
    return read(in, "'" + path + "'");
}

model::PathformerModel load_compatible(const std::string& path, const model::ModelConfig& expected,
                                       bool ignore_channels) {
    model::PathformerModel stored = load(path);
    const auto diff = config_io::config_mismatches(expected, stored.config(), ignore_channels);
    if (!diff.empty()) {
        std::string msg = "checkpoint '" + path + "' is incompatible with the configured model; mismatched keys:";
        for (const auto& k : diff) msg += " " + k;
        throw ContractError(msg);
    }
    if (stored.config().channels == expected.channels) return stored;
    return model::PathformerModel(expected, stored.parameters());
}

}  // namespace pathformer::checkpoint
