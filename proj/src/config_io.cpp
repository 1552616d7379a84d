// SPDX-License-Identifier: Apache-2.0
#include "pathformer/config_io.hpp"

#include <set>

#include "pathformer/errors.hpp"

namespace pathformer::config_io {

namespace {

constexpr const char* kAblations[] = {"no_inter", "no_intra", "no_decompose", "no_pathways"};

/// Pulls typed fields out of a JSON object and remembers which keys were read.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        out = convert<T>(*it, path_ + "." + key);
    }

    const json* raw(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [k, _] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(path_ + "." + k + ": unknown key");
        }
    }

    template <class T>
    static T convert(const json& v, const std::string& where) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a nonnegative integer");
            return static_cast<T>(v.get<std::uint64_t>());
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number");
            return v.get<double>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where + ": expected a string");
            return v.get<std::string>();
        } else {
            // std::vector<U>
            if (!v.is_array()) throw ConfigError(where + ": expected an array");
            T out;
            for (std::size_t i = 0; i < v.size(); ++i) {
                out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
            }
            return out;
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace

const char* ablation_name(int index) { return kAblations[index]; }

void set_ablation(model::AblationFlags& flags, const std::string& name) {
    if (name == "no_inter") flags.no_inter = true;
    else if (name == "no_intra") flags.no_intra = true;
    else if (name == "no_decompose") flags.no_decompose = true;
    else if (name == "no_pathways") flags.no_pathways = true;
    else throw ConfigError("unknown ablation '" + name + "' (expected no_inter, no_intra, no_decompose or no_pathways)");
}

json to_json(const model::ModelConfig& c) {
    json ablation = json::array();
    const bool flags[] = {c.ablation.no_inter, c.ablation.no_intra, c.ablation.no_decompose, c.ablation.no_pathways};
    for (int i = 0; i < 4; ++i) {
        if (flags[i]) ablation.push_back(kAblations[i]);
    }
    return json{{"input_length", c.input_length},
                {"pred_length", c.pred_length},
                {"channels", c.channels},
                {"num_blocks", c.num_blocks},
                {"pool", c.pool},
                {"block_patch_sizes", c.block_patch_sizes},
                {"scales_per_block", c.scales_per_block},
                {"top_k", c.top_k},
                {"d_model", c.d_model},
                {"k_f", c.decomposition.k_f},
                {"kernels", c.decomposition.kernels},
                {"keep_dc", c.decomposition.keep_dc},
                {"ablation", ablation},
                {"revin_affine", c.revin_affine},
                {"router_noise", c.router_noise},
                {"residual", c.residual},
                {"ffn", c.ffn},
                {"ffn_hidden", c.ffn_hidden},
                {"learned_align", c.learned_align},
                {"predictor_hidden", c.predictor_hidden}};
}

model::ModelConfig model_from_json(const json& j, const std::string& path) {
    model::ModelConfig c;
    Reader r(j, path);
    r.get("input_length", c.input_length);
    r.get("pred_length", c.pred_length);
    r.get("channels", c.channels);
    r.get("num_blocks", c.num_blocks);
    r.get("pool", c.pool);
    r.get("block_patch_sizes", c.block_patch_sizes);
    r.get("scales_per_block", c.scales_per_block);
    r.get("top_k", c.top_k);
    r.get("d_model", c.d_model);
    r.get("k_f", c.decomposition.k_f);
    r.get("kernels", c.decomposition.kernels);
    r.get("keep_dc", c.decomposition.keep_dc);
    std::vector<std::string> ablation;
    r.get("ablation", ablation);
    for (const auto& a : ablation) {
        try {
            set_ablation(c.ablation, a);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ".ablation: " + e.what());
        }
    }
    r.get("revin_affine", c.revin_affine);
    r.get("router_noise", c.router_noise);
    r.get("residual", c.residual);
    r.get("ffn", c.ffn);
    r.get("ffn_hidden", c.ffn_hidden);
    r.get("learned_align", c.learned_align);
    r.get("predictor_hidden", c.predictor_hidden);
    r.finish();
    return c;
}

json to_json(const training::TrainConfig& c) {
    return json{{"lr", c.lr},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps},
                {"loss", c.loss == training::LossKind::l1 ? "l1" : "l2"},
                {"max_epochs", c.max_epochs},
                {"early_stop_patience", c.early_stop_patience},
                {"batch_size", c.batch_size},
                {"seed", c.seed},
                {"transfer_mode", training::transfer_mode_name(c.transfer_mode)},
                {"threads", c.threads},
                {"balance_coef", c.balance_coef},
                {"raw_scale_metrics", c.raw_scale_metrics}};
}

training::TrainConfig train_from_json(const json& j, const std::string& path) {
    training::TrainConfig c;
    Reader r(j, path);
    r.get("lr", c.lr);
    r.get("beta1", c.beta1);
    r.get("beta2", c.beta2);
    r.get("eps", c.eps);
    std::string loss = "l1";
    r.get("loss", loss);
    if (loss == "l1") c.loss = training::LossKind::l1;
    else if (loss == "l2") c.loss = training::LossKind::l2;
    else throw ConfigError(path + ".loss: expected \"l1\" or \"l2\", got \"" + loss + "\"");
    r.get("max_epochs", c.max_epochs);
    r.get("early_stop_patience", c.early_stop_patience);
    r.get("batch_size", c.batch_size);
    r.get("seed", c.seed);
    std::string mode = "none";
    r.get("transfer_mode", mode);
    try {
        c.transfer_mode = training::parse_transfer_mode(mode);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ".transfer_mode: " + e.what());
    }
    r.get("threads", c.threads);
    r.get("balance_coef", c.balance_coef);
    r.get("raw_scale_metrics", c.raw_scale_metrics);
    r.finish();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return c;
}

json to_json(const training::SplitRatios& r) { return json::array({r.train, r.val, r.test}); }

training::SplitRatios ratios_from_json(const json& j, const std::string& path) {
    const auto v = Reader::convert<std::vector<double>>(j, path);
    if (v.size() != 3) throw ConfigError(path + ": expected [train, val, test]");
    training::SplitRatios r{v[0], v[1], v[2]};
    try {
        r.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return r;
}

std::vector<std::string> config_mismatches(const model::ModelConfig& expected, const model::ModelConfig& found,
                                           bool ignore_channels) {
    const json a = to_json(expected), b = to_json(found);
    std::vector<std::string> out;
    for (const auto& [k, v] : a.items()) {
        if (ignore_channels && k == "channels") continue;
        if (b.at(k) != v) out.push_back(k);
    }
    return out;
}

}  // namespace pathformer::config_io
