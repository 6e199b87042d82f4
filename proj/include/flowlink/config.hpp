#pragma once

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "flowlink/dataset.hpp"
#include "flowlink/errors.hpp"
#include "flowlink/model.hpp"
#include "flowlink/train.hpp"

namespace flowlink {

// Model and training settings addressed by flat keys ("lr", "batch_size",
// "layer", ...). Sources are applied in order: defaults, FLOWLINK_SEED,
// config file, command line.
struct RunConfig {
    GavConfig model;
    TrainConfig train;
};

using Settings = std::map<std::string, std::string>;

inline const std::vector<std::string>& setting_keys() {
    static const std::vector<std::string> keys{
        "lr",          "batch_size",  "max_epochs",     "max_steps",      "patience",
        "eval_every",  "seed",        "threads",        "d_message",      "heads",
        "phi2_hidden", "readout_hidden", "h",           "k",              "leaky_slope",
        "layer",       "ablation_hidden", "include_target_in_incident"};
    return keys;
}

namespace detail {

template <typename T>
T parse_setting(const std::string& key, const std::string& value) {
    std::string_view v = value;
    if constexpr (std::is_same_v<T, bool>) {
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
    } else {
        T out{};
        auto res = std::from_chars(v.data(), v.data() + v.size(), out);
        if (res.ec == std::errc() && res.ptr == v.data() + v.size()) return out;
    }
    throw ConfigError("invalid value '" + value + "' for " + key);
}

inline std::string trim(std::string_view s) {
    const auto ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline void apply_setting(RunConfig& rc, const std::string& key, const std::string& value) {
    using detail::parse_setting;
    auto& m = rc.model;
    auto& t = rc.train;
    if (key == "lr") t.lr = parse_setting<double>(key, value);
    else if (key == "batch_size") t.batch_size = parse_setting<std::size_t>(key, value);
    else if (key == "max_epochs") t.max_epochs = parse_setting<int>(key, value);
    else if (key == "max_steps") t.max_steps = parse_setting<std::int64_t>(key, value);
    else if (key == "patience") t.patience = parse_setting<int>(key, value);
    else if (key == "eval_every") t.eval_every = parse_setting<std::int64_t>(key, value);
    else if (key == "seed") t.seed = parse_setting<std::uint64_t>(key, value);
    else if (key == "threads") t.threads = parse_setting<unsigned>(key, value);
    else if (key == "d_message") m.d_message = parse_setting<int>(key, value);
    else if (key == "heads") m.heads = parse_setting<int>(key, value);
    else if (key == "phi2_hidden") m.phi2_hidden = parse_setting<int>(key, value);
    else if (key == "readout_hidden") m.readout_hidden = parse_setting<int>(key, value);
    else if (key == "h") m.h = parse_setting<int>(key, value);
    else if (key == "k") m.k = parse_setting<int>(key, value);
    else if (key == "leaky_slope") m.leaky_slope = parse_setting<double>(key, value);
    else if (key == "layer") m.layer = parse_layer_kind(value);
    else if (key == "ablation_hidden") m.ablation_hidden = parse_setting<int>(key, value);
    else if (key == "include_target_in_incident") m.include_target_in_incident = parse_setting<bool>(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

// key = value lines; '#' starts a comment. Keys may use '-' or '_'.
inline Settings parse_config_text(std::string_view text) {
    Settings out;
    std::size_t lineno = 0, pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
        std::string key = detail::trim(std::string_view(trimmed).substr(0, eq));
        for (auto& c : key)
            if (c == '-') c = '_';
        if (key.empty()) throw ParseError("empty key", lineno);
        out[key] = detail::trim(std::string_view(trimmed).substr(eq + 1));
    }
    return out;
}

inline Settings load_config_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open config " + p.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

inline RunConfig resolve_config(const Settings& file, const Settings& cli, const char* env_seed) {
    RunConfig rc;
    if (env_seed && *env_seed) apply_setting(rc, "seed", env_seed);
    for (const auto& [k, v] : file) apply_setting(rc, k, v);
    for (const auto& [k, v] : cli) apply_setting(rc, k, v);
    rc.train.validate();
    return rc;
}

inline nlohmann::ordered_json to_json(const RunConfig& rc) {
    return {{"model", to_json(rc.model)}, {"train", to_json(rc.train)}};
}

}  // namespace flowlink
