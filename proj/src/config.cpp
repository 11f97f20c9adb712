// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "lth/error.hpp"

namespace lth {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
    }
    return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view v) {
    std::vector<std::size_t> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        auto comma = v.find(',', start);
        if (comma == std::string_view::npos) comma = v.size();
        out.push_back(parse_uint(key, trim(v.substr(start, comma - start))));
        start = comma + 1;
    }
    return out;
}

struct Field {
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, std::string_view key, std::string_view)> set;
};

const std::map<std::string, Field, std::less<>>& fields() {
    static const std::map<std::string, Field, std::less<>> table = [] {
        std::map<std::string, Field, std::less<>> f;
        auto str = [&](const char* key, std::string ExperimentConfig::*member) {
            f[key] = {[member](const ExperimentConfig& c) { return c.*member; },
                      [member](ExperimentConfig& c, std::string_view, std::string_view v) { c.*member = std::string(v); }};
        };
        str("data.manifest", &ExperimentConfig::manifest);
        str("data.image_dir", &ExperimentConfig::image_dir);
        str("model.backbone_weights", &ExperimentConfig::backbone_weights);
        str("output_dir", &ExperimentConfig::output_dir);

        f["synth.n"] = {[](const ExperimentConfig& c) { return std::to_string(c.synth.n); },
                        [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.synth.n = parse_uint(k, v); }};
        f["synth.imbalance"] = {[](const ExperimentConfig& c) { return c.synth.imbalance; },
                                [](ExperimentConfig& c, std::string_view, std::string_view v) { c.synth.imbalance = v; }};
        f["synth.subgroups"] = {[](const ExperimentConfig& c) { return c.synth.subgroups; },
                                [](ExperimentConfig& c, std::string_view, std::string_view v) { c.synth.subgroups = v; }};
        f["synth.image_size"] = {
            [](const ExperimentConfig& c) { return std::to_string(c.synth.image_size); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.synth.image_size = parse_uint(k, v); }};
        f["synth.test_fraction"] = {
            [](const ExperimentConfig& c) { return fmt_double(c.synth.test_fraction); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.synth.test_fraction = parse_double(k, v); }};

        f["model.input_size"] = {
            [](const ExperimentConfig& c) { return std::to_string(c.arch.input_size); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.arch.input_size = parse_uint(k, v); }};
        f["model.conv_channels"] = {
            [](const ExperimentConfig& c) { return join(c.arch.conv_channels); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.arch.conv_channels = parse_list(k, v); }};
        f["model.kernel"] = {[](const ExperimentConfig& c) { return std::to_string(c.arch.kernel); },
                             [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.arch.kernel = parse_uint(k, v); }};
        f["model.head_hidden"] = {
            [](const ExperimentConfig& c) { return std::to_string(c.arch.head_hidden); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.arch.head_hidden = parse_uint(k, v); }};
        f["model.dropout"] = {
            [](const ExperimentConfig& c) { return fmt_double(c.arch.dropout); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.arch.dropout = parse_double(k, v); }};
        f["model.classes"] = {
            [](const ExperimentConfig& c) { return std::to_string(c.arch.classes); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.arch.classes = parse_uint(k, v); }};
        f["model.bias"] = {[](const ExperimentConfig& c) { return std::string(c.arch.bias ? "true" : "false"); },
                           [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.arch.bias = parse_bool(k, v); }};

        f["schedule.rounds"] = {
            [](const ExperimentConfig& c) { return std::to_string(c.schedule.rounds); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.schedule.rounds = parse_uint(k, v); }};
        f["schedule.per_level_fraction"] = {
            [](const ExperimentConfig& c) { return fmt_double(c.schedule.per_level_fraction); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
                c.schedule.per_level_fraction = parse_double(k, v);
            }};
        f["schedule.epochs_per_round"] = {
            [](const ExperimentConfig& c) { return std::to_string(c.schedule.epochs_per_round); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
                c.schedule.epochs_per_round = parse_uint(k, v);
            }};

        auto adam = [&](const char* key, double AdamConfig::*member) {
            f[key] = {[member](const ExperimentConfig& c) { return fmt_double(c.adam.*member); },
                      [member](ExperimentConfig& c, std::string_view k, std::string_view v) {
                          c.adam.*member = parse_double(k, v);
                      }};
        };
        adam("optimizer.lr", &AdamConfig::lr);
        adam("optimizer.weight_decay", &AdamConfig::weight_decay);
        adam("optimizer.beta1", &AdamConfig::beta1);
        adam("optimizer.beta2", &AdamConfig::beta2);
        adam("optimizer.eps", &AdamConfig::eps);

        f["train.batch_size"] = {
            [](const ExperimentConfig& c) { return std::to_string(c.batch_size); },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.batch_size = parse_uint(k, v); }};
        f["train.sampler"] = {
            [](const ExperimentConfig& c) {
                return std::string(c.sampler == SamplingMode::Replacement ? "replacement" : "stratified");
            },
            [](ExperimentConfig& c, std::string_view k, std::string_view v) {
                if (v == "replacement") {
                    c.sampler = SamplingMode::Replacement;
                } else if (v == "stratified") {
                    c.sampler = SamplingMode::Stratified;
                } else {
                    throw ConfigError(std::string(k) + ": expected replacement or stratified, got '" + std::string(v) + "'");
                }
            }};
        f["train.hflip"] = {[](const ExperimentConfig& c) { return fmt_double(c.hflip); },
                            [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.hflip = parse_double(k, v); }};
        f["seed"] = {[](const ExperimentConfig& c) { return std::to_string(c.seed); },
                     [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.seed = parse_uint(k, v); }};
        return f;
    }();
    return table;
}

}  // namespace

std::map<std::string, std::string> to_map(const ExperimentConfig& config) {
    std::map<std::string, std::string> out;
    for (const auto& [key, field] : fields()) out[key] = field.get(config);
    return out;
}

void set_key(ExperimentConfig& config, std::string_view key, std::string_view value) {
    auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
    it->second.set(config, key, value);
}

void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& why) { throw ConfigError(why); };
    if (c.schedule.rounds < 1) fail("schedule.rounds must be at least 1");
    if (!(c.schedule.per_level_fraction >= 0.0) ||
        c.schedule.per_level_fraction * static_cast<double>(c.schedule.rounds - 1) >= 1.0) {
        fail("schedule.per_level_fraction * (rounds - 1) must lie in [0, 1)");
    }
    if (c.schedule.epochs_per_round < 1) fail("schedule.epochs_per_round must be at least 1");
    if (!(c.adam.lr > 0.0)) fail("optimizer.lr must be positive");
    if (!(c.adam.weight_decay >= 0.0)) fail("optimizer.weight_decay must be non-negative");
    if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) fail("optimizer.beta1 must lie in [0, 1)");
    if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) fail("optimizer.beta2 must lie in [0, 1)");
    if (!(c.adam.eps > 0.0)) fail("optimizer.eps must be positive");
    if (c.batch_size < 1) fail("train.batch_size must be at least 1");
    if (!(c.hflip >= 0.0 && c.hflip <= 1.0)) fail("train.hflip must lie in [0, 1]");
    if (c.arch.classes < 2 || c.arch.classes > kIsicClassCount) fail("model.classes must lie in [2, 8]");
    if (c.arch.conv_channels.empty()) fail("model.conv_channels needs at least one block");
    if (!(c.arch.dropout >= 0.0 && c.arch.dropout < 1.0)) fail("model.dropout must lie in [0, 1)");
    if (c.arch.input_size < 1) fail("model.input_size must be positive");
    if (c.manifest.empty()) {
        if (c.synth.n < c.arch.classes) fail("synth.n must be at least model.classes");
        if (c.synth.imbalance != "uniform" && c.synth.imbalance != "isic-like") {
            fail("synth.imbalance must be uniform or isic-like");
        }
        if (c.synth.subgroups != "balanced" && c.synth.subgroups != "isic-like") {
            fail("synth.subgroups must be balanced or isic-like");
        }
        if (c.arch.input_size > c.synth.image_size) fail("model.input_size exceeds synth.image_size");
        if (!(c.synth.test_fraction > 0.0 && c.synth.test_fraction < 1.0)) {
            fail("synth.test_fraction must lie in (0, 1)");
        }
    }
    if (c.output_dir.empty()) fail("output_dir must not be empty");
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig c;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(start, nl - start);
        start = nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!seen.insert(std::string(key)).second) {
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
        }
        set_key(c, key, value);
    }
    c.synth.class_count = c.arch.classes;
    c.synth.seed = c.seed;
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& [k, v] : to_map(config)) out += k + " = " + v + "\n";
    return out;
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
    const auto ma = to_map(a), mb = to_map(b);
    std::vector<std::string> out;
    for (const auto& [k, v] : ma) {
        if (k != "output_dir" && mb.at(k) != v) out.push_back(k);
    }
    return out;
}

std::string config_hash(const ExperimentConfig& config) {
    std::string canon;
    for (const auto& [k, v] : to_map(config)) {
        if (k != "output_dir") canon += k + "=" + v + "\n";
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
    return buf;
}

}  // namespace lth
