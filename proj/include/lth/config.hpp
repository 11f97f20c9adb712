// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "lth/data.hpp"
#include "lth/model.hpp"
#include "lth/optimizer.hpp"
#include "lth/pruning.hpp"

namespace lth {

struct ExperimentConfig {
    // An empty manifest means: generate the synthetic dataset described by
    // `synth` under <output_dir>/data.
    std::string manifest;
    std::string image_dir;
    SynthConfig synth;

    ArchitectureConfig arch;
    std::string backbone_weights;  // optional checkpoint to seed backbone values

    PruneSchedule schedule;
    AdamConfig adam;

    std::size_t batch_size = 32;
    SamplingMode sampler = SamplingMode::Replacement;
    double hflip = 0.5;

    std::uint64_t seed = 42;
    std::string output_dir = "runs/default";
};

/// Canonical key -> value strings. Numbers use the shortest round-trip form.
std::map<std::string, std::string> to_map(const ExperimentConfig& config);
/// Sets one key; unknown keys and unparsable values are ConfigErrors.
void set_key(ExperimentConfig& config, std::string_view key, std::string_view value);
void validate(const ExperimentConfig& config);

/// Parses `key = value` lines ('#' starts a comment). Keys not listed in
/// to_map() are rejected.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);

/// Keys whose values differ, ignoring output_dir.
std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b);
/// Hash of every field except output_dir, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace lth
