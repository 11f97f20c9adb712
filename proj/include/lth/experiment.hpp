// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lth/config.hpp"
#include "lth/evaluation.hpp"
#include "lth/model.hpp"

namespace lth {

struct LevelRecord {
    std::size_t level = 0;
    double target = 0.0;
    double sparsity = 0.0;
    std::size_t masked = 0;
    std::size_t prunable = 0;
    std::vector<double> train_loss;  // mean loss per epoch
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;
    std::array<std::optional<double>, kSubgroups.size()> subgroups{};
    std::string checkpoint;  // relative to the run directory
    double wall_seconds = 0.0;  // kept out of ledger.json, see timings.json
};

struct RunLedger {
    std::string status = "running";  // running | interrupted | completed | failed
    std::string config_hash;
    std::vector<LevelRecord> levels;
    std::optional<std::size_t> failed_level;
    std::string error;
};

std::string ledger_json(const RunLedger& ledger);
RunLedger parse_ledger_json(std::string_view text);
RunLedger read_ledger(const std::filesystem::path& run_dir);

struct StepEvent {
    std::size_t level = 0;
    std::size_t epoch = 0;
    std::size_t step = 0;  // within the level, counting from 1
    double loss = 0.0;
    const Network& net;
};

struct RunHooks {
    std::function<void(std::size_t level, const Network&)> on_level_start;  // just before the first step
    std::function<void(const StepEvent&)> on_step;                          // after the optimizer step
    std::function<void(std::size_t level, const Network&)> on_level_end;    // after evaluation
};

/// Stops a run early with status "interrupted"; resume() continues it.
struct RunControl {
    std::optional<std::size_t> stop_after_level;
    std::optional<std::pair<std::size_t, std::size_t>> stop_after_epoch;  // (level, epoch)
};

/// Runs the L0..L(rounds-1) loop into config.output_dir. Writes ledger.json,
/// subgroups.csv, tp_table.csv, confusion_L{k}.csv, predictions_L{k}.csv,
/// report.json, timings.json and level_{k}.tfck. The directory must not
/// hold a previous run.
RunLedger run_lth(const ExperimentConfig& config, const RunHooks& hooks = {}, const RunControl& control = {});

/// Continues the run in config.output_dir from its last level or epoch
/// checkpoint. Refuses (ConfigError listing the keys) if the config differs
/// from the recorded one; returns immediately for a completed run.
RunLedger resume(const ExperimentConfig& config, const RunHooks& hooks = {}, const RunControl& control = {});

/// Loads the dataset a config describes, generating synthetic data under
/// <output_dir>/data when no manifest is given.
DatasetManifest load_dataset(const ExperimentConfig& config);

struct EvalResult {
    ConfusionMatrix confusion;
    PredictionLog predictions;
};

/// Eval-mode predictions over one split, in record order.
EvalResult evaluate_split(Network& net, const DatasetManifest& manifest, Split split, std::size_t level = 0);

/// predictions_L{k}.csv: sample,label,pred,age,sex
std::string predictions_csv(const PredictionLog& log, std::span<const SampleMeta> metadata);
struct PredictionFile {
    PredictionLog log;
    std::vector<SampleMeta> metadata;  // indexed by sample id
};
PredictionFile parse_predictions_csv(std::string_view text, std::size_t level);

/// Rebuilds subgroups.csv, tp_table.csv, confusion_L{k}.csv and report.json
/// from the prediction files of a run directory.
void write_reports(const std::filesystem::path& run_dir, std::size_t levels, std::size_t classes);

}  // namespace lth
