// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lth/data.hpp"
#include "lth/tensor.hpp"

namespace lth {

/// counts[true * classes + predicted]
struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts;
    std::uint64_t total = 0;

    std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts.at(truth * classes + predicted); }
    std::uint64_t row_sum(std::size_t truth) const;
    std::uint64_t trace() const;
};

/// Row-wise argmax; ties resolve to the lower class index.
std::vector<std::int32_t> argmax_rows(const Tensor& logits);

ConfusionMatrix confusion(std::span<const std::int32_t> preds, std::span<const std::int32_t> labels,
                          std::size_t classes);

/// 100 * trace / total, full precision.
double accuracy(const ConfusionMatrix& cm);
/// Per-class recall in percent; absent for classes with no samples.
std::vector<std::optional<double>> recall_per_class(const ConfusionMatrix& cm);

/// Two-decimal rendering used by every report.
std::string format_percent(double value);

struct Prediction {
    std::size_t sample = 0;  // record index in the manifest
    std::size_t level = 0;
    std::int32_t label = 0;
    std::int32_t pred = 0;
};
using PredictionLog = std::vector<Prediction>;

struct SampleMeta {
    std::optional<int> age;
    std::optional<Sex> sex;
};

std::vector<SampleMeta> sample_metadata(const DatasetManifest& manifest);

enum class Subgroup { Male, Female, Ages1To30, Ages31To60, Ages61To90 };
inline constexpr std::array<Subgroup, 5> kSubgroups{Subgroup::Male, Subgroup::Female, Subgroup::Ages1To30,
                                                   Subgroup::Ages31To60, Subgroup::Ages61To90};
std::string_view subgroup_name(Subgroup g);
/// Records lacking the relevant field never belong to the group.
bool in_subgroup(Subgroup g, const SampleMeta& meta);

/// Accuracy percent per (subgroup row, level); a cell is absent when no
/// logged sample matches.
struct SubgroupReport {
    std::vector<std::string> rows;
    std::size_t levels = 0;
    std::vector<std::vector<std::optional<double>>> cells;  // [row][level]

    std::optional<double> cell(std::string_view row, std::size_t level) const;
};

SubgroupReport subgroup_accuracy(const PredictionLog& log, std::span<const SampleMeta> metadata, std::size_t levels);

struct GapRow {
    std::size_t level = 0;
    std::optional<double> female_minus_male;
    std::optional<double> young_minus_old;  // (Ages 1-30) - (Ages 61-90)
};

struct GapTable {
    std::vector<GapRow> rows;
    std::optional<double> sex_gap_change;  // last level minus first
    std::optional<double> age_gap_change;
};

GapTable gap_analysis(const SubgroupReport& report);

/// True positives per class (rows) and level (columns).
struct TPTable {
    std::vector<std::string> classes;
    std::vector<std::vector<std::uint64_t>> counts;  // [class][level]
};

TPTable tp_evolution(std::span<const std::optional<ConfusionMatrix>> per_level);

// CSV layouts: subgroup tables use "subgroup,L0,...,Ln", TP tables
// "class,L0,...,Ln"; empty cells are absent values.
std::string subgroup_csv(const SubgroupReport& report);
SubgroupReport parse_subgroup_csv(std::string_view text);
std::string tp_table_csv(const TPTable& table);
TPTable parse_tp_table_csv(std::string_view text);
std::string confusion_csv(const ConfusionMatrix& cm);
std::string gap_table_csv(const GapTable& gaps);

struct LevelMetrics {
    std::size_t level = 0;
    ConfusionMatrix confusion;
};

/// JSON bundle of confusion matrices, accuracies, recalls, TP table, subgroup
/// table and gap table.
std::string report_json(std::span<const LevelMetrics> levels, const SubgroupReport& subgroups);

}  // namespace lth
