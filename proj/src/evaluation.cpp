// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "lth/error.hpp"

namespace lth {

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < classes; ++p) s += at(truth, p);
    return s;
}

std::uint64_t ConfusionMatrix::trace() const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < classes; ++c) s += at(c, c);
    return s;
}

std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DimensionError("argmax_rows expects [N x C], got " + to_string(logits.shape()));
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<std::int32_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = logits.ptr() + i * c;
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        out[i] = static_cast<std::int32_t>(best);
    }
    return out;
}

ConfusionMatrix confusion(std::span<const std::int32_t> preds, std::span<const std::int32_t> labels,
                          std::size_t classes) {
    if (preds.size() != labels.size()) {
        throw ContractError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                            std::to_string(labels.size()) + " labels");
    }
    ConfusionMatrix cm{classes, std::vector<std::uint64_t>(classes * classes, 0), 0};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] < 0 || labels[i] < 0 || static_cast<std::size_t>(preds[i]) >= classes ||
            static_cast<std::size_t>(labels[i]) >= classes) {
            throw ContractError("confusion: class index out of range at position " + std::to_string(i));
        }
        cm.counts[static_cast<std::size_t>(labels[i]) * classes + static_cast<std::size_t>(preds[i])]++;
        cm.total++;
    }
    return cm;
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total == 0) throw MetricError("accuracy is undefined for an empty confusion matrix");
    return 100.0 * static_cast<double>(cm.trace()) / static_cast<double>(cm.total);
}

std::vector<std::optional<double>> recall_per_class(const ConfusionMatrix& cm) {
    std::vector<std::optional<double>> out(cm.classes);
    for (std::size_t c = 0; c < cm.classes; ++c) {
        const auto rs = cm.row_sum(c);
        if (rs > 0) out[c] = 100.0 * static_cast<double>(cm.at(c, c)) / static_cast<double>(rs);
    }
    return out;
}

std::string format_percent(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", value);
    std::string s = buf;
    return s == "-0.00" ? "0.00" : s;
}

std::vector<SampleMeta> sample_metadata(const DatasetManifest& manifest) {
    std::vector<SampleMeta> out;
    out.reserve(manifest.records.size());
    for (const auto& r : manifest.records) out.push_back({r.age, r.sex});
    return out;
}

std::string_view subgroup_name(Subgroup g) {
    switch (g) {
        case Subgroup::Male: return "Male";
        case Subgroup::Female: return "Female";
        case Subgroup::Ages1To30: return "Ages 1-30";
        case Subgroup::Ages31To60: return "Ages 31-60";
        case Subgroup::Ages61To90: return "Ages 61-90";
    }
    return "";
}

bool in_subgroup(Subgroup g, const SampleMeta& meta) {
    auto age_in = [&](int lo, int hi) { return meta.age && *meta.age >= lo && *meta.age <= hi; };
    switch (g) {
        case Subgroup::Male: return meta.sex == Sex::Male;
        case Subgroup::Female: return meta.sex == Sex::Female;
        case Subgroup::Ages1To30: return age_in(1, 30);
        case Subgroup::Ages31To60: return age_in(31, 60);
        case Subgroup::Ages61To90: return age_in(61, 90);
    }
    return false;
}

std::optional<double> SubgroupReport::cell(std::string_view row, std::size_t level) const {
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] == row) return cells.at(r).at(level);
    }
    throw IndexError("subgroup report has no row '" + std::string(row) + "'");
}

SubgroupReport subgroup_accuracy(const PredictionLog& log, std::span<const SampleMeta> metadata, std::size_t levels) {
    SubgroupReport report;
    report.levels = levels;
    const std::size_t groups = kSubgroups.size();
    std::vector<std::uint64_t> hits(groups * levels, 0), seen(groups * levels, 0);
    for (const auto& p : log) {
        if (p.level >= levels) throw ContractError("prediction log entry at level " + std::to_string(p.level) +
                                                   " outside " + std::to_string(levels) + " levels");
        if (p.sample >= metadata.size()) throw ContractError("prediction log references unknown sample " +
                                                             std::to_string(p.sample));
        for (std::size_t g = 0; g < groups; ++g) {
            if (!in_subgroup(kSubgroups[g], metadata[p.sample])) continue;
            seen[g * levels + p.level]++;
            if (p.pred == p.label) hits[g * levels + p.level]++;
        }
    }
    for (std::size_t g = 0; g < groups; ++g) {
        report.rows.emplace_back(subgroup_name(kSubgroups[g]));
        std::vector<std::optional<double>> row(levels);
        for (std::size_t k = 0; k < levels; ++k) {
            if (seen[g * levels + k] > 0) {
                row[k] = 100.0 * static_cast<double>(hits[g * levels + k]) / static_cast<double>(seen[g * levels + k]);
            }
        }
        report.cells.push_back(std::move(row));
    }
    return report;
}

GapTable gap_analysis(const SubgroupReport& report) {
    for (Subgroup g : {Subgroup::Male, Subgroup::Female, Subgroup::Ages1To30, Subgroup::Ages61To90}) {
        if (std::find(report.rows.begin(), report.rows.end(), subgroup_name(g)) == report.rows.end()) {
            throw ContractError("gap analysis needs a '" + std::string(subgroup_name(g)) + "' row");
        }
    }
    auto diff = [](std::optional<double> a, std::optional<double> b) -> std::optional<double> {
        if (a && b) return *a - *b;
        return std::nullopt;
    };
    GapTable t;
    for (std::size_t k = 0; k < report.levels; ++k) {
        GapRow row;
        row.level = k;
        row.female_minus_male = diff(report.cell("Female", k), report.cell("Male", k));
        row.young_minus_old = diff(report.cell("Ages 1-30", k), report.cell("Ages 61-90", k));
        t.rows.push_back(row);
    }
    if (!t.rows.empty()) {
        t.sex_gap_change = diff(t.rows.back().female_minus_male, t.rows.front().female_minus_male);
        t.age_gap_change = diff(t.rows.back().young_minus_old, t.rows.front().young_minus_old);
    }
    return t;
}

TPTable tp_evolution(std::span<const std::optional<ConfusionMatrix>> per_level) {
    if (per_level.empty()) throw MetricError("no confusion matrices");
    std::size_t classes = 0;
    for (std::size_t k = 0; k < per_level.size(); ++k) {
        if (!per_level[k]) throw MetricError("missing confusion matrix for level L" + std::to_string(k));
        if (k == 0) classes = per_level[k]->classes;
        if (per_level[k]->classes != classes) throw MetricError("level L" + std::to_string(k) + " has a different class count");
    }
    TPTable t;
    for (std::size_t c = 0; c < classes; ++c) {
        t.classes.emplace_back(c < kClassCodes.size() ? std::string(kClassCodes[c]) : "C" + std::to_string(c));
        std::vector<std::uint64_t> row;
        for (const auto& cm : per_level) row.push_back(cm->at(c, c));
        t.counts.push_back(std::move(row));
    }
    return t;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::vector<std::vector<std::string_view>> csv_rows(std::string_view text) {
    std::vector<std::vector<std::string_view>> rows;
    std::size_t start = 0;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        const auto line = trim(text.substr(start, nl - start));
        if (!line.empty()) rows.push_back(split_commas(line));
        start = nl + 1;
    }
    return rows;
}

std::size_t level_header(const std::vector<std::string_view>& header, std::string_view first) {
    if (header.empty() || header[0] != first) {
        throw FormatError("CSV header must start with '" + std::string(first) + "'");
    }
    for (std::size_t k = 1; k < header.size(); ++k) {
        if (header[k] != "L" + std::to_string(k - 1)) {
            throw FormatError("CSV header column " + std::to_string(k) + " must be L" + std::to_string(k - 1));
        }
    }
    if (header.size() < 2) throw FormatError("CSV has no level columns");
    return header.size() - 1;
}

std::string levels_header(std::string_view first, std::size_t levels) {
    std::string s(first);
    for (std::size_t k = 0; k < levels; ++k) s += ",L" + std::to_string(k);
    return s + "\n";
}

std::string normalize_subgroup(std::string_view name) {
    std::string compact;
    for (char c : name) {
        if (!std::isspace(static_cast<unsigned char>(c))) compact += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    for (Subgroup g : kSubgroups) {
        std::string canon;
        for (char c : subgroup_name(g)) {
            if (c != ' ') canon += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        }
        if (compact == canon) return std::string(subgroup_name(g));
    }
    throw FormatError("unknown subgroup row '" + std::string(name) + "'");
}

}  // namespace

std::string subgroup_csv(const SubgroupReport& report) {
    std::string out = levels_header("subgroup", report.levels);
    for (std::size_t r = 0; r < report.rows.size(); ++r) {
        out += report.rows[r];
        for (const auto& cell : report.cells[r]) out += "," + (cell ? format_percent(*cell) : std::string());
        out += "\n";
    }
    return out;
}

SubgroupReport parse_subgroup_csv(std::string_view text) {
    const auto rows = csv_rows(text);
    if (rows.empty()) throw FormatError("empty subgroup CSV");
    SubgroupReport report;
    report.levels = level_header(rows[0], "subgroup");
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != report.levels + 1) {
            throw FormatError("subgroup CSV line " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                              " columns, expected " + std::to_string(report.levels + 1));
        }
        report.rows.push_back(normalize_subgroup(row[0]));
        std::vector<std::optional<double>> cells;
        for (std::size_t k = 1; k < row.size(); ++k) {
            if (row[k].empty()) {
                cells.emplace_back();
                continue;
            }
            double v = 0.0;
            auto [ptr, ec] = std::from_chars(row[k].data(), row[k].data() + row[k].size(), v);
            if (ec != std::errc() || ptr != row[k].data() + row[k].size() || v < 0.0 || v > 100.0) {
                throw FormatError("subgroup CSV line " + std::to_string(r + 1) + ": invalid accuracy '" +
                                  std::string(row[k]) + "'");
            }
            cells.emplace_back(v);
        }
        report.cells.push_back(std::move(cells));
    }
    return report;
}

std::string tp_table_csv(const TPTable& table) {
    const std::size_t levels = table.counts.empty() ? 0 : table.counts.front().size();
    std::string out = levels_header("class", levels);
    for (std::size_t c = 0; c < table.classes.size(); ++c) {
        out += table.classes[c];
        for (auto v : table.counts[c]) out += "," + std::to_string(v);
        out += "\n";
    }
    return out;
}

TPTable parse_tp_table_csv(std::string_view text) {
    const auto rows = csv_rows(text);
    if (rows.empty()) throw FormatError("empty TP table CSV");
    const std::size_t levels = level_header(rows[0], "class");
    TPTable t;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != levels + 1) throw FormatError("TP table line " + std::to_string(r + 1) + " has wrong width");
        const auto idx = class_index(row[0]);
        t.classes.push_back(idx ? std::string(kClassCodes[*idx]) : std::string(row[0]));
        std::vector<std::uint64_t> counts;
        for (std::size_t k = 1; k < row.size(); ++k) {
            std::uint64_t v = 0;
            auto [ptr, ec] = std::from_chars(row[k].data(), row[k].data() + row[k].size(), v);
            if (ec != std::errc() || ptr != row[k].data() + row[k].size()) {
                throw FormatError("TP table line " + std::to_string(r + 1) + ": invalid count '" + std::string(row[k]) + "'");
            }
            counts.push_back(v);
        }
        t.counts.push_back(std::move(counts));
    }
    return t;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
    std::string out = "true\\pred";
    auto label = [](std::size_t c) { return c < kClassCodes.size() ? std::string(kClassCodes[c]) : "C" + std::to_string(c); };
    for (std::size_t p = 0; p < cm.classes; ++p) out += "," + label(p);
    out += "\n";
    for (std::size_t t = 0; t < cm.classes; ++t) {
        out += label(t);
        for (std::size_t p = 0; p < cm.classes; ++p) out += "," + std::to_string(cm.at(t, p));
        out += "\n";
    }
    return out;
}

std::string gap_table_csv(const GapTable& gaps) {
    std::string out = "level,female_minus_male,ages_1_30_minus_61_90\n";
    auto fmt = [](const std::optional<double>& v) { return v ? format_percent(*v) : std::string(); };
    for (const auto& r : gaps.rows) {
        out += "L" + std::to_string(r.level) + "," + fmt(r.female_minus_male) + "," + fmt(r.young_minus_old) + "\n";
    }
    out += "change," + fmt(gaps.sex_gap_change) + "," + fmt(gaps.age_gap_change) + "\n";
    return out;
}

std::string report_json(std::span<const LevelMetrics> levels, const SubgroupReport& subgroups) {
    using nlohmann::json;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json doc;
    json jl = json::array();
    std::vector<std::optional<ConfusionMatrix>> cms;
    for (const auto& lm : levels) {
        json counts = json::array();
        for (std::size_t t = 0; t < lm.confusion.classes; ++t) {
            json row = json::array();
            for (std::size_t p = 0; p < lm.confusion.classes; ++p) row.push_back(lm.confusion.at(t, p));
            counts.push_back(row);
        }
        json recall = json::array();
        for (const auto& r : recall_per_class(lm.confusion)) recall.push_back(opt(r));
        jl.push_back({{"level", lm.level},
                      {"total", lm.confusion.total},
                      {"accuracy", lm.confusion.total ? json(accuracy(lm.confusion)) : json(nullptr)},
                      {"confusion", counts},
                      {"recall", recall}});
        cms.emplace_back(lm.confusion);
    }
    doc["levels"] = jl;
    if (!cms.empty()) {
        const TPTable tp = tp_evolution(cms);
        json jt = json::object();
        for (std::size_t c = 0; c < tp.classes.size(); ++c) jt[tp.classes[c]] = tp.counts[c];
        doc["tp_table"] = jt;
    }
    json js = json::object();
    for (std::size_t r = 0; r < subgroups.rows.size(); ++r) {
        json row = json::array();
        for (const auto& c : subgroups.cells[r]) row.push_back(opt(c));
        js[subgroups.rows[r]] = row;
    }
    doc["subgroups"] = js;
    const GapTable gaps = gap_analysis(subgroups);
    json jg = json::array();
    for (const auto& r : gaps.rows) {
        jg.push_back({{"level", r.level},
                      {"female_minus_male", opt(r.female_minus_male)},
                      {"ages_1_30_minus_61_90", opt(r.young_minus_old)}});
    }
    doc["gaps"] = {{"per_level", jg},
                   {"female_minus_male_change", opt(gaps.sex_gap_change)},
                   {"ages_1_30_minus_61_90_change", opt(gaps.age_gap_change)}};
    return doc.dump(2) + "\n";
}

}  // namespace lth
