// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "lth/error.hpp"

namespace lth {

void PruneSchedule::validate() const {
    if (rounds < 1) throw ParameterError("schedule needs at least one round");
    if (!(per_level_fraction >= 0.0)) throw ParameterError("per-level fraction must be non-negative");
    if (per_level_fraction * static_cast<double>(rounds - 1) >= 1.0) {
        throw ParameterError("final cumulative sparsity must stay below 1");
    }
    if (epochs_per_round < 1) throw ParameterError("each round needs at least one epoch");
}

double PruneSchedule::target(std::size_t level) const {
    if (level >= rounds) throw IndexError("level " + std::to_string(level) + " outside schedule");
    return per_level_fraction * static_cast<double>(level);
}

std::vector<PruneLevel> PruneSchedule::levels() const {
    validate();
    std::vector<PruneLevel> out;
    for (std::size_t k = 0; k < rounds; ++k) out.push_back({k, target(k), epochs_per_round});
    return out;
}

std::size_t prune_count(double target, std::size_t total) {
    if (!(target >= 0.0 && target < 1.0)) {
        throw ParameterError("sparsity target must lie in [0, 1), got " + std::to_string(target));
    }
    // The epsilon absorbs representation error in decimal targets like 0.02*7.
    return static_cast<std::size_t>(std::floor(target * static_cast<double>(total) + 1e-9));
}

namespace {

struct Candidate {
    float magnitude;
    std::uint32_t param;
    std::uint32_t index;
};

bool before(const Candidate& a, const Candidate& b) {
    if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
    if (a.param != b.param) return a.param < b.param;
    return a.index < b.index;
}

struct Selection {
    std::size_t already_masked = 0;
    std::size_t count = 0;
    std::vector<Candidate> chosen;  // newly pruned, in pooled order
    float first_survivor = std::numeric_limits<float>::infinity();
};

Selection select(std::span<const Parameter> params, double target) {
    std::size_t total = 0;
    Selection sel;
    std::vector<Candidate> open;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const Parameter& p = params[pi];
        if (!p.prunable) continue;
        total += p.size();
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p.mask[i] == 0.0f) {
                ++sel.already_masked;
            } else {
                open.push_back({std::fabs(p.value[i]), static_cast<std::uint32_t>(pi), static_cast<std::uint32_t>(i)});
            }
        }
    }
    if (total == 0) throw ContractError("no prunable weights");
    sel.count = prune_count(target, total);
    if (sel.count < sel.already_masked) {
        throw InvariantError("mask regression: target " + std::to_string(target) + " keeps fewer zeros (" +
                             std::to_string(sel.count) + ") than already masked (" +
                             std::to_string(sel.already_masked) + ")");
    }
    const std::size_t fresh = sel.count - sel.already_masked;
    if (fresh > 0) {
        std::nth_element(open.begin(), open.begin() + static_cast<std::ptrdiff_t>(fresh - 1), open.end(), before);
        sel.chosen.assign(open.begin(), open.begin() + static_cast<std::ptrdiff_t>(fresh));
        std::sort(sel.chosen.begin(), sel.chosen.end(), before);
    }
    if (fresh < open.size()) {
        auto rest = open.begin() + static_cast<std::ptrdiff_t>(fresh);
        sel.first_survivor = std::min_element(rest, open.end(), before)->magnitude;
    }
    return sel;
}

}  // namespace

double global_threshold(std::span<const Parameter> params, double target) {
    const Selection sel = select(params, target);
    if (!sel.chosen.empty()) return sel.chosen.back().magnitude;
    if (sel.count > 0) return 0.0;  // only previously masked weights
    // Strictly below the smallest pooled magnitude.
    const double smallest = sel.already_masked > 0 ? 0.0 : static_cast<double>(sel.first_survivor);
    return std::nextafter(smallest, -std::numeric_limits<double>::infinity());
}

TicketState apply_prune(std::span<Parameter> params, double threshold, double target, std::size_t level) {
    const Selection sel = select(params, target);
    if (!sel.chosen.empty() && static_cast<double>(sel.chosen.back().magnitude) > threshold) {
        throw ParameterError("threshold " + std::to_string(threshold) + " does not match target " +
                             std::to_string(target));
    }
    if (static_cast<double>(sel.first_survivor) < threshold) {
        throw ParameterError("threshold " + std::to_string(threshold) + " would prune more than target " +
                             std::to_string(target));
    }
    for (const auto& c : sel.chosen) {
        Parameter& p = params[c.param];
        p.mask[c.index] = 0.0f;
        p.value[c.index] = 0.0f;
    }
    TicketState state = ticket_state(params, level);
    state.target = target;
    if (state.masked != sel.count) {
        throw InvariantError("pruning produced " + std::to_string(state.masked) + " zeros, expected " +
                             std::to_string(sel.count));
    }
    return state;
}

void rewind(Network& net) {
    for (const auto& p : net.parameters()) {
        if (!p.has_snapshot) throw ContractError("cannot rewind '" + p.name + "': no initial snapshot");
    }
    for (auto& p : net.parameters()) {
        for (std::size_t i = 0; i < p.size(); ++i) p.value[i] = p.mask[i] != 0.0f ? p.init_snapshot[i] : 0.0f;
    }
}

void rewind(Network& net, Adam& optimizer) {
    rewind(net);
    optimizer.reset();
}

TicketState ticket_state(std::span<const Parameter> params, std::size_t level) {
    TicketState s;
    s.level = level;
    for (const auto& p : params) {
        if (!p.prunable) continue;
        s.total += p.size();
        s.masked += p.masked_count();
    }
    s.target = s.total ? static_cast<double>(s.masked) / static_cast<double>(s.total) : 0.0;
    return s;
}

double sparsity(const TicketState& state) {
    if (state.total == 0) return 0.0;
    return static_cast<double>(state.masked) / static_cast<double>(state.total);
}

}  // namespace lth
