// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lth/model.hpp"
#include "lth/optimizer.hpp"
#include "lth/parameter.hpp"

namespace lth {

struct PruneLevel {
    std::size_t index = 0;
    double target = 0.0;  // cumulative fraction of the original prunable weights
    std::size_t epochs = 20;
};

/// Cumulative ladder: level k removes p*k of the original prunable weights,
/// so L0 is dense and the defaults end at 0.18 after L9.
struct PruneSchedule {
    double per_level_fraction = 0.02;
    std::size_t rounds = 10;
    std::size_t epochs_per_round = 20;

    void validate() const;
    double target(std::size_t level) const;
    std::vector<PruneLevel> levels() const;
};

struct TicketState {
    std::size_t level = 0;
    double target = 0.0;
    std::size_t masked = 0;
    std::size_t total = 0;
};

/// Number of weights a cumulative target removes out of `total`.
std::size_t prune_count(double target, std::size_t total);

/// Magnitude at which exactly prune_count(target, N) prunable weights,
/// pooled over every layer, fall at or below. Already masked weights count
/// as magnitude 0 and are always selected first; equal magnitudes are
/// ordered by registry position then flat index. For a zero count the
/// result lies below every magnitude.
double global_threshold(std::span<const Parameter> params, double target);

/// Masks exactly prune_count(target, N) prunable weights (the same
/// selection global_threshold describes) and zeroes them. Masks only grow.
TicketState apply_prune(std::span<Parameter> params, double threshold, double target, std::size_t level = 0);

/// value <- init_snapshot where mask is 1, 0 elsewhere.
void rewind(Network& net);
/// Rewinds and resets the optimizer.
void rewind(Network& net, Adam& optimizer);

TicketState ticket_state(std::span<const Parameter> params, std::size_t level = 0);
double sparsity(const TicketState& state);

}  // namespace lth
