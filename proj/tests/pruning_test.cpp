// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "lth/error.hpp"
#include "lth/model.hpp"
#include "lth/pruning.hpp"
#include "oracles.hpp"

namespace {

using lth::Shape;
using lth::Tensor;

std::vector<lth::Parameter> single_layer(std::vector<float> values) {
    const std::size_t n = values.size();
    std::vector<lth::Parameter> ps{lth::Parameter("w", Tensor(Shape{n}, std::move(values)), "head", true)};
    return ps;
}

// Pooled sort-and-cut: the first `count` weights ordered by (already
// masked first, |w|, registry index, flat index).
std::vector<std::vector<bool>> sort_oracle(const std::vector<lth::Parameter>& ps, std::size_t count) {
    struct Key {
        bool masked;
        float magnitude;
        std::size_t param, index;
    };
    std::vector<Key> keys;
    for (std::size_t p = 0; p < ps.size(); ++p) {
        if (!ps[p].prunable) continue;
        for (std::size_t i = 0; i < ps[p].size(); ++i) {
            keys.push_back({ps[p].mask[i] == 0.0f, std::abs(ps[p].value[i]), p, i});
        }
    }
    std::stable_sort(keys.begin(), keys.end(), [](const Key& a, const Key& b) {
        if (a.masked != b.masked) return a.masked;
        if (a.magnitude != b.magnitude) return a.magnitude < b.magnitude;
        if (a.param != b.param) return a.param < b.param;
        return a.index < b.index;
    });
    std::vector<std::vector<bool>> pruned;
    for (const auto& p : ps) pruned.emplace_back(p.size(), false);
    for (std::size_t j = 0; j < count; ++j) pruned[keys[j].param][keys[j].index] = true;
    return pruned;
}

std::vector<lth::Parameter> random_params(std::mt19937_64& gen, std::size_t total, bool with_ties) {
    std::vector<lth::Parameter> ps;
    std::size_t left = total;
    int idx = 0;
    while (left > 0) {
        const std::size_t n = std::min<std::size_t>(left, std::uniform_int_distribution<std::size_t>(1, total)(gen));
        Tensor v = oracle::random_tensor({n}, gen);
        if (with_ties) {
            for (auto& x : v.data()) x = std::round(x * 8.0f) / 8.0f;
        }
        ps.emplace_back("p" + std::to_string(idx), v, "head", true);
        ps.emplace_back("p" + std::to_string(idx) + ".bias", Tensor(Shape{1}, 0.0f), "head", false);
        ++idx;
        left -= n;
    }
    return ps;
}

TEST(PruneSchedule, CumulativeLadder) {
    const lth::PruneSchedule s;
    EXPECT_EQ(s.rounds, 10u);
    EXPECT_EQ(s.epochs_per_round, 20u);
    EXPECT_DOUBLE_EQ(s.target(0), 0.0);
    EXPECT_NEAR(s.target(1), 0.02, 1e-15);
    EXPECT_NEAR(s.target(9), 0.18, 1e-15);
    const auto levels = s.levels();
    ASSERT_EQ(levels.size(), 10u);
    for (std::size_t k = 1; k < levels.size(); ++k) EXPECT_GT(levels[k].target, levels[k - 1].target);
    EXPECT_THROW(s.target(10), lth::IndexError);
    EXPECT_THROW((lth::PruneSchedule{0.2, 6, 1}.validate()), lth::ParameterError);
    EXPECT_NO_THROW((lth::PruneSchedule{0.1, 10, 1}.validate()));
}

TEST(PruneCount, FloorOfTargetTimesN) {
    EXPECT_EQ(lth::prune_count(0.0, 1000), 0u);
    EXPECT_EQ(lth::prune_count(0.18, 1000), 180u);
    EXPECT_EQ(lth::prune_count(0.02 * 3, 100), 6u);  // 0.06000000000000001 * 100
    EXPECT_EQ(lth::prune_count(0.5, 3), 1u);
}

TEST(GlobalThreshold, ZeroTargetIsBelowEveryMagnitude) {
    auto ps = single_layer({0.1f, -0.5f, 0.3f, 0.05f});
    const double t = lth::global_threshold(ps, 0.0);
    EXPECT_LT(t, static_cast<double>(0.05f));
    const auto state = lth::apply_prune(ps, t, 0.0);
    EXPECT_EQ(state.masked, 0u);
}

TEST(GlobalThreshold, HalfOfFourWeights) {
    auto ps = single_layer({0.1f, -0.5f, 0.3f, 0.05f});
    const double t = lth::global_threshold(ps, 0.5);
    EXPECT_GE(t, 0.1f);
    EXPECT_LT(t, 0.3f);
    lth::apply_prune(ps, t, 0.5);
    EXPECT_TRUE(lth::bit_equal(ps[0].mask, Tensor(Shape{4}, {0, 1, 1, 0})));
    EXPECT_TRUE(lth::bit_equal(ps[0].value, Tensor(Shape{4}, {0, -0.5f, 0.3f, 0})));
}

TEST(GlobalThreshold, RejectsTargetsOutsideUnitInterval) {
    auto ps = single_layer({0.1f, 0.2f});
    EXPECT_THROW(lth::global_threshold(ps, 1.0), lth::ParameterError);
    EXPECT_THROW(lth::global_threshold(ps, -0.01), lth::ParameterError);
}

TEST(GlobalThreshold, TiesPruneLowerRegistryAndIndexFirst) {
    std::vector<lth::Parameter> ps{lth::Parameter("a", Tensor(Shape{3}, {0.2f, 0.1f, 0.1f}), "b1", true),
                                   lth::Parameter("b", Tensor(Shape{2}, {0.1f, 0.9f}), "head", true)};
    lth::apply_prune(ps, lth::global_threshold(ps, 0.4), 0.4);
    EXPECT_TRUE(lth::bit_equal(ps[0].mask, Tensor(Shape{3}, {1, 0, 0})));
    EXPECT_TRUE(lth::bit_equal(ps[1].mask, Tensor(Shape{2}, {1, 1})));
}

TEST(ApplyPrune, IdempotentAndMonotone) {
    std::mt19937_64 gen(2);
    auto ps = random_params(gen, 1000, false);
    lth::apply_prune(ps, lth::global_threshold(ps, 0.1), 0.1);
    const auto first = ps;
    lth::apply_prune(ps, lth::global_threshold(ps, 0.1), 0.1);
    for (std::size_t p = 0; p < ps.size(); ++p) EXPECT_TRUE(lth::bit_equal(ps[p].mask, first[p].mask));
    // Survivors change magnitude between levels; earlier zeros must stay.
    for (auto& p : ps) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p.mask[i] != 0.0f && p.prunable) p.value[i] *= -1.5f;
        }
    }
    lth::apply_prune(ps, lth::global_threshold(ps, 0.2), 0.2);
    for (std::size_t p = 0; p < ps.size(); ++p)
        for (std::size_t i = 0; i < ps[p].size(); ++i)
            if (first[p].mask[i] == 0.0f) EXPECT_EQ(ps[p].mask[i], 0.0f);
}

TEST(ApplyPrune, ThresholdFromAnotherTargetIsRejected) {
    std::mt19937_64 gen(3);
    auto ps = random_params(gen, 500, false);
    const double t = lth::global_threshold(ps, 0.1);
    EXPECT_THROW(lth::apply_prune(ps, t, 0.2), lth::ParameterError);
}

TEST(ApplyPrune, LoweringTheTargetIsAnInvariantViolation) {
    std::mt19937_64 gen(4);
    auto ps = random_params(gen, 500, false);
    lth::apply_prune(ps, lth::global_threshold(ps, 0.2), 0.2);
    EXPECT_THROW(lth::apply_prune(ps, lth::global_threshold(ps, 0.1), 0.1), lth::InvariantError);
}

TEST(ApplyPrune, ThousandWeightsAtEighteenPercentMatchesOracle) {
    std::mt19937_64 gen(5);
    auto ps = random_params(gen, 1000, false);
    const auto expected = sort_oracle(ps, 180);
    const auto state = lth::apply_prune(ps, lth::global_threshold(ps, 0.18), 0.18);
    EXPECT_EQ(state.masked, 180u);
    EXPECT_EQ(state.total, 1000u);
    for (std::size_t p = 0; p < ps.size(); ++p)
        for (std::size_t i = 0; i < ps[p].size(); ++i) EXPECT_EQ(ps[p].mask[i] == 0.0f, expected[p][i]);
}

TEST(ApplyPrune, RandomizedLaddersMatchPooledSortOracle) {
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(100, 3000)(gen);
        auto ps = random_params(gen, n, trial % 3 == 0);
        for (std::size_t k = 1; k <= 9; ++k) {
            const double target = 0.02 * static_cast<double>(k);
            const std::size_t count = 2 * k * n / 100;
            const auto expected = sort_oracle(ps, count);
            const auto state = lth::apply_prune(ps, lth::global_threshold(ps, target), target, k);
            ASSERT_EQ(state.masked, count) << "trial " << trial << " level " << k;
            for (std::size_t p = 0; p < ps.size(); ++p)
                for (std::size_t i = 0; i < ps[p].size(); ++i)
                    ASSERT_EQ(ps[p].mask[i] == 0.0f, expected[p][i]) << "trial " << trial << " level " << k;
            // Retraining moves survivors before the next level.
            for (auto& p : ps)
                for (std::size_t i = 0; i < p.size(); ++i)
                    if (p.mask[i] != 0.0f) p.value[i] += static_cast<float>(std::normal_distribution<>(0, 0.1)(gen));
        }
    }
}

TEST(Sparsity, ExactFraction) {
    std::vector<lth::Parameter> ps{lth::Parameter("w", Tensor(Shape{10}, 1.0f), "head", true)};
    EXPECT_DOUBLE_EQ(lth::sparsity(lth::ticket_state(ps)), 0.0);
    for (std::size_t i : {1, 4, 7}) {
        ps[0].mask[i] = 0.0f;
        ps[0].value[i] = 0.0f;
    }
    EXPECT_DOUBLE_EQ(lth::sparsity(lth::ticket_state(ps)), 0.3);
}

TEST(Rewind, RequiresSnapshot) {
    lth::Rng rng(1);
    auto net = lth::build_network(lth::ArchitectureConfig{}, rng);
    EXPECT_THROW(lth::rewind(net), lth::ContractError);
}

TEST(Rewind, UnprunedNetworkReturnsToInitialization) {
    lth::Rng rng(1);
    auto net = lth::build_network(lth::ArchitectureConfig{}, rng);
    lth::snapshot_init(net);
    const auto init = net.parameters();
    for (auto& p : net.parameters()) p.value.fill(0.25f);
    lth::rewind(net);
    for (std::size_t i = 0; i < init.size(); ++i) EXPECT_TRUE(lth::bit_equal(net.parameters()[i].value, init[i].value));
}

TEST(Rewind, PrunedSurvivorsEqualSnapshotAndIsIdempotent) {
    lth::Rng rng(2);
    auto net = lth::build_network(lth::ArchitectureConfig{}, rng);
    lth::snapshot_init(net);
    std::mt19937_64 gen(3);
    for (auto& p : net.parameters()) p.value = oracle::random_tensor(p.value.shape(), gen);
    auto& params = net.parameters();
    lth::apply_prune(params, lth::global_threshold(params, 0.18), 0.18, 9);
    lth::Adam adam;
    lth::rewind(net, adam);
    const auto once = net.parameters();
    lth::rewind(net);
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        EXPECT_TRUE(lth::bit_equal(p.value, once[k].value));
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (p.mask[i] == 0.0f) {
                EXPECT_EQ(std::bit_cast<std::uint32_t>(p.value[i]), 0u);
            } else {
                EXPECT_EQ(std::bit_cast<std::uint32_t>(p.value[i]), std::bit_cast<std::uint32_t>(p.init_snapshot[i]));
            }
        }
    }
    EXPECT_NEAR(lth::sparsity(lth::ticket_state(params)), 0.18, 1.0 / double(net.prunable_count()));
    EXPECT_EQ(adam.steps(), 0);
}

TEST(Pruning, FrozenAtL0WeightsStayInThePool) {
    lth::Rng rng(4);
    auto net = lth::build_network(lth::ArchitectureConfig{}, rng);
    lth::set_freeze_policy(net, lth::FreezePolicy::L0);
    auto& b1 = net.parameter("backbone.b1.conv.weight");
    b1.value.fill(1e-6f);
    auto& params = net.parameters();
    lth::apply_prune(params, lth::global_threshold(params, 0.02), 0.02, 1);
    EXPECT_EQ(b1.masked_count(), b1.size());
}

}  // namespace
