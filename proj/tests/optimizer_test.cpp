// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lth/autograd.hpp"
#include "lth/error.hpp"
#include "lth/optimizer.hpp"
#include "oracles.hpp"

namespace {

using lth::Shape;
using lth::Tensor;

lth::Parameter scalar_param(float w, float g) {
    lth::Parameter p("w", Tensor(Shape{1}, {w}), "head", true);
    p.grad[0] = g;
    p.grad_ready = true;
    return p;
}

TEST(Adam, DefaultHyperparameters) {
    const lth::AdamConfig c;
    EXPECT_DOUBLE_EQ(c.lr, 0.001);
    EXPECT_DOUBLE_EQ(c.weight_decay, 1e-5);
    EXPECT_DOUBLE_EQ(c.beta1, 0.9);
    EXPECT_DOUBLE_EQ(c.beta2, 0.999);
    EXPECT_DOUBLE_EQ(c.eps, 1e-8);
}

TEST(Adam, ZeroGradientNoDecayLeavesWeight) {
    lth::Adam adam({.lr = 0.1, .weight_decay = 0.0});
    std::vector<lth::Parameter> ps{scalar_param(1.0f, 0.0f)};
    adam.step(ps);
    EXPECT_EQ(ps[0].value[0], 1.0f);
    EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, FirstStepMatchesHandRecurrence) {
    lth::Adam adam({.lr = 0.1, .weight_decay = 0.0});
    std::vector<lth::Parameter> ps{scalar_param(0.5f, 0.2f)};
    adam.step(ps);
    const double g = 0.2f, m = 0.1 * g, v = 0.001 * g * g;
    const double expected = 0.5 - 0.1 * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
    EXPECT_NEAR(ps[0].value[0], expected, 1e-7);
}

TEST(Adam, MultiStepMatchesDoubleOracleWithDecay) {
    const lth::AdamConfig cfg{.lr = 0.01, .beta1 = 0.8, .beta2 = 0.99, .eps = 1e-6, .weight_decay = 0.1};
    lth::Adam adam(cfg);
    std::vector<lth::Parameter> ps{scalar_param(0.7f, 0.0f)};
    double w = 0.7f, m = 0, v = 0;
    for (int t = 1; t <= 10; ++t) {
        const float grad = 0.05f * static_cast<float>(t) - 0.2f;
        ps[0].grad[0] = grad;
        ps[0].grad_ready = true;
        adam.step(ps);
        const double g = grad + cfg.weight_decay * w;
        m = cfg.beta1 * m + (1 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
        w -= cfg.lr * (m / (1 - std::pow(cfg.beta1, t))) / (std::sqrt(v / (1 - std::pow(cfg.beta2, t))) + cfg.eps);
        EXPECT_NEAR(ps[0].value[0], w, 1e-6) << "step " << t;
    }
}

TEST(Adam, MissingGradientIsContractError) {
    lth::Adam adam;
    std::vector<lth::Parameter> ps{scalar_param(1.0f, 0.0f)};
    ps[0].grad_ready = false;
    EXPECT_THROW(adam.step(ps), lth::ContractError);
    ps[0].trainable = false;
    EXPECT_NO_THROW(adam.step(ps));
}

TEST(Adam, MaskedPositionsStayExactlyZero) {
    std::mt19937_64 gen(3);
    lth::Parameter p("w", oracle::random_tensor({50}, gen), "head", true);
    for (std::size_t i = 0; i < 50; i += 3) {
        p.mask[i] = 0.0f;
        p.value[i] = 0.0f;
    }
    std::vector<lth::Parameter> ps{p};
    lth::Adam adam;
    for (int step = 0; step < 30; ++step) {
        ps[0].grad = oracle::random_tensor({50}, gen);
        ps[0].grad_ready = true;
        adam.step(ps);
        const auto* s = adam.moments("w");
        ASSERT_NE(s, nullptr);
        for (std::size_t i = 0; i < 50; i += 3) {
            EXPECT_EQ(std::bit_cast<std::uint32_t>(ps[0].value[i]), 0u);
            EXPECT_EQ(std::bit_cast<std::uint32_t>(s->m[i]), 0u);
            EXPECT_EQ(std::bit_cast<std::uint32_t>(s->v[i]), 0u);
        }
        for (float v : s->v.data()) EXPECT_GE(v, 0.0f);
    }
}

TEST(Adam, FrozenParametersAndStateUntouched) {
    std::mt19937_64 gen(4);
    std::vector<lth::Parameter> ps{lth::Parameter("a", oracle::random_tensor({8}, gen), "b1", true),
                                   lth::Parameter("b", oracle::random_tensor({8}, gen), "head", true)};
    ps[0].trainable = false;
    const Tensor frozen = ps[0].value;
    lth::Adam adam;
    for (int step = 0; step < 20; ++step) {
        for (auto& p : ps) {
            p.grad = oracle::random_tensor({8}, gen);
            p.grad_ready = true;
        }
        adam.step(ps);
    }
    EXPECT_TRUE(lth::bit_equal(ps[0].value, frozen));
    EXPECT_EQ(adam.moments("a"), nullptr);
    EXPECT_NE(adam.moments("b"), nullptr);
}

TEST(ZeroGrads, ClearsAccumulatedGradients) {
    lth::Parameter p("w", Tensor(Shape{3}, {1, 2, 3}), "head", true);
    std::vector<lth::Parameter> ps{p};
    {
        lth::Tape tape;
        auto w = tape.parameter(ps[0]);
        auto loss = lth::sum(lth::mul(w, w));
        tape.backward(loss);
        EXPECT_TRUE(lth::bit_equal(ps[0].grad, Tensor(Shape{3}, {2, 4, 6})));
        tape.backward(loss);
        EXPECT_TRUE(lth::bit_equal(ps[0].grad, Tensor(Shape{3}, {4, 8, 12})));
    }
    lth::zero_grads(ps);
    EXPECT_TRUE(lth::bit_equal(ps[0].grad, Tensor(Shape{3}, 0.0f)));
    EXPECT_FALSE(ps[0].grad_ready);
}

// f(w) = sum((w - c)^2) on the tape; returns f before the step.
double quadratic_step(std::vector<lth::Parameter>& ps, const Tensor& c, lth::Adam& adam) {
    lth::zero_grads(ps);
    Tensor neg_c(Shape{c.size()});
    for (std::size_t i = 0; i < c.size(); ++i) neg_c[i] = -c[i];
    lth::Tape tape;
    auto d = lth::add_bias(tape.parameter(ps[0]), tape.constant(neg_c));
    auto loss = lth::sum(lth::mul(d, d));
    tape.backward(loss);
    adam.step(ps);
    return loss.value()[0];
}

TEST(Adam, QuadraticLossDecreasesMonotonically) {
    std::mt19937_64 gen(5);
    const Tensor c = oracle::random_tensor({1, 6}, gen);
    std::vector<lth::Parameter> ps{lth::Parameter("w", Tensor(Shape{1, 6}, 0.0f), "head", true)};
    lth::Adam adam({.lr = 0.01, .weight_decay = 0.0});
    double previous = INFINITY;
    for (int step = 0; step < 100; ++step) {
        const double f = quadratic_step(ps, c, adam);
        if (step >= 5) EXPECT_LE(f, previous) << "step " << step;
        previous = f;
    }
}

TEST(Adam, ConvexProbeConverges) {
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor c = oracle::random_tensor({1, 10}, gen);
        std::vector<lth::Parameter> ps{lth::Parameter("w", Tensor(Shape{1, 10}, 0.0f), "head", true)};
        lth::Adam adam({.lr = 0.05, .weight_decay = 0.0});
        for (int step = 0; step < 200; ++step) quadratic_step(ps, c, adam);
        double dist = 0.0;
        for (std::size_t i = 0; i < 10; ++i) dist += std::pow(double(ps[0].value[i]) - c[i], 2);
        EXPECT_LT(std::sqrt(dist), 1e-2) << "trial " << trial;
    }
}

TEST(Adam, StateRoundTripsThroughTable) {
    std::vector<lth::Parameter> ps{scalar_param(0.5f, 0.3f)};
    lth::Adam adam;
    adam.step(ps);
    lth::TensorTable table;
    adam.export_state(table);
    lth::Adam restored;
    restored.import_state(table);
    EXPECT_EQ(restored.steps(), 1);
    ASSERT_NE(restored.moments("w"), nullptr);
    EXPECT_TRUE(lth::bit_equal(restored.moments("w")->m, adam.moments("w")->m));
    EXPECT_TRUE(lth::bit_equal(restored.moments("w")->v, adam.moments("w")->v));
}

}  // namespace
