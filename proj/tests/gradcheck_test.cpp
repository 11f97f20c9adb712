// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Central-difference checks of every layer type against double-precision
// reference forwards. Each case projects the op output onto a random
// tensor R so the checked function is the scalar sum(R * op(x)).
//
// Error metric: |analytic - numeric| / max(|analytic|, |numeric|, floor),
// floor = 1e-2 * max |numeric| over the tensor, required < 1e-3.

#include <gtest/gtest.h>

#include <chrono>
#include <functional>
#include <random>

#include "lth/autograd.hpp"
#include "lth/model.hpp"
#include "lth/optimizer.hpp"
#include "oracles.hpp"

namespace {

using lth::Shape;
using lth::Tensor;
using Doubles = std::vector<double>;

constexpr double kStep = 1e-3;
constexpr double kTolerance = 1e-3;
constexpr int kInstances = 20;

// Reference forward: returns the scalar and an activation pattern (relu
// signs, pool winners) so a difference quotient that crosses a kink can be
// recognized and retried with a smaller step.
using Reference = std::function<double(const std::vector<Doubles>&, std::vector<int>* pattern)>;
using Library = std::function<lth::Var(lth::Tape&, const std::vector<lth::Var>&)>;

double worst_relative_error(const Tensor& analytic, const Doubles& numeric) {
    double scale = 0.0;
    for (double n : numeric) scale = std::max(scale, std::abs(n));
    const double floor = std::max(1e-2 * scale, 1e-12);
    double worst = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
    }
    return worst;
}

Doubles numeric_gradient(const Reference& ref, std::vector<Doubles> xs, std::size_t which) {
    Doubles g(xs[which].size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double orig = xs[which][i];
        for (double h : {kStep, 1e-6}) {
            std::vector<int> p_plus, p_minus;
            xs[which][i] = orig + h;
            const double fp = ref(xs, &p_plus);
            xs[which][i] = orig - h;
            const double fm = ref(xs, &p_minus);
            g[i] = (fp - fm) / (2 * h);
            if (p_plus == p_minus) break;
        }
        xs[which][i] = orig;
    }
    return g;
}

// Returns the worst error over all inputs.
double check(const std::vector<Tensor>& inputs, const Library& lib, const Reference& ref) {
    lth::Tape tape;
    std::vector<lth::Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    tape.backward(lib(tape, vars));
    std::vector<Doubles> xs;
    for (const auto& t : inputs) xs.push_back(oracle::widen(t));
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        worst = std::max(worst, worst_relative_error(tape.grad(vars[k]), numeric_gradient(ref, xs, k)));
    }
    return worst;
}

double project(const Doubles& y, const Doubles& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
}

lth::Var project(lth::Tape& tape, lth::Var y, const Tensor& r) { return lth::sum(lth::mul(y, tape.constant(r))); }

std::size_t pick(std::mt19937_64& gen, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(gen);
}

// Values in [-1, 1] at least `gap` away from zero.
Tensor away_from_zero(Shape shape, std::mt19937_64& gen, double gap) {
    Tensor t = oracle::random_tensor(std::move(shape), gen);
    std::uniform_real_distribution<double> mag(gap, 1.0);
    std::bernoulli_distribution sign(0.5);
    for (auto& v : t.data()) v = static_cast<float>((sign(gen) ? 1 : -1) * mag(gen));
    return t;
}

TEST(GradCheck, Matmul) {
    std::mt19937_64 gen(101);
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t m = pick(gen, 1, 6), k = pick(gen, 1, 8), n = pick(gen, 1, 6);
        const Tensor r = oracle::random_tensor({m, n}, gen);
        const double err = check(
            {oracle::random_tensor({m, k}, gen), oracle::random_tensor({k, n}, gen)},
            [&](lth::Tape& t, const auto& v) { return project(t, lth::matmul(v[0], v[1]), r); },
            [&](const auto& x, std::vector<int>*) { return project(oracle::matmul(x[0], x[1], m, k, n), oracle::widen(r)); });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

TEST(GradCheck, AddBias) {
    std::mt19937_64 gen(102);
    for (int i = 0; i < kInstances; ++i) {
        const bool conv = i % 2 == 1;
        const std::size_t n = pick(gen, 1, 4), c = pick(gen, 1, 5), hw = conv ? pick(gen, 1, 4) : 1;
        const Shape xs = conv ? Shape{n, c, hw, hw} : Shape{n, c};
        const Tensor r = oracle::random_tensor(xs, gen);
        const double err = check(
            {oracle::random_tensor(xs, gen), oracle::random_tensor({c}, gen)},
            [&](lth::Tape& t, const auto& v) { return project(t, lth::add_bias(v[0], v[1]), r); },
            [&](const auto& x, std::vector<int>*) {
                Doubles y = x[0];
                for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[1][(j / (hw * hw)) % c];
                return project(y, oracle::widen(r));
            });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

TEST(GradCheck, Conv2d) {
    std::mt19937_64 gen(103);
    for (int i = 0; i < kInstances; ++i) {
        oracle::ConvDims d{pick(gen, 1, 2), pick(gen, 1, 3), pick(gen, 3, 7), pick(gen, 3, 7), pick(gen, 1, 3),
                           pick(gen, 1, 3), pick(gen, 1, 3), pick(gen, 1, 2), pick(gen, 0, 1)};
        const Tensor r = oracle::random_tensor({d.n, d.f, d.ho(), d.wo()}, gen);
        const double err = check(
            {oracle::random_tensor({d.n, d.c, d.h, d.w}, gen), oracle::random_tensor({d.f, d.c, d.kh, d.kw}, gen)},
            [&](lth::Tape& t, const auto& v) { return project(t, lth::conv2d(v[0], v[1], d.stride, d.pad), r); },
            [&](const auto& x, std::vector<int>*) { return project(oracle::conv2d(x[0], x[1], d), oracle::widen(r)); });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

TEST(GradCheck, Relu) {
    std::mt19937_64 gen(104);
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t n = pick(gen, 1, 40);
        const Tensor r = oracle::random_tensor({n}, gen);
        const double err = check(
            {away_from_zero({n}, gen, 1e-2)},
            [&](lth::Tape& t, const auto& v) { return project(t, lth::relu(v[0]), r); },
            [&](const auto& x, std::vector<int>* pattern) {
                Doubles y = x[0];
                for (auto& v : y) {
                    pattern->push_back(v > 0);
                    v = std::max(v, 0.0);
                }
                return project(y, oracle::widen(r));
            });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

TEST(GradCheck, MaxPool) {
    std::mt19937_64 gen(105);
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t n = pick(gen, 1, 2), c = pick(gen, 1, 3), h = pick(gen, 2, 8), w = pick(gen, 2, 8);
        const std::size_t size = pick(gen, 1, 2), stride = pick(gen, 1, 2);
        const std::size_t ho = (h - size) / stride + 1, wo = (w - size) / stride + 1;
        const Tensor r = oracle::random_tensor({n, c, ho, wo}, gen);
        // Distinct, well separated values keep every window's winner stable.
        Tensor x(Shape{n, c, h, w});
        std::vector<float> levels(x.size());
        for (std::size_t j = 0; j < levels.size(); ++j) levels[j] = -1.0f + 2.0f * float(j) / float(levels.size());
        std::shuffle(levels.begin(), levels.end(), gen);
        std::copy(levels.begin(), levels.end(), x.data().begin());
        const double err = check(
            {x}, [&](lth::Tape& t, const auto& v) { return project(t, lth::max_pool2d(v[0], size, stride), r); },
            [&](const auto& xs, std::vector<int>*) {
                return project(oracle::max_pool(xs[0], n, c, h, w, size, stride), oracle::widen(r));
            });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

TEST(GradCheck, Dropout) {
    std::mt19937_64 gen(106);
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t n = pick(gen, 1, 50);
        const double rate = std::uniform_real_distribution<double>(0.0, 0.9)(gen);
        const std::uint64_t seed = gen();
        const Tensor r = oracle::random_tensor({n}, gen);
        // The mask the library draws for this seed, observed on ones.
        lth::Rng probe(seed);
        lth::Tape probe_tape(false);
        const Tensor scale =
            lth::dropout(probe_tape.constant(Tensor(Shape{n}, 1.0f)), rate, lth::Mode::Train, probe).value();
        const double err = check(
            {oracle::random_tensor({n}, gen)},
            [&](lth::Tape& t, const auto& v) {
                lth::Rng rng(seed);
                return project(t, lth::dropout(v[0], rate, lth::Mode::Train, rng), r);
            },
            [&](const auto& x, std::vector<int>*) {
                Doubles y = x[0];
                for (std::size_t j = 0; j < n; ++j) y[j] *= scale[j];
                return project(y, oracle::widen(r));
            });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

TEST(GradCheck, FlattenAndMul) {
    std::mt19937_64 gen(107);
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t n = pick(gen, 1, 3), c = pick(gen, 1, 3), hw = pick(gen, 1, 4);
        const Tensor r = oracle::random_tensor({n, c * hw * hw}, gen);
        const Tensor other = oracle::random_tensor({n, c * hw * hw}, gen);
        const double err = check(
            {oracle::random_tensor({n, c, hw, hw}, gen), other},
            [&](lth::Tape& t, const auto& v) { return project(t, lth::mul(lth::flatten(v[0]), v[1]), r); },
            [&](const auto& x, std::vector<int>*) {
                Doubles y = x[0];
                for (std::size_t j = 0; j < y.size(); ++j) y[j] *= x[1][j];
                return project(y, oracle::widen(r));
            });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

TEST(GradCheck, SoftmaxCrossEntropy) {
    std::mt19937_64 gen(108);
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t n = pick(gen, 1, 6), c = pick(gen, 2, 8);
        std::vector<std::int32_t> labels(n);
        for (auto& l : labels) l = static_cast<std::int32_t>(pick(gen, 0, c - 1));
        const double err = check(
            {oracle::random_tensor({n, c}, gen, -3, 3)},
            [&](lth::Tape&, const auto& v) { return lth::softmax_cross_entropy(v[0], labels); },
            [&](const auto& x, std::vector<int>*) { return oracle::cross_entropy(x[0], labels, c); });
        EXPECT_LT(err, kTolerance) << "instance " << i;
    }
}

// Double-precision forward of a layer list, eval mode.
double network_reference(const std::vector<lth::LayerSpec>& layers, const std::vector<Doubles>& params,
                         Doubles x, Shape shape, const std::vector<std::int32_t>& labels, std::size_t classes,
                         std::vector<int>* pattern) {
    std::size_t next = 0;
    for (const auto& s : layers) {
        switch (s.kind) {
            case lth::LayerKind::Conv: {
                oracle::ConvDims d{shape[0], shape[1], shape[2], shape[3], s.out, s.kernel, s.kernel, s.stride, s.padding};
                x = oracle::conv2d(x, params[next++], d);
                if (s.bias) {
                    const auto& b = params[next++];
                    const std::size_t plane = d.ho() * d.wo();
                    for (std::size_t j = 0; j < x.size(); ++j) x[j] += b[(j / plane) % s.out];
                }
                shape = {d.n, d.f, d.ho(), d.wo()};
                break;
            }
            case lth::LayerKind::Linear: {
                x = oracle::matmul(x, params[next++], shape[0], s.in, s.out);
                if (s.bias) {
                    const auto& b = params[next++];
                    for (std::size_t j = 0; j < x.size(); ++j) x[j] += b[j % s.out];
                }
                shape = {shape[0], s.out};
                break;
            }
            case lth::LayerKind::Relu:
                for (auto& v : x) {
                    pattern->push_back(v > 0);
                    v = std::max(v, 0.0);
                }
                break;
            case lth::LayerKind::Pool: {
                const std::size_t ho = (shape[2] - s.kernel) / s.stride + 1, wo = (shape[3] - s.kernel) / s.stride + 1;
                Doubles y = oracle::max_pool(x, shape[0], shape[1], shape[2], shape[3], s.kernel, s.stride);
                for (std::size_t j = 0; j < y.size(); ++j) {
                    // Record which window element wins.
                    const std::size_t plane = j / (ho * wo), oy = (j / wo) % ho, ox = j % wo;
                    int winner = 0;
                    for (std::size_t ky = 0, idx = 0; ky < s.kernel; ++ky)
                        for (std::size_t kx = 0; kx < s.kernel; ++kx, ++idx)
                            if (x[(plane * shape[2] + oy * s.stride + ky) * shape[3] + ox * s.stride + kx] == y[j] &&
                                winner == 0)
                                winner = static_cast<int>(idx) + 1;
                    pattern->push_back(winner);
                }
                x = std::move(y);
                shape = {shape[0], shape[1], ho, wo};
                break;
            }
            case lth::LayerKind::Dropout: break;
            case lth::LayerKind::Flatten: shape = {shape[0], lth::numel(shape) / shape[0]}; break;
        }
    }
    return oracle::cross_entropy(x, labels, classes);
}

TEST(GradCheck, SmallCnnEveryParameter) {
    std::mt19937_64 gen(109);
    for (int i = 0; i < kInstances; ++i) {
        const std::size_t c1 = pick(gen, 1, 3), c2 = pick(gen, 1, 3), hidden = pick(gen, 3, 8), classes = pick(gen, 2, 5);
        const std::vector<lth::LayerSpec> layers{
            lth::LayerSpec::conv("backbone.b1.conv", "b1", 2, c1, 3, 1, 1),
            lth::LayerSpec::relu("backbone.b1.relu", "b1"),
            lth::LayerSpec::pool("backbone.b1.pool", "b1", 2, 2),
            lth::LayerSpec::conv("backbone.b2.conv", "b2", c1, c2, 3, 1, 1),
            lth::LayerSpec::relu("backbone.b2.relu", "b2"),
            lth::LayerSpec::pool("backbone.b2.pool", "b2", 2, 2),
            lth::LayerSpec::flatten("head.flatten", "head"),
            lth::LayerSpec::linear("head.fc1", "head", c2 * 2 * 2, hidden),
            lth::LayerSpec::relu("head.relu", "head"),
            lth::LayerSpec::dropout("head.dropout", "head", 0.4),
            lth::LayerSpec::linear("head.fc2", "head", hidden, classes)};
        lth::Rng init(gen());
        auto net = lth::build_network(layers, Shape{2, 8, 8}, init);
        for (auto& p : net.parameters()) {  // nonzero biases exercise the bias paths
            if (!p.prunable) p.value = oracle::random_tensor(p.value.shape(), gen, -0.1, 0.1);
        }
        const std::size_t batch = pick(gen, 1, 3);
        const Tensor input = oracle::random_tensor({batch, 2, 8, 8}, gen);
        std::vector<std::int32_t> labels(batch);
        for (auto& l : labels) l = static_cast<std::int32_t>(pick(gen, 0, classes - 1));

        lth::zero_grads(net.parameters());
        lth::Tape tape;
        lth::Rng unused(0);
        tape.backward(lth::softmax_cross_entropy(net.forward(tape, tape.constant(input), lth::Mode::Eval, unused), labels));

        std::vector<Doubles> xs;
        for (const auto& p : net.parameters()) xs.push_back(oracle::widen(p.value));
        const Reference ref = [&](const std::vector<Doubles>& ps, std::vector<int>* pattern) {
            return network_reference(layers, ps, oracle::widen(input), input.shape(), labels, classes, pattern);
        };
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const double err = worst_relative_error(net.parameters()[k].grad, numeric_gradient(ref, xs, k));
            EXPECT_LT(err, kTolerance) << "instance " << i << " parameter " << net.parameters()[k].name;
        }
    }
}

}  // namespace
