// Copyright (c) 2026, The lth-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "lth/optimizer.hpp"

#include <cmath>

#include "lth/error.hpp"

namespace lth {

void Adam::step(std::span<Parameter> params) {
    for (const auto& p : params) {
        if (p.trainable && (!p.grad_ready || p.grad.shape() != p.value.shape())) {
            throw ContractError("no gradient for trainable parameter '" + p.name + "'");
        }
    }
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& p : params) {
        if (!p.trainable) continue;
        auto [it, fresh] = state_.try_emplace(p.name);
        Moments& s = it->second;
        if (fresh || s.m.shape() != p.value.shape()) {
            s.m = Tensor(p.value.shape(), 0.0f);
            s.v = Tensor(p.value.shape(), 0.0f);
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            if (p.mask[i] == 0.0f) {
                p.value[i] = 0.0f;
                s.m[i] = 0.0f;
                s.v[i] = 0.0f;
                continue;
            }
            const double w = p.value[i];
            const double g = static_cast<double>(p.grad[i]) + config_.weight_decay * w;
            const double m = b1 * s.m[i] + (1.0 - b1) * g;
            const double v = b2 * s.v[i] + (1.0 - b2) * g * g;
            s.m[i] = static_cast<float>(m);
            s.v[i] = static_cast<float>(v);
            const double m_hat = m / correction1;
            const double v_hat = v / correction2;
            p.value[i] = static_cast<float>(w - config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
        }
    }
}

void Adam::reset() {
    t_ = 0;
    state_.clear();
}

const Adam::Moments* Adam::moments(const std::string& name) const {
    auto it = state_.find(name);
    return it == state_.end() ? nullptr : &it->second;
}

void Adam::export_state(TensorTable& table) const {
    table.add_i64("adam.t", t_);
    for (const auto& [name, s] : state_) {
        table.add_f32(name + ".m", s.m);
        table.add_f32(name + ".v", s.v);
    }
}

void Adam::import_state(const TensorTable& table) {
    reset();
    t_ = table.i64("adam.t");
    for (const auto& e : table.entries()) {
        if (e.name.size() > 2 && e.name.compare(e.name.size() - 2, 2, ".m") == 0) {
            const std::string name = e.name.substr(0, e.name.size() - 2);
            state_[name] = Moments{table.f32(e.name), table.f32(name + ".v")};
        }
    }
}

void zero_grads(std::span<Parameter> params) {
    for (auto& p : params) {
        if (p.grad.shape() != p.value.shape()) {
            p.grad = Tensor(p.value.shape(), 0.0f);
        } else {
            p.grad.fill(0.0f);
        }
        p.grad_ready = false;
    }
}

}  // namespace lth
