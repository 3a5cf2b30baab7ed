#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rflab/errors.hpp"

namespace rflab {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<T> m, v;
    std::int64_t step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// Bias-corrected Adam update over a flat parameter block. Caller advances
/// state.step once per optimizer step before (or via) this call.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& cfg,
               std::int64_t step) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw DimensionError("adam_step: parameter/gradient/state size mismatch (" +
                             std::to_string(params.size()) + " vs " + std::to_string(grads.size()) + ")");
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
    const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        const T mhat = state.m[i] / c1;
        const T vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

} // namespace rflab
