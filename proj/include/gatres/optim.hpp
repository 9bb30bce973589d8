// Adam with bias correction.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gatres/error.hpp"
#include "gatres/tensor.hpp"

namespace gatres {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t t = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

/// One update of every tensor in `params` from its grad() buffer.
/// Moments are allocated on the first call and must keep their shapes.
inline void adam_step(std::span<Tensor* const> params, AdamState& state, double lr) {
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->size(), 0.0);
            state.v.emplace_back(p->size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                             std::to_string(params.size()));
    for (std::size_t k = 0; k < params.size(); ++k)
        if (state.m[k].size() != params[k]->size() || params[k]->grad().size() != params[k]->size())
            throw DimensionError("adam_step: parameter " + std::to_string(k) + " changed shape or lacks a gradient");

    ++state.t;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto w = params[k]->data();
        auto g = params[k]->grad();
        auto& m = state.m[k];
        auto& v = state.v[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

} // namespace gatres
