// Finite-difference verification of analytic gradients.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "gatres/autodiff.hpp"

namespace gatres {

struct GradCheckOptions {
    double step = 1e-4;
    double tolerance = 1e-3;
    /// Denominator floor for the relative deviation, so coordinates whose
    /// true gradient is ~0 are judged on an absolute scale of tolerance*floor.
    double scale_floor = 1e-2;
    /// Check every `stride`-th coordinate of each parameter (1 = all).
    std::size_t stride = 1;
};

struct GradCheckEntry {
    std::size_t param = 0;
    std::size_t coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool passed = true;
};

/// Builds a scalar loss on the given tape, registering each of the checked
/// tensors through Tape::parameter(). Must be deterministic.
using LossBuilder = std::function<ad::Var(ad::Tape&)>;

namespace detail {

inline double evaluate_loss(const LossBuilder& f) {
    ad::Tape tape;
    const ad::Var loss = f(tape);
    const Tensor& v = loss.value();
    if (v.rows() != 1 || v.cols() != 1)
        throw DimensionError("grad_check: loss must be scalar, got " + v.shape_string());
    return v[0];
}

} // namespace detail

/// Compares the tape's gradients for every tensor in `params` against
/// central differences (f(x+h) - f(x-h)) / 2h.
inline GradCheckReport grad_check(const LossBuilder& f, const std::vector<Tensor*>& params,
                                  const GradCheckOptions& opt = {}) {
    const double first = detail::evaluate_loss(f);
    const double second = detail::evaluate_loss(f);
    if (first != second)
        throw HarnessError("grad_check: loss function is not deterministic (" + std::to_string(first) +
                           " vs " + std::to_string(second) + ")");

    for (Tensor* p : params) {
        p->set_requires_grad(true);
        p->zero_grad();
    }
    {
        ad::Tape tape;
        tape.backward(f(tape));
    }

    GradCheckReport report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        for (std::size_t i = 0; i < p.size(); i += std::max<std::size_t>(opt.stride, 1)) {
            const double saved = p[i];
            p[i] = saved + opt.step;
            const double up = detail::evaluate_loss(f);
            p[i] = saved - opt.step;
            const double down = detail::evaluate_loss(f);
            p[i] = saved;

            GradCheckEntry e{k, i, p.grad()[i], (up - down) / (2.0 * opt.step), 0.0};
            const double scale = std::max({std::abs(e.analytic), std::abs(e.numeric), opt.scale_floor});
            e.rel_error = std::abs(e.analytic - e.numeric) / scale;
            if (!(e.rel_error <= opt.tolerance)) report.passed = false;
            report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
            report.entries.push_back(e);
        }
    }
    return report;
}

/// Single-input form: f maps the input Var to a scalar loss.
inline GradCheckReport grad_check(const std::function<ad::Var(ad::Tape&, ad::Var)>& f, const Tensor& at,
                                  const GradCheckOptions& opt = {}) {
    Tensor x = at.detached();
    return grad_check([&](ad::Tape& tape) { return f(tape, tape.parameter(x)); },
                      std::vector<Tensor*>{&x}, opt);
}

} // namespace gatres
