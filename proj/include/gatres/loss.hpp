// Class-weighted cross-entropy.
//
// loss = sum_i w(y_i) * -log p_i(y_i) / sum_i w(y_i) over eligible nodes,
// i.e. a weighted mean, so rescaling every class weight by the same
// positive constant leaves the value unchanged.
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gatres/autodiff.hpp"
#include "gatres/dataset.hpp"

namespace gatres {

struct ClassWeights {
    double licit = 0.3;
    double illicit = 0.7;

    double of(Label l) const { return l == Label::illicit ? illicit : licit; }
};

/// Fused log-softmax + weighted negative log-likelihood on logits[n x 2].
/// Nodes with eligible[i] == 0 or an unknown label contribute nothing.
inline ad::Var weighted_cross_entropy(ad::Var logits, std::span<const Label> labels, ClassWeights weights,
                                      std::span<const std::uint8_t> eligible) {
    const Tensor& z = logits.value();
    const std::size_t n = z.rows(), c = z.cols();
    if (c != 2 || labels.size() != n || eligible.size() != n)
        throw DimensionError("weighted_cross_entropy: logits " + z.shape_string() + " with " +
                             std::to_string(labels.size()) + " labels");
    std::vector<std::size_t> rows;
    double total_weight = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!eligible[i] || labels[i] == Label::unknown) continue;
        rows.push_back(i);
        total_weight += weights.of(labels[i]);
    }
    if (rows.empty()) throw ParameterError("weighted_cross_entropy: no eligible nodes");
    if (!(total_weight > 0.0)) throw ParameterError("weighted_cross_entropy: class weights must be positive");

    // softmax per eligible row, kept for the backward rule
    std::vector<double> probs(rows.size() * c);
    double loss = 0.0;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto x = z.row(rows[k]);
        const double mx = std::max(x[0], x[1]);
        const double s = std::exp(x[0] - mx) + std::exp(x[1] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) probs[k * c + j] = std::exp(x[j] - lse);
        const std::size_t y = labels[rows[k]] == Label::illicit ? 1 : 0;
        loss += weights.of(labels[rows[k]]) * (lse - x[y]);
    }
    loss /= total_weight;

    return logits.tape->record(
        Tensor(1, 1, loss), {logits},
        [logits, rows = std::move(rows), probs = std::move(probs), labels, weights, total_weight,
         c](ad::Tape& t, std::span<const double> g) {
            auto gz = t.grad_buffer(logits);
            for (std::size_t k = 0; k < rows.size(); ++k) {
                const std::size_t i = rows[k];
                const std::size_t y = labels[i] == Label::illicit ? 1 : 0;
                const double scale = g[0] * weights.of(labels[i]) / total_weight;
                for (std::size_t j = 0; j < c; ++j)
                    gz[i * c + j] += scale * (probs[k * c + j] - (j == y ? 1.0 : 0.0));
            }
        });
}

/// Value-only form on probabilities[n x 2]; -log(p) taken directly.
inline double weighted_cross_entropy(const Tensor& probs, std::span<const Label> labels, ClassWeights weights,
                                     std::span<const std::uint8_t> eligible) {
    if (probs.cols() != 2 || labels.size() != probs.rows() || eligible.size() != probs.rows())
        throw DimensionError("weighted_cross_entropy: probabilities " + probs.shape_string());
    double loss = 0.0, total = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        if (!eligible[i] || labels[i] == Label::unknown) continue;
        const double w = weights.of(labels[i]);
        loss -= w * std::log(probs(i, labels[i] == Label::illicit ? 1 : 0));
        total += w;
    }
    if (total == 0.0) throw ParameterError("weighted_cross_entropy: no eligible nodes");
    return loss / total;
}

} // namespace gatres
