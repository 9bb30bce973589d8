// Confusion counts and the five evaluation metrics. Illicit is positive.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

#include "gatres/dataset.hpp"
#include "gatres/tensor.hpp"

namespace gatres {

struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    /// F1 from TP/FP/FN pooled over both classes one-vs-rest; equals accuracy here.
    double micro_f1 = 0.0;
    double accuracy = 0.0;
    double mcc = 0.0;
    ConfusionMatrix confusion;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline Metrics metrics_from_confusion(const ConfusionMatrix& cm) {
    const double tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
    const double fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
    Metrics m;
    m.confusion = cm;
    m.precision = safe_ratio(tp, tp + fp);
    m.recall = safe_ratio(tp, tp + fn);
    m.f1 = safe_ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    // class 1 contributes (tp, fp, fn), class 0 contributes (tn, fn, fp)
    const double pooled_tp = tp + tn, pooled_fp = fp + fn, pooled_fn = fn + fp;
    m.micro_f1 = safe_ratio(2.0 * pooled_tp, 2.0 * pooled_tp + pooled_fp + pooled_fn);
    m.accuracy = safe_ratio(tp + tn, tp + tn + fp + fn);
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    m.mcc = den == 0.0 ? 0.0 : (tp * tn - fp * fn) / std::sqrt(den);
    return m;
}

/// argmax of a probability row; ties go to licit.
inline Label predicted_label(std::span<const double> prob_row) {
    return prob_row[1] > prob_row[0] ? Label::illicit : Label::licit;
}

/// Confusion over labeled rows selected by `mask`.
inline ConfusionMatrix confusion_matrix(const Tensor& probs, std::span<const Label> labels,
                                        std::span<const std::uint8_t> mask) {
    if (probs.cols() != 2 || probs.rows() != labels.size() || mask.size() != labels.size())
        throw DimensionError("evaluate: probabilities " + probs.shape_string() + " for " +
                             std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!mask[i] || labels[i] == Label::unknown) continue;
        const bool actual = labels[i] == Label::illicit;
        const bool flagged = predicted_label(probs.row(i)) == Label::illicit;
        if (actual && flagged) ++cm.tp;
        else if (actual) ++cm.fn;
        else if (flagged) ++cm.fp;
        else ++cm.tn;
    }
    if (cm.total() == 0) throw ParameterError("evaluate: mask selects no labeled node");
    return cm;
}

inline Metrics evaluate(const Tensor& probs, std::span<const Label> labels, std::span<const std::uint8_t> mask) {
    return metrics_from_confusion(confusion_matrix(probs, labels, mask));
}

} // namespace gatres
