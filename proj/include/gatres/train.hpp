// Full-batch weighted-loss training with Adam and patience-based early
// stopping on a temporally held-out validation tail.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gatres/autodiff.hpp"
#include "gatres/dataset.hpp"
#include "gatres/loss.hpp"
#include "gatres/models.hpp"
#include "gatres/optim.hpp"

namespace gatres {

struct TrainConfig {
    std::size_t epochs = 1000;
    double lr = 0.001;
    std::size_t patience = 50;
    ClassWeights weights{};
    std::uint64_t seed = 15;
    /// Trailing training time steps monitored for early stopping and
    /// excluded from gradient updates. 0 disables early stopping.
    int validation_tail = 5;

    void validate(int boundary) const {
        if (!(weights.licit > 0.0 && weights.illicit > 0.0))
            throw ConfigError("class weights must be positive");
        if (std::abs(weights.licit + weights.illicit - 1.0) > 1e-9) throw ConfigError("class weights must sum to 1");
        if (patience > epochs) throw ConfigError("patience must not exceed epochs");
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (validation_tail < 0 || validation_tail >= boundary)
            throw ConfigError("validation_tail must lie in [0, split boundary)");
    }
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    std::optional<double> val_loss;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    std::optional<double> best_val_loss;
    bool stopped_early = false;
};

/// Gradient rows (train, labeled, before the tail) and validation rows
/// (train, labeled, inside the tail).
struct TrainingMasks {
    std::vector<std::uint8_t> fit;
    std::vector<std::uint8_t> validation;
};

inline TrainingMasks training_masks(std::span<const int> time_step, std::span<const Label> labels,
                                    const SplitMasks& split, int validation_tail) {
    TrainingMasks m;
    const std::size_t n = time_step.size();
    m.fit.assign(n, 0);
    m.validation.assign(n, 0);
    const int cut = split.boundary - validation_tail;
    for (std::size_t i = 0; i < n; ++i) {
        if (!split.train[i] || labels[i] == Label::unknown) continue;
        (time_step[i] > cut ? m.validation : m.fit)[i] = 1;
    }
    return m;
}

namespace detail {

inline bool any(const std::vector<std::uint8_t>& m) {
    for (auto v : m)
        if (v) return true;
    return false;
}

inline std::vector<std::vector<double>> snapshot(ParamSet& p) {
    std::vector<std::vector<double>> out;
    for (Tensor* t : p.tensors()) out.emplace_back(t->data().begin(), t->data().end());
    return out;
}

inline void restore(ParamSet& p, const std::vector<std::vector<double>>& snap) {
    auto ts = p.tensors();
    for (std::size_t k = 0; k < ts.size(); ++k) std::copy(snap[k].begin(), snap[k].end(), ts[k]->data().begin());
}

} // namespace detail

/// Trains `model` in place and leaves it holding the parameters of the
/// epoch with the lowest validation loss (the last epoch when early
/// stopping is disabled). Dropout masks come from a stream derived from
/// cfg.seed, so identical inputs give a bitwise-identical log.
inline TrainLog train(GnnModel& model, const Graph& graph, const Tensor& x, std::span<const Label> labels,
                      std::span<const int> time_step, const SplitMasks& split, const TrainConfig& cfg) {
    cfg.validate(split.boundary);
    const TrainingMasks masks = training_masks(time_step, labels, split, cfg.validation_tail);
    if (!detail::any(masks.fit)) throw DegenerateDataError("no labeled training nodes before the validation tail");
    const bool monitor = cfg.validation_tail > 0 && detail::any(masks.validation);

    Rng rng = Rng::derive(cfg.seed, 1);
    AdamState adam;
    auto params = model.params.tensors();
    TrainLog log;
    std::vector<std::vector<double>> best = detail::snapshot(model.params);
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec{epoch, 0.0, std::nullopt};
        model.params.zero_grad();
        {
            ad::Tape tape;
            const ad::Var logits = model.logits({tape, true}, graph, tape.borrow(x), true, rng);
            const ad::Var loss = weighted_cross_entropy(logits, labels, cfg.weights, masks.fit);
            rec.train_loss = loss.value()[0];
            tape.backward(loss);
        }
        adam_step(params, adam, cfg.lr);

        if (monitor) {
            ad::Tape tape;
            Rng unused(0);
            const ad::Var logits = model.logits({tape, false}, graph, tape.borrow(x), false, unused);
            rec.val_loss = weighted_cross_entropy(logits, labels, cfg.weights, masks.validation).value()[0];
        }
        log.epochs.push_back(rec);

        if (!monitor) continue;
        if (*rec.val_loss < best_val) {
            best_val = *rec.val_loss;
            log.best_epoch = epoch;
            log.best_val_loss = best_val;
            best = detail::snapshot(model.params);
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            log.stopped_early = true;
            break;
        }
    }
    if (monitor) {
        detail::restore(model.params, best);
    } else {
        log.best_epoch = log.epochs.size();
    }
    return log;
}

} // namespace gatres
