// Classical comparison models: logistic regression and a random forest of
// CART trees with class-weighted Gini impurity.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gatres/autodiff.hpp"
#include "gatres/dataset.hpp"
#include "gatres/error.hpp"
#include "gatres/loss.hpp"
#include "gatres/optim.hpp"
#include "gatres/rng.hpp"
#include "gatres/tensor.hpp"

namespace gatres {

namespace detail {

inline std::vector<std::size_t> selected_rows(std::span<const Label> y, std::span<const std::uint8_t> mask) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (mask[i] && y[i] != Label::unknown) rows.push_back(i);
    return rows;
}

inline void require_both_classes(std::span<const Label> y, const std::vector<std::size_t>& rows, const char* who) {
    bool pos = false, neg = false;
    for (std::size_t i : rows) (y[i] == Label::illicit ? pos : neg) = true;
    if (!pos || !neg)
        throw DegenerateDataError(std::string(who) + ": training rows must contain both classes");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Logistic regression

struct LogRegConfig {
    std::size_t epochs = 500;
    double lr = 0.001;
    ClassWeights weights{};
};

struct LogRegParams {
    Tensor weights; // d x 1
    Tensor bias;    // 1 x 1

    /// P(illicit) per row as an n x 2 probability matrix.
    Tensor predict_proba(const Tensor& x) const {
        if (x.cols() != weights.rows())
            throw DimensionError("logreg expects " + std::to_string(weights.rows()) + " features, got " +
                                 x.shape_string());
        Tensor out(x.rows(), 2);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double z = bias[0];
            const auto r = x.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) z += r[j] * weights[j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            out(i, 0) = 1.0 - p;
            out(i, 1) = p;
        }
        return out;
    }

    /// Parameters acting on raw features that reproduce this model's
    /// decisions on features transformed by `scaler`.
    LogRegParams unscaled(const FeatureScaler& scaler) const {
        LogRegParams raw{weights.detached(), bias.detached()};
        for (std::size_t j = 0; j < weights.rows(); ++j) {
            raw.weights[j] = weights[j] / scaler.scale[j];
            raw.bias[0] -= scaler.mean[j] * raw.weights[j];
        }
        return raw;
    }
};

/// Class logits [0, x.w + b] so that the softmax reduces to the sigmoid.
inline ad::Var logreg_logits(ad::Tape& tape, LogRegParams& p, ad::Var x, bool with_grad) {
    const ad::Var w = with_grad ? tape.parameter(p.weights) : tape.borrow(p.weights);
    const ad::Var b = with_grad ? tape.parameter(p.bias) : tape.borrow(p.bias);
    const ad::Var z = ad::add_row_broadcast(ad::matmul(x, w), b);
    return ad::concat_cols({tape.constant(Tensor(x.rows(), 1)), z});
}

/// Full-batch Adam on the weighted cross-entropy from zero-initialised weights.
inline LogRegParams logreg_train(const Tensor& x, std::span<const Label> y, std::span<const std::uint8_t> mask,
                                 const LogRegConfig& cfg) {
    if (x.rows() != y.size() || mask.size() != y.size())
        throw DimensionError("logreg_train: " + x.shape_string() + " with " + std::to_string(y.size()) + " labels");
    const auto rows = detail::selected_rows(y, mask);
    detail::require_both_classes(y, rows, "logreg_train");

    Tensor xs(rows.size(), x.cols());
    std::vector<Label> ys;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        std::copy(x.row(rows[k]).begin(), x.row(rows[k]).end(), xs.row(k).begin());
        ys.push_back(y[rows[k]]);
    }
    const std::vector<std::uint8_t> all(rows.size(), 1);

    LogRegParams p{Tensor(x.cols(), 1), Tensor(1, 1)};
    p.weights.set_requires_grad(true);
    p.bias.set_requires_grad(true);
    AdamState adam;
    std::vector<Tensor*> params{&p.weights, &p.bias};
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        p.weights.zero_grad();
        p.bias.zero_grad();
        ad::Tape tape;
        const ad::Var loss = weighted_cross_entropy(logreg_logits(tape, p, tape.borrow(xs), true), ys, cfg.weights, all);
        tape.backward(loss);
        adam_step(params, adam, cfg.lr);
    }
    return p;
}

// ---------------------------------------------------------------------------
// Decision trees

inline double gini_impurity(double w_licit, double w_illicit) {
    const double total = w_licit + w_illicit;
    if (total <= 0.0) return 0.0;
    const double p0 = w_licit / total, p1 = w_illicit / total;
    return 1.0 - p0 * p0 - p1 * p1;
}

/// Size-weighted mean impurity of a candidate (left, right) partition.
inline double split_impurity(double l_licit, double l_illicit, double r_licit, double r_illicit) {
    const double wl = l_licit + l_illicit, wr = r_licit + r_illicit;
    const double total = wl + wr;
    if (total <= 0.0) return 0.0;
    return (wl * gini_impurity(l_licit, l_illicit) + wr * gini_impurity(r_licit, r_illicit)) / total;
}

struct TreeNode {
    /// -1 marks a leaf.
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    /// Weighted class mass reaching the node: [licit, illicit].
    double counts[2] = {0.0, 0.0};

    bool is_leaf() const { return feature < 0; }
};

struct TreeConfig {
    std::size_t max_features = 50;
    /// 0 = grow until pure.
    std::size_t max_depth = 0;
    ClassWeights weights{};
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    const TreeNode& leaf_for(std::span<const double> row) const {
        std::size_t k = 0;
        while (!nodes[k].is_leaf())
            k = static_cast<std::size_t>(row[nodes[k].feature] <= nodes[k].threshold ? nodes[k].left : nodes[k].right);
        return nodes[k];
    }

    /// Majority by weighted mass, ties to licit.
    Label predict(std::span<const double> row) const {
        const TreeNode& leaf = leaf_for(row);
        return leaf.counts[1] > leaf.counts[0] ? Label::illicit : Label::licit;
    }

    std::size_t depth() const { return depth_from(0); }

private:
    std::size_t depth_from(std::size_t k) const {
        if (nodes[k].is_leaf()) return 0;
        return 1 + std::max(depth_from(static_cast<std::size_t>(nodes[k].left)),
                            depth_from(static_cast<std::size_t>(nodes[k].right)));
    }
};

namespace detail {

struct TreeBuilder {
    const Tensor& x;
    std::span<const Label> y;
    const TreeConfig& cfg;
    std::uint64_t seed;
    DecisionTree tree;

    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double impurity = 0.0;
    };

    // Every node draws its feature subset from a stream keyed on its path
    // from the root, so growing deeper never perturbs shallower decisions.
    static std::uint64_t child_key(std::uint64_t key, int dir) { return Rng::mix(key * 2 + static_cast<std::uint64_t>(dir)); }

    Split best_split(std::vector<std::size_t>& samples, std::uint64_t key) {
        const std::size_t d = x.cols();
        std::vector<std::size_t> features(d);
        std::iota(features.begin(), features.end(), std::size_t{0});
        Rng rng = Rng::derive(seed, key);
        const std::size_t want = std::min(cfg.max_features == 0 ? d : cfg.max_features, d);

        double tot[2] = {0.0, 0.0};
        for (std::size_t i : samples) tot[y[i] == Label::illicit] += cfg.weights.of(y[i]);

        Split best;
        std::size_t examined = 0;
        for (std::size_t k = 0; k < d; ++k) {
            if (examined >= want && best.feature >= 0) break;
            // incremental Fisher-Yates
            std::swap(features[k], features[k + rng.uniform_index(d - k)]);
            const std::size_t f = features[k];
            ++examined;
            std::sort(samples.begin(), samples.end(), [&](std::size_t a, std::size_t b) {
                return x(a, f) < x(b, f) || (x(a, f) == x(b, f) && a < b);
            });
            double left[2] = {0.0, 0.0};
            for (std::size_t s = 0; s + 1 < samples.size(); ++s) {
                const std::size_t i = samples[s];
                left[y[i] == Label::illicit] += cfg.weights.of(y[i]);
                const double lo = x(i, f), hi = x(samples[s + 1], f);
                if (!(hi > lo)) continue;
                const double imp = split_impurity(left[0], left[1], tot[0] - left[0], tot[1] - left[1]);
                if (best.feature < 0 || imp < best.impurity) {
                    double thr = lo + (hi - lo) / 2.0;
                    if (thr >= hi) thr = lo;
                    best = {static_cast<int>(f), thr, imp};
                }
            }
        }
        return best;
    }

    int grow(std::vector<std::size_t> samples, std::size_t depth, std::uint64_t key) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        for (std::size_t i : samples) tree.nodes[id].counts[y[i] == Label::illicit] += cfg.weights.of(y[i]);
        const double c0 = tree.nodes[id].counts[0], c1 = tree.nodes[id].counts[1];
        const bool pure = c0 == 0.0 || c1 == 0.0;
        const bool depth_capped = cfg.max_depth != 0 && depth >= cfg.max_depth;
        if (pure || depth_capped || samples.size() < 2) return id;

        const Split split = best_split(samples, key);
        if (split.feature < 0) return id; // every candidate feature constant

        std::vector<std::size_t> left, right;
        for (std::size_t i : samples) (x(i, split.feature) <= split.threshold ? left : right).push_back(i);
        samples.clear();
        samples.shrink_to_fit();
        const int l = grow(std::move(left), depth + 1, child_key(key, 0));
        const int r = grow(std::move(right), depth + 1, child_key(key, 1));
        TreeNode& node = tree.nodes[id];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = l;
        node.right = r;
        return id;
    }
};

} // namespace detail

/// Greedy CART on the (possibly repeated) sample indices. Splits use the
/// class-weighted Gini criterion with midpoint thresholds; a node becomes
/// a leaf when pure, at max_depth, with fewer than 2 samples, or when no
/// feature separates its samples. At least `max_features` randomly drawn
/// features are examined per node, more if none of them splits.
inline DecisionTree tree_fit(const Tensor& x, std::span<const Label> y, std::span<const std::size_t> sample_indices,
                             const TreeConfig& cfg, std::uint64_t seed) {
    if (sample_indices.empty()) throw ParameterError("tree_fit: empty sample set");
    for (std::size_t i : sample_indices)
        if (i >= x.rows() || y[i] == Label::unknown)
            throw ParameterError("tree_fit: sample " + std::to_string(i) + " is out of range or unlabeled");
    detail::TreeBuilder b{x, y, cfg, seed, {}};
    b.grow(std::vector<std::size_t>(sample_indices.begin(), sample_indices.end()), 0, 1);
    return std::move(b.tree);
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
    std::size_t n_estimators = 50;
    std::size_t max_features = 50;
    std::size_t max_depth = 0;
    bool bootstrap = true;
    ClassWeights weights{};
    std::uint64_t seed = 15;

    TreeConfig tree() const { return {max_features, max_depth, weights}; }
};

struct RandomForest {
    std::vector<DecisionTree> trees;

    /// Columns: fraction of trees voting licit, illicit.
    Tensor predict_proba(const Tensor& x) const {
        if (trees.empty()) throw ParameterError("random forest has no trees");
        Tensor out(x.rows(), 2);
        const auto n = static_cast<double>(trees.size());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            std::size_t illicit = 0;
            for (const DecisionTree& t : trees) illicit += t.predict(x.row(i)) == Label::illicit;
            out(i, 1) = static_cast<double>(illicit) / n;
            out(i, 0) = static_cast<double>(trees.size() - illicit) / n;
        }
        return out;
    }
};

/// Seed of tree t's node-level feature sampling.
inline std::uint64_t forest_tree_seed(std::uint64_t seed, std::size_t t) {
    return Rng::derive(seed, 2 * t + 1).next_u64();
}

/// Each tree draws its bootstrap resample from an independent stream keyed
/// on (seed, tree index), so the forest does not depend on fit order.
inline RandomForest rf_fit(const Tensor& x, std::span<const Label> y, std::span<const std::uint8_t> mask,
                           const ForestConfig& cfg) {
    if (cfg.n_estimators == 0) throw ConfigError("random forest needs at least one estimator");
    const auto rows = detail::selected_rows(y, mask);
    if (rows.empty()) throw DegenerateDataError("rf_fit: no labeled training rows");
    RandomForest forest;
    forest.trees.reserve(cfg.n_estimators);
    const TreeConfig tc = cfg.tree();
    for (std::size_t t = 0; t < cfg.n_estimators; ++t) {
        std::vector<std::size_t> sample = rows;
        if (cfg.bootstrap) {
            Rng rng = Rng::derive(cfg.seed, 2 * t);
            for (std::size_t& s : sample) s = rows[rng.uniform_index(rows.size())];
        }
        forest.trees.push_back(tree_fit(x, y, sample, tc, forest_tree_seed(cfg.seed, t)));
    }
    return forest;
}

inline Tensor rf_predict(const RandomForest& forest, const Tensor& x) { return forest.predict_proba(x); }

} // namespace gatres
