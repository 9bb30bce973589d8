// Sparse transaction graph in compressed-sparse-row form.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "gatres/autodiff.hpp"
#include "gatres/error.hpp"
#include "gatres/tensor.hpp"

namespace gatres {

using ad::Index;

/// Directed edge: value flows from `src` into `dst`.
struct Edge {
    Index src = 0;
    Index dst = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

/// Adjacency grouped by destination. Stored entry e is the message path
/// src[e] -> dst[e]; row i of the CSR lists the sources node i aggregates.
/// Every node carries a self-loop, duplicates are collapsed, and within a
/// row entries are ordered by the caller-supplied node key. Because keys
/// travel with nodes under relabelling, per-node reduction order (and
/// hence every floating-point sum) is invariant to node permutation.
class Graph {
public:
    Graph() = default;

    /// `order_keys`, when given, has one entry per node; the default key is the index.
    static Graph build(std::size_t n_nodes, std::span<const Edge> edges, bool symmetrize = true,
                       std::span<const std::int64_t> order_keys = {}) {
        if (!order_keys.empty() && order_keys.size() != n_nodes)
            throw DimensionError("graph order keys: " + std::to_string(order_keys.size()) + " for " +
                                 std::to_string(n_nodes) + " nodes");
        auto key = [&](Index i) -> std::int64_t { return order_keys.empty() ? i : order_keys[i]; };

        std::vector<Edge> entries;
        entries.reserve(edges.size() * (symmetrize ? 2 : 1) + n_nodes);
        for (const Edge& e : edges) {
            if (e.src >= n_nodes || e.dst >= n_nodes)
                throw IntegrityError("edge (" + std::to_string(e.src) + "->" + std::to_string(e.dst) +
                                     ") references a node outside [0," + std::to_string(n_nodes) + ")");
            entries.push_back(e);
            if (symmetrize) entries.push_back({e.dst, e.src});
        }
        for (std::size_t i = 0; i < n_nodes; ++i)
            entries.push_back({static_cast<Index>(i), static_cast<Index>(i)});
        std::sort(entries.begin(), entries.end(), [&](const Edge& a, const Edge& b) {
            return std::tuple(a.dst, key(a.src), a.src) < std::tuple(b.dst, key(b.src), b.src);
        });
        entries.erase(std::unique(entries.begin(), entries.end()), entries.end());

        Graph g;
        g.n_nodes_ = n_nodes;
        g.symmetric_ = symmetrize;
        g.offsets_.assign(n_nodes + 1, 0);
        g.src_.reserve(entries.size());
        g.dst_.reserve(entries.size());
        for (const Edge& e : entries) {
            g.src_.push_back(e.src);
            g.dst_.push_back(e.dst);
            ++g.offsets_[e.dst + 1];
        }
        std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());

        g.gcn_norm_ = Tensor(entries.size(), 1);
        for (std::size_t e = 0; e < entries.size(); ++e) {
            const double di = static_cast<double>(g.degree(g.dst_[e]));
            const double dj = static_cast<double>(g.degree(g.src_[e]));
            g.gcn_norm_[e] = 1.0 / std::sqrt(di * dj);
        }
        return g;
    }

    std::size_t n_nodes() const noexcept { return n_nodes_; }
    std::size_t n_stored() const noexcept { return src_.size(); }
    bool symmetric() const noexcept { return symmetric_; }

    std::span<const std::size_t> offsets() const noexcept { return offsets_; }
    /// CSR column array: the source of each stored entry.
    std::span<const Index> neighbors() const noexcept { return src_; }
    std::span<const Index> src() const noexcept { return src_; }
    std::span<const Index> dst() const noexcept { return dst_; }

    /// Stored entries in row i, self-loop included.
    std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

    /// Per stored entry, the coefficient of D^-1/2 (A + I) D^-1/2 (shape E x 1).
    const Tensor& gcn_norm() const noexcept { return gcn_norm_; }

    /// Normalised coefficient for the entry j -> i, or 0 when absent.
    double coefficient(std::size_t i, std::size_t j) const {
        for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e)
            if (src_[e] == j) return gcn_norm_[e];
        return 0.0;
    }

    bool has_entry(std::size_t i, std::size_t j) const {
        for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e)
            if (src_[e] == j) return true;
        return false;
    }

private:
    std::size_t n_nodes_ = 0;
    bool symmetric_ = true;
    std::vector<std::size_t> offsets_{0};
    std::vector<Index> src_;
    std::vector<Index> dst_;
    Tensor gcn_norm_;
};

} // namespace gatres
