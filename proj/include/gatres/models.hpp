// GCN, GAT and GAT-ResNet node classifiers over the autodiff core.
//
// All three are pure functions of (parameters, graph, features, rng). They
// return logits; probabilities are softmax_rows(logits). Hidden GAT layers
// concatenate their heads, output layers average them. No layer has a bias.
#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "gatres/autodiff.hpp"
#include "gatres/error.hpp"
#include "gatres/graph.hpp"
#include "gatres/rng.hpp"
#include "gatres/tensor.hpp"

namespace gatres {

enum class ModelKind { logreg, random_forest, gcn, gat, gat_resnet };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::logreg: return "logreg";
    case ModelKind::random_forest: return "random_forest";
    case ModelKind::gcn: return "gcn";
    case ModelKind::gat: return "gat";
    case ModelKind::gat_resnet: return "gat_resnet";
    }
    return "?";
}

inline std::optional<ModelKind> parse_model_kind(std::string_view s) {
    for (ModelKind k : {ModelKind::logreg, ModelKind::random_forest, ModelKind::gcn, ModelKind::gat,
                        ModelKind::gat_resnet})
        if (s == model_kind_name(k)) return k;
    return std::nullopt;
}

inline bool is_gnn(ModelKind k) {
    return k == ModelKind::gcn || k == ModelKind::gat || k == ModelKind::gat_resnet;
}

struct GcnConfig {
    std::size_t in_dim = 166;
    std::size_t hidden = 100;
    std::size_t out_dim = 2;
    std::size_t n_layers = 2;
    double dropout = 0.5;
};

struct GatConfig {
    std::size_t in_dim = 166;
    /// Per-head width; a hidden layer emits heads * hidden columns.
    std::size_t hidden = 100;
    std::size_t out_dim = 2;
    std::size_t n_layers = 2;
    std::size_t heads = 8;
    double dropout = 0.5;
    double attn_slope = 0.2;
};

struct GatResNetConfig {
    std::size_t in_dim = 166;
    std::size_t hidden = 100;
    std::size_t out_dim = 2;
    std::size_t n_layers = 3;
    std::size_t heads = 4;
    double dropout = 0.5;
    bool use_skip = false;
    double attn_slope = 0.2;
};

using ModelConfig = std::variant<GcnConfig, GatConfig, GatResNetConfig>;

/// Named parameter tensors in a fixed order.
class ParamSet {
public:
    Tensor& add(std::string name, Tensor t) {
        t.set_requires_grad(true);
        entries_.emplace_back(std::move(name), std::move(t));
        return entries_.back().second;
    }

    Tensor& at(std::string_view name) {
        for (auto& [n, t] : entries_)
            if (n == name) return t;
        throw ParameterError("no parameter named " + std::string(name));
    }
    const Tensor& at(std::string_view name) const { return const_cast<ParamSet*>(this)->at(name); }
    bool contains(std::string_view name) const {
        for (const auto& [n, t] : entries_)
            if (n == name) return true;
        return false;
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for (auto& [n, t] : entries_) out.push_back(&t);
        return out;
    }
    void zero_grad() {
        for (auto& [n, t] : entries_) t.zero_grad();
    }

    std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Binds parameters onto a tape: differentiable leaves when training,
/// borrowed constants otherwise.
struct ParamBinder {
    ad::Tape& tape;
    bool with_grad;
    ad::Var operator()(Tensor& t) const { return with_grad ? tape.parameter(t) : tape.borrow(t); }
};

inline std::string head_name(std::size_t layer, std::size_t head, const char* what) {
    return "l" + std::to_string(layer) + ".h" + std::to_string(head) + "." + what;
}

// ---------------------------------------------------------------------------
// Initialisation

inline void validate(const GcnConfig& c) {
    if (c.in_dim == 0 || c.hidden == 0 || c.out_dim == 0 || c.n_layers == 0)
        throw ConfigError("gcn dimensions and layer count must be >= 1");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("gcn dropout must lie in [0,1)");
}
inline void validate(const GatConfig& c) {
    if (c.in_dim == 0 || c.hidden == 0 || c.out_dim == 0 || c.n_layers == 0 || c.heads == 0)
        throw ConfigError("gat dimensions, heads and layer count must be >= 1");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("gat dropout must lie in [0,1)");
}
inline void validate(const GatResNetConfig& c) {
    if (c.in_dim == 0 || c.hidden == 0 || c.out_dim == 0 || c.heads == 0)
        throw ConfigError("gat_resnet dimensions and heads must be >= 1");
    if (c.n_layers != 3) throw ConfigError("gat_resnet has exactly 3 GAT layers");
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ConfigError("gat_resnet dropout must lie in [0,1)");
}

/// Xavier-normal (gain 1) for every weight and attention vector.
inline ParamSet init_params(const GcnConfig& c, Rng& rng) {
    validate(c);
    ParamSet p;
    std::size_t width = c.in_dim;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const std::size_t out = l + 1 == c.n_layers ? c.out_dim : c.hidden;
        p.add("l" + std::to_string(l) + ".W", xavier_normal_init(width, out, 1.0, rng));
        width = out;
    }
    return p;
}

inline void add_gat_layer_params(ParamSet& p, std::size_t layer, std::size_t heads, std::size_t in,
                                 std::size_t out, Rng& rng) {
    for (std::size_t h = 0; h < heads; ++h) {
        p.add(head_name(layer, h, "W"), xavier_normal_init(in, out, 1.0, rng));
        p.add(head_name(layer, h, "a"), xavier_normal_init(2 * out, 1, 1.0, rng));
    }
}

inline ParamSet init_params(const GatConfig& c, Rng& rng) {
    validate(c);
    ParamSet p;
    std::size_t width = c.in_dim;
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const bool last = l + 1 == c.n_layers;
        const std::size_t out = last ? c.out_dim : c.hidden;
        add_gat_layer_params(p, l, c.heads, width, out, rng);
        width = c.heads * c.hidden;
    }
    return p;
}

inline ParamSet init_params(const GatResNetConfig& c, Rng& rng) {
    validate(c);
    ParamSet p;
    const std::size_t wide = c.heads * c.hidden;
    add_gat_layer_params(p, 0, c.heads, c.in_dim, c.hidden, rng);
    add_gat_layer_params(p, 1, c.heads, wide, c.hidden, rng);
    add_gat_layer_params(p, 2, c.heads, wide, c.out_dim, rng);
    if (c.use_skip) p.add("skip.W", xavier_normal_init(c.in_dim, c.out_dim, 1.0, rng));
    return p;
}

inline ParamSet init_params(const ModelConfig& c, Rng& rng) {
    return std::visit([&](const auto& cfg) { return init_params(cfg, rng); }, c);
}

// ---------------------------------------------------------------------------
// Forward passes

namespace detail {

inline void require_nodes(const Graph& g, ad::Var x, std::size_t in_dim) {
    if (x.rows() != g.n_nodes())
        throw DimensionError("features have " + std::to_string(x.rows()) + " rows for a graph of " +
                             std::to_string(g.n_nodes()) + " nodes");
    if (x.cols() != in_dim)
        throw DimensionError("features have " + std::to_string(x.cols()) + " columns, model expects " +
                             std::to_string(in_dim));
}

} // namespace detail

/// One multi-head attention layer. For each head: z = H W, edge score
/// e(j->i) = leaky_relu(a . [z_i || z_j]), alpha = softmax of e over the
/// incoming entries of i (self-loop included), out_i = sum_j alpha_ij z_j.
inline ad::Var gat_layer(const ParamBinder& bind, ParamSet& params, std::size_t layer, std::size_t heads,
                         const Graph& graph, ad::Var h, bool concat, double attn_slope, double attn_dropout,
                         bool training, Rng& rng) {
    std::vector<ad::Var> outs;
    outs.reserve(heads);
    for (std::size_t k = 0; k < heads; ++k) {
        Tensor& w = params.at(head_name(layer, k, "W"));
        Tensor& a = params.at(head_name(layer, k, "a"));
        if (w.rows() != h.cols())
            throw DimensionError("gat layer " + std::to_string(layer) + " expects width " +
                                 std::to_string(w.rows()) + ", got " + std::to_string(h.cols()));
        const std::size_t d = w.cols();
        const ad::Var z = ad::matmul(h, bind(w));
        const ad::Var av = bind(a);
        const ad::Var s_dst = ad::matmul(z, ad::slice_rows(av, 0, d));
        const ad::Var s_src = ad::matmul(z, ad::slice_rows(av, d, 2 * d));
        const ad::Var score = ad::leaky_relu(
            ad::add(ad::gather_rows(s_dst, graph.dst()), ad::gather_rows(s_src, graph.src())), attn_slope);
        ad::Var alpha = ad::segment_softmax(score, graph.dst(), graph.n_nodes());
        alpha = ad::dropout(alpha, attn_dropout, training, rng);
        outs.push_back(ad::edge_aggregate(z, alpha, graph.src(), graph.dst(), graph.n_nodes()));
    }
    if (outs.size() == 1) return outs.front();
    return concat ? ad::concat_cols(outs) : ad::average(outs);
}

/// H = ELU(A_hat X W1), dropout; logits = A_hat H W2 (more layers repeat the first step).
inline ad::Var gcn_logits(const ParamBinder& bind, const GcnConfig& cfg, ParamSet& params, const Graph& graph,
                          ad::Var x, bool training, Rng& rng) {
    detail::require_nodes(graph, x, cfg.in_dim);
    ad::Tape& tape = bind.tape;
    const ad::Var norm = tape.borrow(graph.gcn_norm());
    ad::Var h = x;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const ad::Var xw = ad::matmul(h, bind(params.at("l" + std::to_string(l) + ".W")));
        h = ad::edge_aggregate(xw, norm, graph.src(), graph.dst(), graph.n_nodes());
        if (l + 1 < cfg.n_layers) h = ad::dropout(ad::elu(h), cfg.dropout, training, rng);
    }
    return h;
}

inline ad::Var gat_logits(const ParamBinder& bind, const GatConfig& cfg, ParamSet& params, const Graph& graph,
                          ad::Var x, bool training, Rng& rng) {
    detail::require_nodes(graph, x, cfg.in_dim);
    ad::Var h = x;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const bool last = l + 1 == cfg.n_layers;
        h = gat_layer(bind, params, l, cfg.heads, graph, h, !last, cfg.attn_slope, cfg.dropout, training, rng);
        if (!last) h = ad::dropout(ad::elu(h), cfg.dropout, training, rng);
    }
    return h;
}

/// Intermediate activations of a GAT-ResNet pass.
struct GatResNetTrace {
    ad::Var layer1;
    ad::Var layer2;
    ad::Var residual;
};

/// L1 = drop(ELU(gat(X))), L2 = drop(ELU(gat(L1))), logits = gat(L1 + L2)
/// averaged over heads, plus X W_skip when use_skip.
inline ad::Var gat_resnet_logits(const ParamBinder& bind, const GatResNetConfig& cfg, ParamSet& params,
                                 const Graph& graph, ad::Var x, bool training, Rng& rng,
                                 GatResNetTrace* trace = nullptr) {
    detail::require_nodes(graph, x, cfg.in_dim);
    const ad::Var l1 = ad::dropout(
        ad::elu(gat_layer(bind, params, 0, cfg.heads, graph, x, true, cfg.attn_slope, cfg.dropout, training, rng)),
        cfg.dropout, training, rng);
    const ad::Var l2 = ad::dropout(
        ad::elu(gat_layer(bind, params, 1, cfg.heads, graph, l1, true, cfg.attn_slope, cfg.dropout, training, rng)),
        cfg.dropout, training, rng);
    const ad::Var res = ad::add(l1, l2);
    ad::Var logits = gat_layer(bind, params, 2, cfg.heads, graph, res, false, cfg.attn_slope, cfg.dropout,
                               training, rng);
    if (cfg.use_skip) {
        if (!params.contains("skip.W")) throw ConfigError("use_skip is set but no skip.W parameter exists");
        Tensor& ws = params.at("skip.W");
        if (ws.rows() != x.cols()) throw ConfigError("skip projection expects input width " + std::to_string(ws.rows()));
        logits = ad::add(logits, ad::matmul(x, bind(ws)));
    }
    if (trace) *trace = {l1, l2, res};
    return logits;
}

/// A GNN classifier: configuration plus its parameters.
struct GnnModel {
    ModelConfig config;
    ParamSet params;

    ModelKind kind() const {
        switch (config.index()) {
        case 0: return ModelKind::gcn;
        case 1: return ModelKind::gat;
        default: return ModelKind::gat_resnet;
        }
    }

    static GnnModel create(const ModelConfig& cfg, Rng& rng) { return {cfg, init_params(cfg, rng)}; }

    ad::Var logits(const ParamBinder& bind, const Graph& graph, ad::Var x, bool training, Rng& rng) {
        return std::visit(
            [&](const auto& cfg) -> ad::Var {
                using C = std::decay_t<decltype(cfg)>;
                if constexpr (std::is_same_v<C, GcnConfig>)
                    return gcn_logits(bind, cfg, params, graph, x, training, rng);
                else if constexpr (std::is_same_v<C, GatConfig>)
                    return gat_logits(bind, cfg, params, graph, x, training, rng);
                else
                    return gat_resnet_logits(bind, cfg, params, graph, x, training, rng);
            },
            config);
    }

    /// Inference-mode class probabilities.
    Tensor predict_proba(const Graph& graph, const Tensor& x) {
        ad::Tape tape;
        Rng unused(0);
        const ad::Var logits_var = logits({tape, false}, graph, tape.borrow(x), false, unused);
        return ad::softmax_rows(logits_var).value().detached();
    }
};

/// Probabilities from one forward pass; training mode draws dropout masks from rng.
inline Tensor gcn_forward(const GcnConfig& cfg, ParamSet& params, const Graph& graph, const Tensor& x,
                          bool training, Rng& rng) {
    ad::Tape tape;
    return ad::softmax_rows(gcn_logits({tape, false}, cfg, params, graph, tape.borrow(x), training, rng))
        .value()
        .detached();
}

inline Tensor gat_forward(const GatConfig& cfg, ParamSet& params, const Graph& graph, const Tensor& x,
                          bool training, Rng& rng) {
    ad::Tape tape;
    return ad::softmax_rows(gat_logits({tape, false}, cfg, params, graph, tape.borrow(x), training, rng))
        .value()
        .detached();
}

inline Tensor gat_resnet_forward(const GatResNetConfig& cfg, ParamSet& params, const Graph& graph,
                                 const Tensor& x, bool training, Rng& rng) {
    ad::Tape tape;
    return ad::softmax_rows(gat_resnet_logits({tape, false}, cfg, params, graph, tape.borrow(x), training, rng))
        .value()
        .detached();
}

/// Node embeddings: the post-ELU output of the first GAT-ResNet layer in
/// inference mode, width heads * hidden.
inline Tensor embed(const GatResNetConfig& cfg, ParamSet& params, const Graph& graph, const Tensor& x) {
    ad::Tape tape;
    const ParamBinder bind{tape, false};
    const ad::Var xv = tape.borrow(x);
    detail::require_nodes(graph, xv, cfg.in_dim);
    Rng unused(0);
    return ad::elu(gat_layer(bind, params, 0, cfg.heads, graph, xv, true, cfg.attn_slope, cfg.dropout, false, unused))
        .value()
        .detached();
}

} // namespace gatres
