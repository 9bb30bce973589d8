// Versioned text container of metadata and named tensors, plus the
// model-specific (de)serialisers built on it.
//
//   gatres-checkpoint 1
//   meta <key> <value to end of line>
//   tensor <name> <rows> <cols>
//   <rows*cols space-separated values>
//   end
#pragma once

#include <cstddef>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gatres/baselines.hpp"
#include "gatres/dataset.hpp"
#include "gatres/models.hpp"

namespace gatres {

inline constexpr const char* kCheckpointMagic = "gatres-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void set(std::string key, std::string value) {
        for (auto& [k, v] : meta)
            if (k == key) {
                v = std::move(value);
                return;
            }
        meta.emplace_back(std::move(key), std::move(value));
    }
    bool has(std::string_view key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return true;
        return false;
    }
    const std::string& get(std::string_view key) const {
        for (const auto& [k, v] : meta)
            if (k == key) return v;
        throw FormatError("checkpoint has no '" + std::string(key) + "' entry");
    }
    void add(std::string name, const Tensor& t) { tensors.emplace_back(std::move(name), t.detached()); }
    bool has_tensor(std::string_view name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }
    const Tensor& tensor(std::string_view name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw FormatError("checkpoint has no tensor '" + std::string(name) + "'");
    }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    auto out = detail::open_output(path);
    out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
    for (const auto& [k, v] : ck.meta) {
        if (k.empty() || k.find_first_of(" \t\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ParameterError("checkpoint metadata entry '" + k + "' cannot be stored");
        out << "meta " << k << ' ' << v << '\n';
    }
    for (const auto& [name, t] : ck.tensors) {
        out << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
        for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << detail::format_exact(t[i]);
        out << '\n';
    }
    out << "end\n";
    if (!out) throw IoError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    std::string line;
    std::size_t line_no = 0;
    auto fail = [&](const std::string& what) -> FormatError {
        return FormatError(detail::where(path, line_no) + ": " + what);
    };

    ++line_no;
    if (!std::getline(in, line)) throw fail("empty checkpoint");
    {
        std::istringstream head(line);
        std::string magic;
        int version = 0;
        if (!(head >> magic >> version) || magic != kCheckpointMagic) throw fail("not a gatres checkpoint");
        if (version != kCheckpointVersion)
            throw fail("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
    }

    Checkpoint ck;
    bool ended = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (ended) {
            if (!detail::is_blank(line)) throw fail("content after end marker");
            continue;
        }
        if (line == "end") {
            ended = true;
        } else if (line.rfind("meta ", 0) == 0) {
            const std::size_t sp = line.find(' ', 5);
            if (sp == std::string::npos) throw fail("malformed meta line");
            ck.meta.emplace_back(line.substr(5, sp - 5), line.substr(sp + 1));
        } else if (line.rfind("tensor ", 0) == 0) {
            std::istringstream head(line.substr(7));
            std::string name;
            std::size_t r = 0, c = 0;
            std::string extra;
            if (!(head >> name >> r >> c) || (head >> extra)) throw fail("malformed tensor header");
            ++line_no;
            if (!std::getline(in, line)) throw fail("missing values for tensor " + name);
            Tensor t(r, c);
            std::size_t k = 0;
            std::size_t start = 0;
            while (start < line.size()) {
                const std::size_t sp = line.find(' ', start);
                const std::string_view tok =
                    std::string_view(line).substr(start, sp == std::string::npos ? std::string::npos : sp - start);
                const auto v = detail::parse_double(tok);
                if (!v || k >= t.size()) throw fail("corrupt values for tensor " + name);
                t[k++] = *v;
                if (sp == std::string::npos) break;
                start = sp + 1;
            }
            if (k != t.size())
                throw fail("tensor " + name + " has " + std::to_string(k) + " values, expected " +
                           std::to_string(t.size()));
            ck.tensors.emplace_back(std::move(name), std::move(t));
        } else {
            throw fail("unrecognised line");
        }
    }
    if (!ended) throw FormatError(path.string() + ": truncated checkpoint (no end marker)");
    return ck;
}

// ---------------------------------------------------------------------------
// Model payloads

namespace detail {

inline std::size_t meta_size(const Checkpoint& ck, std::string_view key) {
    const auto v = parse_int(ck.get(key));
    if (!v || *v < 0) throw FormatError("checkpoint entry '" + std::string(key) + "' is not a count");
    return static_cast<std::size_t>(*v);
}

inline double meta_double(const Checkpoint& ck, std::string_view key) {
    const auto v = parse_double(ck.get(key));
    if (!v) throw FormatError("checkpoint entry '" + std::string(key) + "' is not a number");
    return *v;
}

} // namespace detail

inline void store_model(Checkpoint& ck, const GnnModel& model) {
    ck.set("model.kind", model_kind_name(model.kind()));
    std::visit(
        [&](const auto& c) {
            using C = std::decay_t<decltype(c)>;
            ck.set("model.in_dim", std::to_string(c.in_dim));
            ck.set("model.hidden", std::to_string(c.hidden));
            ck.set("model.out_dim", std::to_string(c.out_dim));
            ck.set("model.layers", std::to_string(c.n_layers));
            ck.set("model.dropout", detail::format_exact(c.dropout));
            if constexpr (!std::is_same_v<C, GcnConfig>) {
                ck.set("model.heads", std::to_string(c.heads));
                ck.set("model.attn_slope", detail::format_exact(c.attn_slope));
            }
            if constexpr (std::is_same_v<C, GatResNetConfig>) ck.set("model.use_skip", c.use_skip ? "1" : "0");
        },
        model.config);
    for (const auto& [name, t] : model.params.entries()) ck.add("param." + name, t);
}

inline GnnModel restore_gnn(const Checkpoint& ck) {
    const auto kind = parse_model_kind(ck.get("model.kind"));
    if (!kind || !is_gnn(*kind)) throw ModelKindError("checkpoint holds a " + ck.get("model.kind") + ", not a GNN");
    auto fill = [&](auto c) {
        c.in_dim = detail::meta_size(ck, "model.in_dim");
        c.hidden = detail::meta_size(ck, "model.hidden");
        c.out_dim = detail::meta_size(ck, "model.out_dim");
        c.n_layers = detail::meta_size(ck, "model.layers");
        c.dropout = detail::meta_double(ck, "model.dropout");
        using C = decltype(c);
        if constexpr (!std::is_same_v<C, GcnConfig>) {
            c.heads = detail::meta_size(ck, "model.heads");
            c.attn_slope = detail::meta_double(ck, "model.attn_slope");
        }
        if constexpr (std::is_same_v<C, GatResNetConfig>) c.use_skip = ck.get("model.use_skip") == "1";
        return ModelConfig{c};
    };
    const ModelConfig cfg = *kind == ModelKind::gcn ? fill(GcnConfig{})
                            : *kind == ModelKind::gat ? fill(GatConfig{})
                                                      : fill(GatResNetConfig{});
    std::visit([](const auto& c) { validate(c); }, cfg);

    // Initialise for the expected inventory, then overwrite every tensor.
    Rng rng(0);
    GnnModel model = GnnModel::create(cfg, rng);
    for (auto& [name, t] : model.params.entries()) {
        const Tensor& saved = ck.tensor("param." + name);
        if (!saved.same_shape(t))
            throw FormatError("checkpoint tensor param." + name + " has shape " + saved.shape_string() +
                              ", expected " + t.shape_string());
        std::copy(saved.data().begin(), saved.data().end(), t.data().begin());
    }
    return model;
}

inline void store_logreg(Checkpoint& ck, const LogRegParams& p) {
    ck.set("model.kind", model_kind_name(ModelKind::logreg));
    ck.add("logreg.weights", p.weights);
    ck.add("logreg.bias", p.bias);
}

inline LogRegParams restore_logreg(const Checkpoint& ck) {
    if (ck.get("model.kind") != model_kind_name(ModelKind::logreg))
        throw ModelKindError("checkpoint holds a " + ck.get("model.kind") + ", not a logreg model");
    LogRegParams p{ck.tensor("logreg.weights").detached(), ck.tensor("logreg.bias").detached()};
    if (p.weights.cols() != 1 || p.bias.rows() != 1 || p.bias.cols() != 1)
        throw FormatError("logreg tensors have inconsistent shapes");
    return p;
}

/// Trees are stored as n x 6 tensors with rows [feature, threshold, left, right, licit, illicit].
inline void store_forest(Checkpoint& ck, const RandomForest& f) {
    ck.set("model.kind", model_kind_name(ModelKind::random_forest));
    ck.set("forest.trees", std::to_string(f.trees.size()));
    for (std::size_t t = 0; t < f.trees.size(); ++t) {
        const auto& nodes = f.trees[t].nodes;
        Tensor m(nodes.size(), 6);
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            m(k, 0) = nodes[k].feature;
            m(k, 1) = nodes[k].threshold;
            m(k, 2) = nodes[k].left;
            m(k, 3) = nodes[k].right;
            m(k, 4) = nodes[k].counts[0];
            m(k, 5) = nodes[k].counts[1];
        }
        ck.add("tree." + std::to_string(t), m);
    }
}

inline RandomForest restore_forest(const Checkpoint& ck) {
    if (ck.get("model.kind") != model_kind_name(ModelKind::random_forest))
        throw ModelKindError("checkpoint holds a " + ck.get("model.kind") + ", not a random forest");
    RandomForest f;
    const std::size_t n = detail::meta_size(ck, "forest.trees");
    for (std::size_t t = 0; t < n; ++t) {
        const Tensor& m = ck.tensor("tree." + std::to_string(t));
        if (m.cols() != 6 || m.rows() == 0) throw FormatError("tree." + std::to_string(t) + " is malformed");
        DecisionTree tree;
        const auto rows = static_cast<double>(m.rows());
        for (std::size_t k = 0; k < m.rows(); ++k) {
            TreeNode node;
            node.feature = static_cast<int>(m(k, 0));
            node.threshold = m(k, 1);
            node.left = static_cast<int>(m(k, 2));
            node.right = static_cast<int>(m(k, 3));
            node.counts[0] = m(k, 4);
            node.counts[1] = m(k, 5);
            if (!node.is_leaf() && !(m(k, 2) > static_cast<double>(k) && m(k, 2) < rows && m(k, 3) > static_cast<double>(k) &&
                                     m(k, 3) < rows))
                throw FormatError("tree." + std::to_string(t) + " node " + std::to_string(k) + " has invalid children");
            tree.nodes.push_back(node);
        }
        f.trees.push_back(std::move(tree));
    }
    return f;
}

inline void store_scaler(Checkpoint& ck, const FeatureScaler& s) {
    ck.add("scaler.mean", Tensor(1, s.mean.size(), s.mean));
    ck.add("scaler.scale", Tensor(1, s.scale.size(), s.scale));
}

inline FeatureScaler restore_scaler(const Checkpoint& ck) {
    const Tensor& m = ck.tensor("scaler.mean");
    const Tensor& s = ck.tensor("scaler.scale");
    if (!m.same_shape(s) || m.rows() != 1) throw FormatError("scaler tensors have inconsistent shapes");
    return {std::vector<double>(m.data().begin(), m.data().end()), std::vector<double>(s.data().begin(), s.data().end())};
}

} // namespace gatres
