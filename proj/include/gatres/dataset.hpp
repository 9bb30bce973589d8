// Elliptic transaction dataset: CSV ingestion, temporal split, feature
// scaling, synthetic fixtures and embedding augmentation.
//
// File layouts (all comma separated, decimal notation):
//   features  no header; txId, time step, then 165 further features. The
//             time step doubles as feature 0 of the 166-wide matrix.
//   classes   header "txId,class"; class is "1" (illicit), "2" (licit) or "unknown".
//   edgelist  header "txId1,txId2"; value flows from txId1 to txId2.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gatres/error.hpp"
#include "gatres/graph.hpp"
#include "gatres/rng.hpp"
#include "gatres/tensor.hpp"

namespace gatres {

inline constexpr std::size_t kFeatureWidth = 166;
inline constexpr std::size_t kLocalFeatureWidth = 94;
inline constexpr int kMaxTimeStep = 49;
inline constexpr int kDefaultSplitBoundary = 34;

/// Internal encoding: illicit is the positive class.
enum class Label : std::int8_t { unknown = -1, licit = 0, illicit = 1 };

struct LabelCounts {
    std::size_t illicit = 0;
    std::size_t licit = 0;
    std::size_t unknown = 0;
};

struct EllipticDataset {
    Tensor features; // n x 166
    std::vector<int> time_step;
    std::vector<Label> label;
    std::vector<Edge> edges;
    std::vector<std::int64_t> tx_id;
    std::unordered_map<std::int64_t, Index> index_of;
    bool standardized = false;

    std::size_t n_nodes() const noexcept { return tx_id.size(); }

    LabelCounts label_counts() const {
        LabelCounts c;
        for (Label l : label) {
            if (l == Label::illicit) ++c.illicit;
            else if (l == Label::licit) ++c.licit;
            else ++c.unknown;
        }
        return c;
    }

    std::size_t distinct_time_steps() const {
        std::vector<bool> seen(kMaxTimeStep + 1, false);
        for (int t : time_step) seen[t] = true;
        return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
    }

    /// Rebuilds index_of from tx_id, rejecting duplicates.
    void reindex() {
        index_of.clear();
        index_of.reserve(tx_id.size());
        for (std::size_t i = 0; i < tx_id.size(); ++i)
            if (!index_of.emplace(tx_id[i], static_cast<Index>(i)).second)
                throw IntegrityError("duplicate transaction id " + std::to_string(tx_id[i]));
    }

    void validate() const {
        const std::size_t n = n_nodes();
        if (features.rows() != n || features.cols() != kFeatureWidth)
            throw IntegrityError("feature matrix " + features.shape_string() + " for " + std::to_string(n) +
                                 " nodes (expected width " + std::to_string(kFeatureWidth) + ")");
        if (time_step.size() != n || label.size() != n)
            throw IntegrityError("per-node arrays disagree on node count");
        for (std::size_t i = 0; i < n; ++i)
            if (time_step[i] < 1 || time_step[i] > kMaxTimeStep)
                throw IntegrityError("node " + std::to_string(tx_id[i]) + " has time step " +
                                     std::to_string(time_step[i]));
        for (const Edge& e : edges)
            if (e.src >= n || e.dst >= n) throw IntegrityError("edge endpoint outside node range");
    }
};

inline Graph build_graph(const EllipticDataset& ds, bool symmetrize = true) {
    return Graph::build(ds.n_nodes(), ds.edges, symmetrize, ds.tx_id);
}

// ---------------------------------------------------------------------------
// CSV parsing

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '"')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '"' || f.back() == '\r')) f.remove_suffix(1);
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc() && ptr == s.data() + s.size()) return v;
    // Accept integral values written in decimal notation, e.g. "7.0".
    const auto d = parse_double(s);
    if (d && std::isfinite(*d) && *d == std::floor(*d) && std::abs(*d) < 9.0e15)
        return static_cast<std::int64_t>(*d);
    return std::nullopt;
}

inline std::string where(const std::filesystem::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_exact(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline bool is_blank(std::string_view line) {
    return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

} // namespace detail

struct DatasetPaths {
    std::filesystem::path features;
    std::filesystem::path classes;
    std::filesystem::path edges;

    /// Public file names inside `dir`.
    static DatasetPaths in_directory(const std::filesystem::path& dir) {
        return {dir / "elliptic_txs_features.csv", dir / "elliptic_txs_classes.csv",
                dir / "elliptic_txs_edgelist.csv"};
    }
};

inline EllipticDataset load_elliptic(const DatasetPaths& paths) {
    EllipticDataset ds;
    std::vector<double> values;
    {
        auto in = detail::open_input(paths.features);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::is_blank(line)) continue;
            const auto fields = detail::split_csv(line);
            if (fields.size() != kFeatureWidth + 1)
                throw FormatError(detail::where(paths.features, line_no) + ": expected " +
                                  std::to_string(kFeatureWidth + 1) + " columns, found " +
                                  std::to_string(fields.size()));
            const auto id = detail::parse_int(fields[0]);
            if (!id) throw FormatError(detail::where(paths.features, line_no) + ": bad transaction id");
            const auto ts = detail::parse_int(fields[1]);
            if (!ts || *ts < 1 || *ts > kMaxTimeStep)
                throw FormatError(detail::where(paths.features, line_no) + ": time step '" +
                                  std::string(fields[1]) + "' outside 1..49");
            for (std::size_t c = 1; c < fields.size(); ++c) {
                const auto v = detail::parse_double(fields[c]);
                if (!v || !std::isfinite(*v))
                    throw FormatError(detail::where(paths.features, line_no) + ": column " +
                                      std::to_string(c) + " is not a finite number");
                values.push_back(*v);
            }
            ds.tx_id.push_back(*id);
            ds.time_step.push_back(static_cast<int>(*ts));
        }
    }
    const std::size_t n = ds.tx_id.size();
    ds.features = Tensor(n, kFeatureWidth, std::move(values));
    ds.reindex();

    ds.label.assign(n, Label::unknown);
    {
        std::vector<bool> seen(n, false);
        auto in = detail::open_input(paths.classes);
        std::string line;
        std::size_t line_no = 0;
        bool header = true;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::is_blank(line)) continue;
            const auto fields = detail::split_csv(line);
            if (header) {
                header = false;
                if (fields.size() == 2 && fields[0] == "txId") continue;
                throw FormatError(detail::where(paths.classes, line_no) + ": expected header 'txId,class'");
            }
            if (fields.size() != 2)
                throw FormatError(detail::where(paths.classes, line_no) + ": expected 2 columns");
            const auto id = detail::parse_int(fields[0]);
            if (!id) throw FormatError(detail::where(paths.classes, line_no) + ": bad transaction id");
            Label l;
            if (fields[1] == "1") l = Label::illicit;
            else if (fields[1] == "2") l = Label::licit;
            else if (fields[1] == "unknown") l = Label::unknown;
            else
                throw FormatError(detail::where(paths.classes, line_no) + ": class '" + std::string(fields[1]) +
                                  "' not in {1, 2, unknown}");
            const auto it = ds.index_of.find(*id);
            if (it == ds.index_of.end())
                throw IntegrityError(detail::where(paths.classes, line_no) + ": unknown transaction id " +
                                     std::to_string(*id));
            if (seen[it->second])
                throw IntegrityError(detail::where(paths.classes, line_no) + ": duplicate class row for " +
                                     std::to_string(*id));
            seen[it->second] = true;
            ds.label[it->second] = l;
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!seen[i])
                throw IntegrityError(paths.classes.string() + ": no class row for transaction " +
                                     std::to_string(ds.tx_id[i]));
    }
    {
        auto in = detail::open_input(paths.edges);
        std::string line;
        std::size_t line_no = 0;
        bool header = true;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::is_blank(line)) continue;
            const auto fields = detail::split_csv(line);
            if (header) {
                header = false;
                if (fields.size() == 2 && fields[0] == "txId1") continue;
                throw FormatError(detail::where(paths.edges, line_no) + ": expected header 'txId1,txId2'");
            }
            if (fields.size() != 2) throw FormatError(detail::where(paths.edges, line_no) + ": expected 2 columns");
            const auto a = detail::parse_int(fields[0]);
            const auto b = detail::parse_int(fields[1]);
            if (!a || !b) throw FormatError(detail::where(paths.edges, line_no) + ": bad transaction id");
            const auto ia = ds.index_of.find(*a);
            const auto ib = ds.index_of.find(*b);
            if (ia == ds.index_of.end() || ib == ds.index_of.end())
                throw IntegrityError(detail::where(paths.edges, line_no) + ": edge references unknown transaction " +
                                     std::to_string(ia == ds.index_of.end() ? *a : *b));
            ds.edges.push_back({ia->second, ib->second});
        }
    }
    return ds;
}

/// Writes the dataset back in the layout load_elliptic() reads.
inline void write_elliptic(const EllipticDataset& ds, const DatasetPaths& paths) {
    {
        auto out = detail::open_output(paths.features);
        for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
            out << ds.tx_id[i];
            for (double v : ds.features.row(i)) out << ',' << detail::format_exact(v);
            out << '\n';
        }
    }
    {
        auto out = detail::open_output(paths.classes);
        out << "txId,class\n";
        for (std::size_t i = 0; i < ds.n_nodes(); ++i) {
            const char* c = ds.label[i] == Label::illicit ? "1" : ds.label[i] == Label::licit ? "2" : "unknown";
            out << ds.tx_id[i] << ',' << c << '\n';
        }
    }
    {
        auto out = detail::open_output(paths.edges);
        out << "txId1,txId2\n";
        for (const Edge& e : ds.edges) out << ds.tx_id[e.src] << ',' << ds.tx_id[e.dst] << '\n';
    }
}

// ---------------------------------------------------------------------------
// Splitting and scaling

struct SplitMasks {
    int boundary = kDefaultSplitBoundary;
    std::vector<std::uint8_t> train;
    std::vector<std::uint8_t> test;
    /// Labeled nodes; only these contribute to losses and metrics.
    std::vector<std::uint8_t> eligible;

    std::size_t count(const std::vector<std::uint8_t>& mask, bool labeled_only) const {
        std::size_t c = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) c += mask[i] && (!labeled_only || eligible[i]);
        return c;
    }
};

/// Nodes with time_step <= boundary train, the rest test.
inline SplitMasks temporal_split(const EllipticDataset& ds, int boundary = kDefaultSplitBoundary) {
    if (boundary < 1 || boundary >= kMaxTimeStep)
        throw ParameterError("split boundary must lie in [1, 49), got " + std::to_string(boundary));
    SplitMasks m;
    m.boundary = boundary;
    const std::size_t n = ds.n_nodes();
    m.train.resize(n);
    m.test.resize(n);
    m.eligible.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        m.train[i] = ds.time_step[i] <= boundary;
        m.test[i] = !m.train[i];
        m.eligible[i] = ds.label[i] != Label::unknown;
    }
    return m;
}

/// Per-column z-score statistics fitted on training rows.
struct FeatureScaler {
    std::vector<double> mean;
    /// Divisor per column; 1 for columns whose train std fell below 1e-12.
    std::vector<double> scale;

    void apply(Tensor& x) const {
        if (x.cols() != mean.size())
            throw DimensionError("scaler fitted on " + std::to_string(mean.size()) + " columns applied to " +
                                 x.shape_string());
        for (std::size_t i = 0; i < x.rows(); ++i) {
            auto r = x.row(i);
            for (std::size_t j = 0; j < r.size(); ++j) r[j] = (r[j] - mean[j]) / scale[j];
        }
    }

    static FeatureScaler fit(const Tensor& x, const std::vector<std::uint8_t>& rows) {
        const std::size_t d = x.cols();
        FeatureScaler s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
        std::size_t n = 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            if (!rows[i]) continue;
            ++n;
            for (std::size_t j = 0; j < d; ++j) s.mean[j] += x(i, j);
        }
        if (n == 0) throw ParameterError("cannot fit feature scaling on an empty training mask");
        for (double& m : s.mean) m /= static_cast<double>(n);
        std::vector<double> var(d, 0.0);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            if (!rows[i]) continue;
            for (std::size_t j = 0; j < d; ++j) {
                const double c = x(i, j) - s.mean[j];
                var[j] += c * c;
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            const double sd = std::sqrt(var[j] / static_cast<double>(n));
            s.scale[j] = sd < 1e-12 ? 1.0 : sd;
        }
        return s;
    }
};

/// Standardises ds.features in place with train-split statistics.
inline FeatureScaler standardize_features(EllipticDataset& ds, const SplitMasks& masks) {
    if (ds.standardized) throw ParameterError("dataset features are already standardized");
    FeatureScaler s = FeatureScaler::fit(ds.features, masks.train);
    s.apply(ds.features);
    ds.standardized = true;
    return s;
}

/// The first `max_nodes` nodes by time step (stable in file order), with
/// edges restricted to the kept nodes.
inline EllipticDataset subsample_earliest(const EllipticDataset& ds, std::size_t max_nodes) {
    if (max_nodes >= ds.n_nodes()) return ds;
    std::vector<Index> order(ds.n_nodes());
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index a, Index b) { return ds.time_step[a] < ds.time_step[b]; });
    order.resize(max_nodes);
    std::sort(order.begin(), order.end());

    EllipticDataset out;
    std::vector<std::int64_t> remap(ds.n_nodes(), -1);
    out.features = Tensor(max_nodes, ds.features.cols());
    for (std::size_t k = 0; k < order.size(); ++k) {
        const Index i = order[k];
        remap[i] = static_cast<std::int64_t>(k);
        std::copy(ds.features.row(i).begin(), ds.features.row(i).end(), out.features.row(k).begin());
        out.time_step.push_back(ds.time_step[i]);
        out.label.push_back(ds.label[i]);
        out.tx_id.push_back(ds.tx_id[i]);
    }
    for (const Edge& e : ds.edges)
        if (remap[e.src] >= 0 && remap[e.dst] >= 0)
            out.edges.push_back({static_cast<Index>(remap[e.src]), static_cast<Index>(remap[e.dst])});
    out.standardized = ds.standardized;
    out.reindex();
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

struct SyntheticSpec {
    std::size_t n_licit = 50;
    std::size_t n_illicit = 50;
    std::size_t n_unknown = 0;
    /// Distance between the two class means in feature space.
    double separation = 10.0;
    /// Edge probability between same-class node pairs.
    double edge_density = 0.1;
    /// Cross-class edge probability as a fraction of edge_density.
    double cross_class_ratio = 0.1;
    std::uint64_t seed = 7;
};

/// Two Gaussian clusters along a random unit direction of the 165
/// non-time features, unit noise, homophilous random edges. Unknown-label
/// nodes draw their cluster at random.
inline EllipticDataset synthetic_graph(const SyntheticSpec& spec) {
    if (spec.n_licit == 0 || spec.n_illicit == 0)
        throw ParameterError("synthetic_graph needs at least one node per class");
    Rng rng(spec.seed);
    const std::size_t n = spec.n_licit + spec.n_illicit + spec.n_unknown;

    std::vector<double> direction(kFeatureWidth - 1);
    double norm = 0.0;
    for (double& v : direction) {
        v = rng.normal();
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : direction) v /= norm;

    EllipticDataset ds;
    ds.features = Tensor(n, kFeatureWidth);
    std::vector<int> cluster(n);
    for (std::size_t i = 0; i < n; ++i) {
        Label l = i < spec.n_licit ? Label::licit
                  : i < spec.n_licit + spec.n_illicit ? Label::illicit
                                                       : Label::unknown;
        cluster[i] = l == Label::unknown ? static_cast<int>(rng.uniform_index(2)) : static_cast<int>(l);
        const double sign = cluster[i] == 1 ? 0.5 : -0.5;
        const int ts = 1 + static_cast<int>(rng.uniform_index(kMaxTimeStep));
        ds.tx_id.push_back(static_cast<std::int64_t>(1000 + i));
        ds.time_step.push_back(ts);
        ds.label.push_back(l);
        ds.features(i, 0) = ts;
        for (std::size_t j = 1; j < kFeatureWidth; ++j)
            ds.features(i, j) = rng.normal() + sign * spec.separation * direction[j - 1];
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double p = cluster[i] == cluster[j] ? spec.edge_density : spec.edge_density * spec.cross_class_ratio;
            const double u = rng.uniform();
            const bool forward = rng.uniform() < 0.5;
            if (u < p)
                ds.edges.push_back(forward ? Edge{static_cast<Index>(i), static_cast<Index>(j)}
                                           : Edge{static_cast<Index>(j), static_cast<Index>(i)});
        }
    }
    ds.reindex();
    return ds;
}

// ---------------------------------------------------------------------------
// Feature sets and embedding augmentation

/// AF = all 166 features, LF = the first 94 (local) features; NE appends node embeddings.
enum class FeatureSet { all, local, all_embed, local_embed };

inline const char* feature_set_name(FeatureSet f) {
    switch (f) {
    case FeatureSet::all: return "AF";
    case FeatureSet::local: return "LF";
    case FeatureSet::all_embed: return "AF+NE";
    case FeatureSet::local_embed: return "LF+NE";
    }
    return "?";
}

inline std::optional<FeatureSet> parse_feature_set(std::string_view s) {
    if (s == "AF") return FeatureSet::all;
    if (s == "LF") return FeatureSet::local;
    if (s == "AF+NE") return FeatureSet::all_embed;
    if (s == "LF+NE") return FeatureSet::local_embed;
    return std::nullopt;
}

inline bool uses_embeddings(FeatureSet f) {
    return f == FeatureSet::all_embed || f == FeatureSet::local_embed;
}

/// Column selection plus optional embedding columns (rows aligned with nodes).
inline Tensor select_features(const Tensor& features, FeatureSet set, const Tensor* embeddings = nullptr) {
    const std::size_t base =
        (set == FeatureSet::local || set == FeatureSet::local_embed) ? kLocalFeatureWidth : features.cols();
    const std::size_t extra = uses_embeddings(set) ? (embeddings ? embeddings->cols() : 0) : 0;
    if (uses_embeddings(set) && !embeddings) throw ConfigError("feature set needs node embeddings");
    if (embeddings && uses_embeddings(set) && embeddings->rows() != features.rows())
        throw DimensionError("embeddings " + embeddings->shape_string() + " for " +
                             std::to_string(features.rows()) + " nodes");
    Tensor out(features.rows(), base + extra);
    for (std::size_t i = 0; i < features.rows(); ++i) {
        auto o = out.row(i);
        std::copy_n(features.row(i).begin(), base, o.begin());
        if (extra) std::copy(embeddings->row(i).begin(), embeddings->row(i).end(), o.begin() + base);
    }
    return out;
}

/// Writes "txId,e0,...,e{k-1}" then one row per node, 12 significant digits.
inline void write_embeddings(const std::filesystem::path& path, const EllipticDataset& ds, const Tensor& emb) {
    if (emb.rows() != ds.n_nodes())
        throw DimensionError("embedding rows " + std::to_string(emb.rows()) + " for " +
                             std::to_string(ds.n_nodes()) + " nodes");
    auto out = detail::open_output(path);
    out << "txId";
    for (std::size_t j = 0; j < emb.cols(); ++j) out << ",e" << j;
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < emb.rows(); ++i) {
        out << ds.tx_id[i];
        for (double v : emb.row(i)) {
            std::snprintf(buf, sizeof buf, "%.12g", v);
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

/// Reads an embedding CSV and aligns its rows to `ds` by transaction id.
inline Tensor load_embeddings(const std::filesystem::path& path, const EllipticDataset& ds) {
    auto in = detail::open_input(path);
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    Tensor out;
    std::vector<bool> seen(ds.n_nodes(), false);
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::is_blank(line)) continue;
        const auto fields = detail::split_csv(line);
        if (width == 0) {
            if (fields.size() < 2 || fields[0] != "txId")
                throw FormatError(detail::where(path, line_no) + ": expected embedding header 'txId,e0,...'");
            width = fields.size() - 1;
            out = Tensor(ds.n_nodes(), width);
            continue;
        }
        if (fields.size() != width + 1)
            throw FormatError(detail::where(path, line_no) + ": expected " + std::to_string(width + 1) + " columns");
        const auto id = detail::parse_int(fields[0]);
        if (!id) throw FormatError(detail::where(path, line_no) + ": bad transaction id");
        const auto it = ds.index_of.find(*id);
        if (it == ds.index_of.end()) continue; // rows for nodes outside a subsample
        for (std::size_t j = 0; j < width; ++j) {
            const auto v = detail::parse_double(fields[j + 1]);
            if (!v) throw FormatError(detail::where(path, line_no) + ": column " + std::to_string(j + 1));
            out(it->second, j) = *v;
        }
        seen[it->second] = true;
    }
    if (width == 0) throw FormatError(path.string() + ": empty embedding file");
    for (std::size_t i = 0; i < ds.n_nodes(); ++i)
        if (!seen[i])
            throw IntegrityError(path.string() + ": no embedding for transaction " + std::to_string(ds.tx_id[i]));
    return out;
}

} // namespace gatres
