// Config-driven experiments: INI parsing, the data pipeline, and the
// validate / train / evaluate / compare / embed commands behind the CLI.
#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "gatres/baselines.hpp"
#include "gatres/checkpoint.hpp"
#include "gatres/dataset.hpp"
#include "gatres/metrics.hpp"
#include "gatres/models.hpp"
#include "gatres/train.hpp"

namespace gatres {

using ordered_json = nlohmann::ordered_json;

inline constexpr int kReportVersion = 1;
inline constexpr int kManifestVersion = 1;
inline constexpr const char* kDataDirEnv = "GATRES_DATA_DIR";

/// Published statistics of the public Elliptic release.
struct PublishedStats {
    static constexpr std::size_t nodes = 203769;
    static constexpr std::size_t edges = 234355;
    static constexpr std::size_t illicit = 4545;
    static constexpr std::size_t licit = 42019;
    static constexpr std::size_t time_steps = 49;
};

// ---------------------------------------------------------------------------
// Configuration

struct DataConfig {
    /// "elliptic" reads the CSV triplet, "synthetic" generates the fixture.
    std::string source = "elliptic";
    /// Empty means $GATRES_DATA_DIR, falling back to ./data.
    std::string dir;
    std::size_t max_nodes = 0;
    int boundary = kDefaultSplitBoundary;
    bool symmetrize = true;
    bool standardize = true;
    FeatureSet feature_set = FeatureSet::all;
    std::string embeddings;
    SyntheticSpec synthetic{};

    std::filesystem::path resolved_dir() const {
        if (!dir.empty()) return dir;
        if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
        return "data";
    }
};

struct ModelSection {
    ModelKind kind = ModelKind::gat_resnet;
    std::size_t hidden = 100;
    /// 0 selects the architecture default (GAT 8, GAT-ResNet 4).
    std::size_t heads = 0;
    /// 0 selects the architecture default (GCN 2, GAT 2, GAT-ResNet 3).
    std::size_t layers = 0;
    double dropout = 0.5;
    double attn_slope = 0.2;
    bool use_skip = false;
};

struct TrainSection {
    /// 0 selects the model default (500 for logreg, 1000 otherwise).
    std::size_t epochs = 0;
    double lr = 0.001;
    std::size_t patience = 50;
    double weight_licit = 0.3;
    double weight_illicit = 0.7;
    int validation_tail = 5;
    std::uint64_t seed = 15;
};

struct ForestSection {
    std::size_t n_estimators = 50;
    std::size_t max_features = 50;
    std::size_t max_depth = 0;
    bool bootstrap = true;
};

struct ExperimentConfig {
    DataConfig data;
    ModelSection model;
    TrainSection train;
    ForestSection forest;
    std::string out_dir = "runs/latest";

    std::size_t effective_epochs() const {
        if (train.epochs) return train.epochs;
        return model.kind == ModelKind::logreg ? LogRegConfig{}.epochs : TrainConfig{}.epochs;
    }

    ClassWeights weights() const { return {train.weight_licit, train.weight_illicit}; }

    TrainConfig train_config() const {
        TrainConfig t;
        t.epochs = effective_epochs();
        t.lr = train.lr;
        t.patience = train.patience;
        t.weights = weights();
        t.seed = train.seed;
        t.validation_tail = train.validation_tail;
        return t;
    }

    LogRegConfig logreg_config() const { return {effective_epochs(), train.lr, weights()}; }

    ForestConfig forest_config() const {
        ForestConfig f;
        f.n_estimators = forest.n_estimators;
        f.max_features = forest.max_features;
        f.max_depth = forest.max_depth;
        f.bootstrap = forest.bootstrap;
        f.weights = weights();
        f.seed = train.seed;
        return f;
    }

    ModelConfig model_config(std::size_t in_dim) const {
        const ModelSection& m = model;
        switch (m.kind) {
        case ModelKind::gcn: {
            GcnConfig c;
            c.in_dim = in_dim;
            c.hidden = m.hidden;
            if (m.layers) c.n_layers = m.layers;
            c.dropout = m.dropout;
            return c;
        }
        case ModelKind::gat: {
            GatConfig c;
            c.in_dim = in_dim;
            c.hidden = m.hidden;
            if (m.layers) c.n_layers = m.layers;
            if (m.heads) c.heads = m.heads;
            c.dropout = m.dropout;
            c.attn_slope = m.attn_slope;
            return c;
        }
        case ModelKind::gat_resnet: {
            GatResNetConfig c;
            c.in_dim = in_dim;
            c.hidden = m.hidden;
            if (m.layers) c.n_layers = m.layers;
            if (m.heads) c.heads = m.heads;
            c.dropout = m.dropout;
            c.attn_slope = m.attn_slope;
            c.use_skip = m.use_skip;
            return c;
        }
        default: throw ModelKindError(std::string(model_kind_name(m.kind)) + " is not a graph model");
        }
    }

    /// Cross-field checks; everything here fails before any data is read.
    void validate() const {
        if (data.source != "elliptic" && data.source != "synthetic")
            throw ConfigError("data.source must be 'elliptic' or 'synthetic', got '" + data.source + "'");
        if (data.boundary < 1 || data.boundary >= kMaxTimeStep)
            throw ConfigError("data.boundary must lie in [1, 49), got " + std::to_string(data.boundary));
        if (uses_embeddings(data.feature_set) && data.embeddings.empty())
            throw ConfigError(std::string("feature set ") + feature_set_name(data.feature_set) +
                              " requires data.embeddings");
        if (!uses_embeddings(data.feature_set) && !data.embeddings.empty())
            throw ConfigError(std::string("data.embeddings is set but feature set ") +
                              feature_set_name(data.feature_set) + " does not use embeddings");
        if (is_gnn(model.kind)) {
            try {
                std::visit([](const auto& c) { gatres::validate(c); }, model_config(kFeatureWidth));
            } catch (const Error& e) {
                throw ConfigError(std::string("model: ") + e.what());
            }
            if (model.kind == ModelKind::gcn && model.heads)
                throw ConfigError("model.heads does not apply to gcn");
            if (model.kind != ModelKind::gat_resnet && model.use_skip)
                throw ConfigError("model.use_skip applies only to gat_resnet");
            train_config().validate(data.boundary);
        } else {
            if (!(weights().licit > 0.0 && weights().illicit > 0.0) ||
                std::abs(weights().licit + weights().illicit - 1.0) > 1e-9)
                throw ConfigError("class weights must be positive and sum to 1");
        }
        if (model.kind == ModelKind::logreg && !(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
        if (model.kind == ModelKind::random_forest && (forest.n_estimators == 0 || forest.max_features == 0))
            throw ConfigError("forest.n_estimators and forest.max_features must be positive");
        if (data.source == "synthetic" && (data.synthetic.n_licit == 0 || data.synthetic.n_illicit == 0))
            throw ConfigError("synthetic.n_licit and synthetic.n_illicit must be positive");
    }
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> max_nodes;
};

/// Command-line overrides. A shortened run also shortens patience so the
/// patience <= epochs rule keeps holding.
inline void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.train.seed = *o.seed;
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    if (o.max_nodes) cfg.data.max_nodes = *o.max_nodes;
    if (o.epochs) {
        cfg.train.epochs = *o.epochs;
        cfg.train.patience = std::min(cfg.train.patience, *o.epochs);
    }
}

namespace detail {

inline std::size_t config_size(const std::string& key, const std::string& v) {
    const auto p = parse_int(v);
    if (!p || *p < 0) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(*p);
}

inline int config_int(const std::string& key, const std::string& v) {
    const auto p = parse_int(v);
    if (!p || *p < INT32_MIN || *p > INT32_MAX) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return static_cast<int>(*p);
}

inline double config_double(const std::string& key, const std::string& v) {
    const auto p = parse_double(v);
    if (!p || !std::isfinite(*p)) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return *p;
}

inline bool config_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::string bool_text(bool b) { return b ? "true" : "false"; }

struct ConfigKey {
    const char* name; // section.key
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define GATRES_SIZE_KEY(NAME, FIELD)                                                                                   \
    ConfigKey {                                                                                                        \
        NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = config_size(NAME, v); },                     \
            [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }                                          \
    }
#define GATRES_DOUBLE_KEY(NAME, FIELD)                                                                                 \
    ConfigKey {                                                                                                        \
        NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = config_double(NAME, v); },                   \
            [](const ExperimentConfig& c) { return format_exact(c.FIELD); }                                            \
    }
#define GATRES_BOOL_KEY(NAME, FIELD)                                                                                   \
    ConfigKey {                                                                                                        \
        NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = config_bool(NAME, v); },                     \
            [](const ExperimentConfig& c) { return bool_text(c.FIELD); }                                               \
    }
#define GATRES_STRING_KEY(NAME, FIELD)                                                                                 \
    ConfigKey {                                                                                                        \
        NAME, [](ExperimentConfig& c, const std::string& v) { c.FIELD = v; },                                         \
            [](const ExperimentConfig& c) { return c.FIELD; }                                                          \
    }

inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        GATRES_STRING_KEY("data.source", data.source),
        GATRES_STRING_KEY("data.dir", data.dir),
        GATRES_SIZE_KEY("data.max_nodes", data.max_nodes),
        ConfigKey{"data.boundary", [](ExperimentConfig& c, const std::string& v) { c.data.boundary = config_int("data.boundary", v); },
                  [](const ExperimentConfig& c) { return std::to_string(c.data.boundary); }},
        GATRES_BOOL_KEY("data.symmetrize", data.symmetrize),
        GATRES_BOOL_KEY("data.standardize", data.standardize),
        ConfigKey{"data.feature_set",
                  [](ExperimentConfig& c, const std::string& v) {
                      const auto f = parse_feature_set(v);
                      if (!f) throw ConfigError("data.feature_set: expected AF, LF, AF+NE or LF+NE, got '" + v + "'");
                      c.data.feature_set = *f;
                  },
                  [](const ExperimentConfig& c) { return std::string(feature_set_name(c.data.feature_set)); }},
        GATRES_STRING_KEY("data.embeddings", data.embeddings),
        GATRES_SIZE_KEY("synthetic.n_licit", data.synthetic.n_licit),
        GATRES_SIZE_KEY("synthetic.n_illicit", data.synthetic.n_illicit),
        GATRES_SIZE_KEY("synthetic.n_unknown", data.synthetic.n_unknown),
        GATRES_DOUBLE_KEY("synthetic.separation", data.synthetic.separation),
        GATRES_DOUBLE_KEY("synthetic.edge_density", data.synthetic.edge_density),
        GATRES_DOUBLE_KEY("synthetic.cross_class_ratio", data.synthetic.cross_class_ratio),
        GATRES_SIZE_KEY("synthetic.seed", data.synthetic.seed),
        ConfigKey{"model.kind",
                  [](ExperimentConfig& c, const std::string& v) {
                      const auto k = parse_model_kind(v);
                      if (!k)
                          throw ConfigError("model.kind: expected logreg, random_forest, gcn, gat or gat_resnet, got '" +
                                            v + "'");
                      c.model.kind = *k;
                  },
                  [](const ExperimentConfig& c) { return std::string(model_kind_name(c.model.kind)); }},
        GATRES_SIZE_KEY("model.hidden", model.hidden),
        GATRES_SIZE_KEY("model.heads", model.heads),
        GATRES_SIZE_KEY("model.layers", model.layers),
        GATRES_DOUBLE_KEY("model.dropout", model.dropout),
        GATRES_DOUBLE_KEY("model.attn_slope", model.attn_slope),
        GATRES_BOOL_KEY("model.use_skip", model.use_skip),
        GATRES_SIZE_KEY("train.epochs", train.epochs),
        GATRES_DOUBLE_KEY("train.lr", train.lr),
        GATRES_SIZE_KEY("train.patience", train.patience),
        GATRES_DOUBLE_KEY("train.weight_licit", train.weight_licit),
        GATRES_DOUBLE_KEY("train.weight_illicit", train.weight_illicit),
        ConfigKey{"train.validation_tail",
                  [](ExperimentConfig& c, const std::string& v) {
                      c.train.validation_tail = config_int("train.validation_tail", v);
                  },
                  [](const ExperimentConfig& c) { return std::to_string(c.train.validation_tail); }},
        GATRES_SIZE_KEY("train.seed", train.seed),
        GATRES_SIZE_KEY("forest.n_estimators", forest.n_estimators),
        GATRES_SIZE_KEY("forest.max_features", forest.max_features),
        GATRES_SIZE_KEY("forest.max_depth", forest.max_depth),
        GATRES_BOOL_KEY("forest.bootstrap", forest.bootstrap),
        GATRES_STRING_KEY("output.dir", out_dir),
    };
    return keys;
}

#undef GATRES_SIZE_KEY
#undef GATRES_DOUBLE_KEY
#undef GATRES_BOOL_KEY
#undef GATRES_STRING_KEY

} // namespace detail

/// Applies "section.key" = value pairs; unknown keys are errors.
inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : detail::config_keys())
        if (key == k.name) {
            k.set(cfg, value);
            return;
        }
    throw ConfigError("unknown configuration key '" + key + "'");
}

/// Every key in canonical text form, in declaration order.
inline std::vector<std::pair<std::string, std::string>> config_pairs(const ExperimentConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : detail::config_keys()) out.emplace_back(k.name, k.get(cfg));
    return out;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>") {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    ExperimentConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError(origin + ": key '" + section + "' must appear inside a [section]");
        for (const auto& [key, value] : body) apply_setting(cfg, section + "." + key, value.data());
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str(), path.string());
}

/// Config echo grouped by section. `with_output` controls the output.dir entry.
inline ordered_json config_json(const ExperimentConfig& cfg, bool with_output) {
    ordered_json j = ordered_json::object();
    for (const auto& [key, value] : config_pairs(cfg)) {
        const auto dot = key.find('.');
        const std::string section = key.substr(0, dot);
        if (section == "output" && !with_output) continue;
        if (section == "synthetic" && cfg.data.source != "synthetic") continue;
        j[section][key.substr(dot + 1)] = value;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Data pipeline

struct DatasetFingerprint {
    std::size_t nodes = 0;
    std::size_t edges = 0;
    std::size_t illicit = 0;
    std::size_t licit = 0;
    std::size_t unknown = 0;
    std::size_t time_steps = 0;
};

inline DatasetFingerprint fingerprint(const EllipticDataset& ds) {
    const LabelCounts c = ds.label_counts();
    return {ds.n_nodes(), ds.edges.size(), c.illicit, c.licit, c.unknown, ds.distinct_time_steps()};
}

inline ordered_json fingerprint_json(const DatasetFingerprint& f) {
    return {{"nodes", f.nodes},     {"edges", f.edges},     {"illicit", f.illicit},
            {"licit", f.licit},     {"unknown", f.unknown}, {"time_steps", f.time_steps}};
}

struct PreparedData {
    EllipticDataset dataset;
    DatasetFingerprint fingerprint;
    SplitMasks split;
    std::optional<FeatureScaler> scaler;
    Tensor x;
    Graph graph;
};

inline EllipticDataset load_source(const DataConfig& d) {
    if (d.source == "synthetic") return synthetic_graph(d.synthetic);
    return load_elliptic(DatasetPaths::in_directory(d.resolved_dir()));
}

/// load -> subsample -> split -> standardise -> feature selection -> graph.
/// A stored scaler, when given, replaces fitting so evaluation reuses the
/// training transform.
inline PreparedData prepare_data(const DataConfig& d, const FeatureScaler* stored_scaler = nullptr) {
    PreparedData p;
    p.dataset = load_source(d);
    if (d.max_nodes) p.dataset = subsample_earliest(p.dataset, d.max_nodes);
    p.fingerprint = fingerprint(p.dataset);
    p.split = temporal_split(p.dataset, d.boundary);
    if (d.standardize) {
        if (stored_scaler) {
            stored_scaler->apply(p.dataset.features);
            p.dataset.standardized = true;
            p.scaler = *stored_scaler;
        } else {
            p.scaler = standardize_features(p.dataset, p.split);
        }
    }
    std::optional<Tensor> emb;
    if (uses_embeddings(d.feature_set)) emb = load_embeddings(d.embeddings, p.dataset);
    p.x = select_features(p.dataset.features, d.feature_set, emb ? &*emb : nullptr);
    p.graph = build_graph(p.dataset, d.symmetrize);
    return p;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
    std::string model;
    std::string feature_set;
    std::uint64_t seed = 0;
    std::string split;
    Metrics metrics;
};

inline ordered_json metrics_json(const Metrics& m) {
    return {{"precision", m.precision},
            {"recall", m.recall},
            {"f1", m.f1},
            {"micro_f1", m.micro_f1},
            {"accuracy", m.accuracy},
            {"mcc", m.mcc},
            {"confusion",
             {{"tp", m.confusion.tp}, {"tn", m.confusion.tn}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn}}}};
}

inline Metrics metrics_from_json(const ordered_json& j) {
    Metrics m;
    m.precision = j.at("precision").get<double>();
    m.recall = j.at("recall").get<double>();
    m.f1 = j.at("f1").get<double>();
    m.micro_f1 = j.at("micro_f1").get<double>();
    m.accuracy = j.at("accuracy").get<double>();
    m.mcc = j.at("mcc").get<double>();
    const auto& c = j.at("confusion");
    m.confusion = {c.at("tp").get<std::size_t>(), c.at("tn").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                   c.at("fn").get<std::size_t>()};
    return m;
}

inline ordered_json training_json(const TrainLog& log) {
    ordered_json epochs = ordered_json::array();
    for (const auto& e : log.epochs) {
        ordered_json r = {{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        r["val_loss"] = e.val_loss ? ordered_json(*e.val_loss) : ordered_json(nullptr);
        epochs.push_back(std::move(r));
    }
    ordered_json j = {{"epochs_run", log.epochs.size()},
                      {"best_epoch", log.best_epoch},
                      {"stopped_early", log.stopped_early}};
    j["best_val_loss"] = log.best_val_loss ? ordered_json(*log.best_val_loss) : ordered_json(nullptr);
    j["log"] = std::move(epochs);
    return j;
}

inline void write_json(const std::filesystem::path& path, const ordered_json& j) {
    auto out = detail::open_output(path);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline ordered_json read_json(const std::filesystem::path& path) {
    auto in = detail::open_input(path);
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": not valid JSON (" + e.what() + ")");
    }
}

/// Reads a report and returns the metrics of its primary split.
inline MetricsReport read_report(const std::filesystem::path& path) {
    const ordered_json j = read_json(path);
    try {
        if (j.at("format").get<std::string>() != "gatres-report")
            throw FormatError(path.string() + ": not a gatres report");
        if (j.at("format_version").get<int>() != kReportVersion)
            throw FormatError(path.string() + ": report format version " +
                              std::to_string(j.at("format_version").get<int>()) + " is not supported");
        MetricsReport r;
        r.model = j.at("model").get<std::string>();
        r.feature_set = j.at("feature_set").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.split = j.at("primary_split").get<std::string>();
        r.metrics = metrics_from_json(j.at("metrics").at(r.split));
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": report schema mismatch (" + e.what() + ")");
    }
}

// ---------------------------------------------------------------------------
// Trained models

struct TrainedModel {
    ModelKind kind = ModelKind::gat_resnet;
    std::optional<GnnModel> gnn;
    std::optional<LogRegParams> logreg;
    std::optional<RandomForest> forest;

    std::optional<std::size_t> input_width() const {
        if (gnn) return std::visit([](const auto& c) { return c.in_dim; }, gnn->config);
        if (logreg) return logreg->weights.rows();
        return std::nullopt;
    }

    Tensor predict_proba(const PreparedData& d) {
        if (gnn) return gnn->predict_proba(d.graph, d.x);
        if (logreg) return logreg->predict_proba(d.x);
        return forest->predict_proba(d.x);
    }
};

inline std::vector<std::uint8_t> labeled_train_rows(const PreparedData& d) {
    std::vector<std::uint8_t> m(d.split.train.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = d.split.train[i] && d.split.eligible[i];
    return m;
}

inline TrainedModel fit_model(const ExperimentConfig& cfg, const PreparedData& d, TrainLog* log) {
    TrainedModel m;
    m.kind = cfg.model.kind;
    switch (cfg.model.kind) {
    case ModelKind::logreg:
        m.logreg = logreg_train(d.x, d.dataset.label, labeled_train_rows(d), cfg.logreg_config());
        break;
    case ModelKind::random_forest:
        m.forest = rf_fit(d.x, d.dataset.label, labeled_train_rows(d), cfg.forest_config());
        break;
    default: {
        Rng init = Rng::derive(cfg.train.seed, 0);
        m.gnn = GnnModel::create(cfg.model_config(d.x.cols()), init);
        TrainLog l = train(*m.gnn, d.graph, d.x, d.dataset.label, d.dataset.time_step, d.split, cfg.train_config());
        if (log) *log = std::move(l);
    }
    }
    return m;
}

inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, const PreparedData& d, const TrainedModel& m) {
    Checkpoint ck;
    for (const auto& [k, v] : config_pairs(cfg)) ck.set("config." + k, v);
    if (m.gnn) store_model(ck, *m.gnn);
    if (m.logreg) store_logreg(ck, *m.logreg);
    if (m.forest) store_forest(ck, *m.forest);
    if (d.scaler) store_scaler(ck, *d.scaler);
    return ck;
}

inline ExperimentConfig config_from_checkpoint(const Checkpoint& ck) {
    ExperimentConfig cfg;
    for (const auto& [k, v] : ck.meta)
        if (k.rfind("config.", 0) == 0) apply_setting(cfg, k.substr(7), v);
    return cfg;
}

inline TrainedModel model_from_checkpoint(const Checkpoint& ck) {
    TrainedModel m;
    const auto kind = parse_model_kind(ck.get("model.kind"));
    if (!kind) throw FormatError("checkpoint names unknown model kind '" + ck.get("model.kind") + "'");
    m.kind = *kind;
    if (is_gnn(*kind)) m.gnn = restore_gnn(ck);
    else if (*kind == ModelKind::logreg) m.logreg = restore_logreg(ck);
    else m.forest = restore_forest(ck);
    return m;
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
    std::ostream* progress = nullptr;
};

inline void note(const CommandOptions& o, const std::string& line) {
    if (o.progress) *o.progress << line << '\n';
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

struct ValidationResult {
    DatasetFingerprint fingerprint;
    std::vector<std::string> warnings;
};

inline ValidationResult cmd_validate(const DatasetPaths& paths) {
    const EllipticDataset ds = load_elliptic(paths);
    ValidationResult r{fingerprint(ds), {}};
    auto check = [&](const char* what, std::size_t got, std::size_t published) {
        if (got != published)
            r.warnings.push_back(std::string(what) + ": " + std::to_string(got) + " (published " +
                                 std::to_string(published) + ")");
    };
    check("nodes", r.fingerprint.nodes, PublishedStats::nodes);
    check("edges", r.fingerprint.edges, PublishedStats::edges);
    check("illicit", r.fingerprint.illicit, PublishedStats::illicit);
    check("licit", r.fingerprint.licit, PublishedStats::licit);
    check("time steps", r.fingerprint.time_steps, PublishedStats::time_steps);
    return r;
}

struct RunManifest {
    std::filesystem::path checkpoint;
    std::filesystem::path report;
    std::filesystem::path manifest;
    std::optional<std::filesystem::path> embeddings;
};

/// Report for a trained model: metrics on both splits plus the training log.
inline ordered_json report_json(const ExperimentConfig& cfg, const PreparedData& d, const std::string& primary,
                                const ordered_json& metrics, const ordered_json* training) {
    ordered_json j;
    j["format"] = "gatres-report";
    j["format_version"] = kReportVersion;
    j["model"] = model_kind_name(cfg.model.kind);
    j["feature_set"] = feature_set_name(cfg.data.feature_set);
    j["seed"] = cfg.train.seed;
    j["config"] = config_json(cfg, false);
    j["dataset"] = fingerprint_json(d.fingerprint);
    j["split"] = {{"boundary", d.split.boundary},
                  {"train_labeled", d.split.count(d.split.train, true)},
                  {"test_labeled", d.split.count(d.split.test, true)}};
    if (training) j["training"] = *training;
    j["primary_split"] = primary;
    j["metrics"] = metrics;
    return j;
}

inline const std::vector<std::uint8_t>& split_mask(const PreparedData& d, const std::string& split,
                                                   std::vector<std::uint8_t>& scratch) {
    if (split == "train") return d.split.train;
    if (split == "test") return d.split.test;
    if (split == "all") {
        scratch.assign(d.split.train.size(), 1);
        return scratch;
    }
    throw ConfigError("split must be train, test or all, got '" + split + "'");
}

inline RunManifest cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt = {}) {
    cfg.validate();
    const std::string started = utc_timestamp();
    const std::filesystem::path out = cfg.out_dir;

    note(opt, "loading data");
    PreparedData d = prepare_data(cfg.data);
    note(opt, "nodes " + std::to_string(d.fingerprint.nodes) + ", edges " + std::to_string(d.fingerprint.edges) +
                  ", train labeled " + std::to_string(d.split.count(d.split.train, true)) + ", test labeled " +
                  std::to_string(d.split.count(d.split.test, true)));

    note(opt, std::string("training ") + model_kind_name(cfg.model.kind));
    TrainLog log;
    TrainedModel model = fit_model(cfg, d, &log);
    const Tensor probs = model.predict_proba(d);

    ordered_json metrics;
    for (const char* split : {"train", "test"}) {
        std::vector<std::uint8_t> scratch;
        const auto& mask = split_mask(d, split, scratch);
        if (d.split.count(mask, true) == 0) continue;
        metrics[split] = metrics_json(evaluate(probs, d.dataset.label, mask));
    }
    const std::string primary = metrics.contains("test") ? "test" : "train";
    if (!metrics.contains(primary)) throw DegenerateDataError("no labeled nodes to evaluate");
    const ordered_json training = training_json(log);

    RunManifest m{out / "model.ckpt", out / "report.json", out / "manifest.json", std::nullopt};
    save_checkpoint(m.checkpoint, make_checkpoint(cfg, d, model));
    write_json(m.report, report_json(cfg, d, primary, metrics, is_gnn(cfg.model.kind) ? &training : nullptr));

    ordered_json man;
    man["format"] = "gatres-manifest";
    man["format_version"] = kManifestVersion;
    man["config"] = config_json(cfg, true);
    man["started_at"] = started;
    man["finished_at"] = utc_timestamp();
    man["artifacts"] = {{"checkpoint", m.checkpoint.string()}, {"report", m.report.string()}};
    man["dataset"] = fingerprint_json(d.fingerprint);
    write_json(m.manifest, man);
    note(opt, "wrote " + m.report.string());
    return m;
}

/// Inference on `split` of the data recorded in the checkpoint. A non-empty
/// `data_dir` overrides the recorded dataset directory.
inline MetricsReport cmd_evaluate(const std::filesystem::path& checkpoint, const std::string& split,
                                  const std::filesystem::path& report_path, const std::string& data_dir = {},
                                  const CommandOptions& opt = {}) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    ExperimentConfig cfg = config_from_checkpoint(ck);
    if (!data_dir.empty()) cfg.data.dir = data_dir;
    TrainedModel model = model_from_checkpoint(ck);
    std::optional<FeatureScaler> scaler;
    if (cfg.data.standardize) scaler = restore_scaler(ck);
    note(opt, "loading data");
    PreparedData d = prepare_data(cfg.data, scaler ? &*scaler : nullptr);
    if (const auto w = model.input_width(); w && *w != d.x.cols())
        throw DimensionError("checkpoint expects " + std::to_string(*w) + " features, prepared data has " +
                             std::to_string(d.x.cols()));
    std::vector<std::uint8_t> scratch;
    const auto& mask = split_mask(d, split, scratch);
    const Metrics m = evaluate(model.predict_proba(d), d.dataset.label, mask);
    ordered_json metrics;
    metrics[split] = metrics_json(m);
    write_json(report_path, report_json(cfg, d, split, metrics, nullptr));
    note(opt, "wrote " + report_path.string());
    return {model_kind_name(model.kind), feature_set_name(cfg.data.feature_set), cfg.train.seed, split, m};
}

struct Comparison {
    std::vector<MetricsReport> rows; // sorted by MCC, descending
    std::string table;
};

inline std::string fixed4(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

inline std::string report_label(const MetricsReport& r) { return r.model + " (" + r.feature_set + ")"; }

/// Table sorted by MCC plus radar.csv and mcc.csv in `out_dir` (skipped when empty).
inline Comparison cmd_compare(const std::vector<std::filesystem::path>& reports, const std::filesystem::path& out_dir) {
    if (reports.empty()) throw ConfigError("compare needs at least one report");
    Comparison c;
    for (const auto& p : reports) c.rows.push_back(read_report(p));
    std::stable_sort(c.rows.begin(), c.rows.end(),
                     [](const MetricsReport& a, const MetricsReport& b) { return a.metrics.mcc > b.metrics.mcc; });

    std::size_t width = std::string("model").size();
    for (const auto& r : c.rows) width = std::max(width, report_label(r).size());
    std::ostringstream t;
    t << std::left << std::setw(static_cast<int>(width)) << "model";
    for (const char* h : {"P", "R", "F1", "microF1", "MCC"}) t << "  " << std::right << std::setw(7) << h;
    t << '\n';
    for (const auto& r : c.rows) {
        t << std::left << std::setw(static_cast<int>(width)) << report_label(r);
        for (double v : {r.metrics.precision, r.metrics.recall, r.metrics.f1, r.metrics.micro_f1, r.metrics.mcc})
            t << "  " << std::right << std::setw(7) << fixed4(v);
        t << '\n';
    }
    c.table = t.str();

    if (!out_dir.empty()) {
        auto table = detail::open_output(out_dir / "compare.txt");
        table << c.table;
        auto radar = detail::open_output(out_dir / "radar.csv");
        radar << "model,precision,recall,f1,micro_f1,mcc\n";
        auto bars = detail::open_output(out_dir / "mcc.csv");
        bars << "model,mcc\n";
        for (const auto& r : c.rows) {
            const Metrics& m = r.metrics;
            radar << report_label(r) << ',' << fixed4(m.precision) << ',' << fixed4(m.recall) << ',' << fixed4(m.f1)
                  << ',' << fixed4(m.micro_f1) << ',' << fixed4(m.mcc) << '\n';
            bars << report_label(r) << ',' << fixed4(m.mcc) << '\n';
        }
        if (!table || !radar || !bars) throw IoError("failed writing comparison files in " + out_dir.string());
    }
    return c;
}

/// Exports GAT-ResNet first-layer embeddings for every node and records the
/// file in the manifest next to the checkpoint, when there is one.
inline std::filesystem::path cmd_embed(const std::filesystem::path& checkpoint, const std::filesystem::path& out_path,
                                       const std::string& data_dir = {}, const CommandOptions& opt = {}) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    if (ck.get("model.kind") != model_kind_name(ModelKind::gat_resnet))
        throw ModelKindError("embed needs a gat_resnet checkpoint, got " + ck.get("model.kind"));
    ExperimentConfig cfg = config_from_checkpoint(ck);
    if (!data_dir.empty()) cfg.data.dir = data_dir;
    GnnModel model = restore_gnn(ck);
    std::optional<FeatureScaler> scaler;
    if (cfg.data.standardize) scaler = restore_scaler(ck);
    note(opt, "loading data");
    const PreparedData d = prepare_data(cfg.data, scaler ? &*scaler : nullptr);
    const Tensor emb = embed(std::get<GatResNetConfig>(model.config), model.params, d.graph, d.x);
    write_embeddings(out_path, d.dataset, emb);

    const auto manifest = checkpoint.parent_path() / "manifest.json";
    if (std::filesystem::exists(manifest)) {
        ordered_json man = read_json(manifest);
        man["artifacts"]["embeddings"] = out_path.string();
        write_json(manifest, man);
    }
    note(opt, "wrote " + out_path.string());
    return out_path;
}

inline int exit_code(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::compute: return 4;
    case ErrorCategory::io: return 5;
    }
    return 4;
}

} // namespace gatres
