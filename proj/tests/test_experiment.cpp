#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "gatres/experiment.hpp"

namespace fs = std::filesystem;
using namespace gatres;

namespace {

class TempDir {
public:
    TempDir() {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() /
                ("gatres_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" +
                 std::to_string(::getpid()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) ++n;
    return n;
}

ExperimentConfig synthetic_config(ModelKind kind, const fs::path& out) {
    ExperimentConfig c;
    c.data.source = "synthetic";
    c.model.kind = kind;
    c.model.hidden = 8;
    c.model.heads = 2;
    c.train.epochs = 20;
    c.train.patience = 20;
    c.forest.n_estimators = 5;
    c.forest.max_features = 20;
    c.out_dir = out.string();
    return c;
}

fs::path fixture_dir() { return fs::path(GATRES_FIXTURE_DIR) / "tiny"; }

} // namespace

TEST(Config, ParsesSectionsAndKeepsDefaults) {
    const ExperimentConfig c = parse_config_text("[model]\nkind = gcn\nhidden = 64\n[train]\nlr = 0.01\n"
                                                 "seed = 3\n[data]\nfeature_set = LF\nboundary = 30\n");
    EXPECT_EQ(c.model.kind, ModelKind::gcn);
    EXPECT_EQ(c.model.hidden, 64u);
    EXPECT_EQ(c.train.lr, 0.01);
    EXPECT_EQ(c.train.seed, 3u);
    EXPECT_EQ(c.data.feature_set, FeatureSet::local);
    EXPECT_EQ(c.data.boundary, 30);
    EXPECT_EQ(c.train.patience, 50u);
    EXPECT_EQ(c.effective_epochs(), 1000u);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, DefaultsMatchReferenceSetup) {
    ExperimentConfig c;
    EXPECT_EQ(c.model.kind, ModelKind::gat_resnet);
    const auto m = std::get<GatResNetConfig>(c.model_config(166));
    EXPECT_EQ(m.hidden, 100u);
    EXPECT_EQ(m.heads, 4u);
    EXPECT_EQ(m.n_layers, 3u);
    EXPECT_EQ(m.dropout, 0.5);
    EXPECT_EQ(c.train_config().lr, 0.001);
    EXPECT_EQ(c.train_config().weights.licit, 0.3);
    EXPECT_EQ(c.train_config().weights.illicit, 0.7);
    EXPECT_EQ(c.train_config().seed, 15u);
    EXPECT_EQ(c.data.boundary, 34);
    c.model.kind = ModelKind::logreg;
    EXPECT_EQ(c.effective_epochs(), 500u);
    c.model.kind = ModelKind::gat;
    EXPECT_EQ(std::get<GatConfig>(c.model_config(166)).heads, 8u);
}

TEST(Config, RejectsUnknownKeysBadValuesAndInconsistentSettings) {
    EXPECT_THROW(parse_config_text("[model]\nkinds = gcn\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[nope]\nx = 1\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[model]\nhidden = ten\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[model]\nhidden = -4\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[train]\nlr = 0.1x\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[model]\nuse_skip = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[model]\nkind = svm\n"), ConfigError);
    EXPECT_THROW(parse_config_text("seed = 4\n"), ConfigError);
    EXPECT_THROW(parse_config_text("[model\nkind = gat\n"), ConfigError);

    auto invalid = [](const std::string& text) { return [text] { parse_config_text(text).validate(); }; };
    EXPECT_THROW(invalid("[data]\nfeature_set = AF+NE\n")(), ConfigError);
    EXPECT_THROW(invalid("[data]\nembeddings = e.csv\n")(), ConfigError);
    EXPECT_THROW(invalid("[train]\nweight_licit = 0.5\n")(), ConfigError);
    EXPECT_THROW(invalid("[train]\nepochs = 10\npatience = 20\n")(), ConfigError);
    EXPECT_THROW(invalid("[model]\nkind = gcn\nheads = 2\n")(), ConfigError);
    EXPECT_THROW(invalid("[model]\nkind = gat\nuse_skip = true\n")(), ConfigError);
    EXPECT_THROW(invalid("[model]\ndropout = 1.0\n")(), ConfigError);
    EXPECT_THROW(invalid("[data]\nboundary = 49\n")(), ConfigError);
    EXPECT_THROW(invalid("[data]\nsource = postgres\n")(), ConfigError);
    EXPECT_NO_THROW(invalid("[data]\nfeature_set = AF+NE\nembeddings = e.csv\n")());
    EXPECT_THROW(load_config("/nonexistent/gatres.ini"), IoError);
}

TEST(Config, OverridesApplyAndClampPatience) {
    ExperimentConfig c;
    apply_overrides(c, {7, std::string("o"), 10, 500});
    EXPECT_EQ(c.train.seed, 7u);
    EXPECT_EQ(c.out_dir, "o");
    EXPECT_EQ(c.train.epochs, 10u);
    EXPECT_EQ(c.train.patience, 10u);
    EXPECT_EQ(c.data.max_nodes, 500u);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, PairsRoundTripThroughText) {
    ExperimentConfig c = synthetic_config(ModelKind::gcn, "x");
    c.train.lr = 0.0123456789012345;
    std::string text;
    std::string section;
    for (const auto& [k, v] : config_pairs(c)) {
        const auto dot = k.find('.');
        if (k.substr(0, dot) != section) {
            section = k.substr(0, dot);
            text += "[" + section + "]\n";
        }
        text += k.substr(dot + 1) + " = " + v + "\n";
    }
    const ExperimentConfig back = parse_config_text(text);
    EXPECT_EQ(config_pairs(back), config_pairs(c));
}

TEST(Config, DataDirFallsBackToEnvironment) {
    DataConfig d;
    ::setenv(kDataDirEnv, "/from/env", 1);
    EXPECT_EQ(d.resolved_dir(), fs::path("/from/env"));
    d.dir = "explicit";
    EXPECT_EQ(d.resolved_dir(), fs::path("explicit"));
    ::unsetenv(kDataDirEnv);
    d.dir.clear();
    EXPECT_EQ(d.resolved_dir(), fs::path("data"));
}

TEST(Checkpoint, GnnRoundTripPreservesPredictionsBitwise) {
    TempDir tmp;
    for (ModelKind kind : {ModelKind::gcn, ModelKind::gat, ModelKind::gat_resnet}) {
        ExperimentConfig cfg = synthetic_config(kind, tmp.path());
        cfg.train.epochs = 3;
        cfg.train.patience = 3;
        cfg.model.use_skip = kind == ModelKind::gat_resnet;
        const PreparedData d = prepare_data(cfg.data);
        TrainedModel m = fit_model(cfg, d, nullptr);
        save_checkpoint(tmp / "m.ckpt", make_checkpoint(cfg, d, m));
        const Checkpoint ck = load_checkpoint(tmp / "m.ckpt");
        TrainedModel back = model_from_checkpoint(ck);
        EXPECT_EQ(back.kind, kind);
        EXPECT_EQ(back.predict_proba(d), m.predict_proba(d)) << model_kind_name(kind);
        EXPECT_EQ(config_pairs(config_from_checkpoint(ck)), config_pairs(cfg));
        const FeatureScaler s = restore_scaler(ck);
        EXPECT_EQ(s.mean, d.scaler->mean);
        EXPECT_EQ(s.scale, d.scaler->scale);
    }
}

TEST(Checkpoint, BaselineRoundTripsPreservePredictions) {
    TempDir tmp;
    for (ModelKind kind : {ModelKind::logreg, ModelKind::random_forest}) {
        const ExperimentConfig cfg = synthetic_config(kind, tmp.path());
        const PreparedData d = prepare_data(cfg.data);
        TrainedModel m = fit_model(cfg, d, nullptr);
        save_checkpoint(tmp / "b.ckpt", make_checkpoint(cfg, d, m));
        TrainedModel back = model_from_checkpoint(load_checkpoint(tmp / "b.ckpt"));
        EXPECT_EQ(back.predict_proba(d), m.predict_proba(d)) << model_kind_name(kind);
    }
}

TEST(Checkpoint, CorruptedOrForeignFilesAreFormatErrors) {
    TempDir tmp;
    Checkpoint ck;
    ck.set("model.kind", "logreg");
    ck.add("logreg.weights", Tensor::of({{1.5}, {-2.0}}));
    ck.add("logreg.bias", Tensor::of({{0.25}}));
    save_checkpoint(tmp / "ok.ckpt", ck);
    const std::string good = slurp(tmp / "ok.ckpt");
    EXPECT_NO_THROW(load_checkpoint(tmp / "ok.ckpt"));
    EXPECT_EQ(restore_logreg(load_checkpoint(tmp / "ok.ckpt")).weights, ck.tensor("logreg.weights"));

    auto expect_format_error = [&](const std::string& text, const char* what) {
        spit(tmp / "bad.ckpt", text);
        EXPECT_THROW(load_checkpoint(tmp / "bad.ckpt"), FormatError) << what;
    };
    std::string wrong_version = good;
    wrong_version.replace(good.find(" 1\n"), 3, " 2\n");
    expect_format_error(wrong_version, "version");
    expect_format_error("not-a-checkpoint 1\n" + good.substr(good.find('\n') + 1), "magic");
    expect_format_error(good.substr(0, good.size() / 2), "truncated");
    expect_format_error(good.substr(0, good.rfind("end")), "no end marker");
    expect_format_error(good + "extra\n", "trailing content");
    std::string short_values = good;
    short_values.replace(short_values.find("1.5 "), 4, "");
    expect_format_error(short_values, "value count");
    std::string garbage = good;
    garbage.replace(garbage.find("1.5"), 3, "abc");
    expect_format_error(garbage, "non-numeric");
    EXPECT_THROW(load_checkpoint(tmp / "missing.ckpt"), IoError);
    EXPECT_THROW(restore_gnn(ck), ModelKindError);
}

TEST(Report, SchemaMismatchIsFormatError) {
    TempDir tmp;
    spit(tmp / "r.json", R"({"format": "something-else", "format_version": 1})");
    EXPECT_THROW(read_report(tmp / "r.json"), FormatError);
    spit(tmp / "r.json", "{ not json");
    EXPECT_THROW(read_report(tmp / "r.json"), FormatError);
    EXPECT_THROW(read_report(tmp / "none.json"), IoError);
}

TEST(Commands, TrainIsDeterministicAndEvaluateReproducesMetrics) {
    TempDir tmp;
    const ExperimentConfig a = synthetic_config(ModelKind::gat_resnet, tmp / "a");
    const RunManifest first = cmd_train(a);
    const std::string report_text = slurp(first.report), ckpt_text = slurp(first.checkpoint);
    const RunManifest ra = cmd_train(a);
    EXPECT_EQ(slurp(ra.report), report_text);
    EXPECT_EQ(slurp(ra.checkpoint), ckpt_text);

    const ordered_json report = read_json(ra.report);
    EXPECT_EQ(report["format"], "gatres-report");
    EXPECT_EQ(report["model"], "gat_resnet");
    EXPECT_TRUE(report.contains("training"));
    const ordered_json manifest = read_json(ra.manifest);
    EXPECT_EQ(manifest["config"]["output"]["dir"], (tmp / "a").string());
    EXPECT_EQ(manifest["artifacts"]["checkpoint"], ra.checkpoint.string());

    const MetricsReport ev = cmd_evaluate(ra.checkpoint, "test", tmp / "eval.json");
    EXPECT_EQ(metrics_json(ev.metrics), report["metrics"]["test"]);
    EXPECT_EQ(read_report(tmp / "eval.json").metrics.mcc, ev.metrics.mcc);
    const MetricsReport tr = cmd_evaluate(ra.checkpoint, "train", tmp / "eval_train.json");
    EXPECT_EQ(metrics_json(tr.metrics), report["metrics"]["train"]);
    EXPECT_THROW(cmd_evaluate(ra.checkpoint, "holdout", tmp / "x.json"), ConfigError);
}

TEST(Commands, ForestFitsTrainingDataAtLeastAsWellAsTest) {
    TempDir tmp;
    ExperimentConfig cfg = synthetic_config(ModelKind::random_forest, tmp.path());
    cfg.data.synthetic.separation = 1.0;
    cfg.forest.n_estimators = 10;
    const RunManifest r = cmd_train(cfg);
    const ordered_json j = read_json(r.report);
    EXPECT_GE(j["metrics"]["train"]["micro_f1"].get<double>(), j["metrics"]["test"]["micro_f1"].get<double>());
    EXPECT_FALSE(j.contains("training"));
}

TEST(Commands, CompareSortsByMccAndWritesFourDecimals) {
    TempDir tmp;
    std::vector<fs::path> reports;
    for (ModelKind kind : {ModelKind::logreg, ModelKind::gcn}) {
        ExperimentConfig cfg = synthetic_config(kind, tmp / model_kind_name(kind));
        cfg.data.synthetic.separation = 0.8;
        cfg.model.heads = 0;
        reports.push_back(cmd_train(cfg).report);
    }
    const Comparison c = cmd_compare(reports, tmp.path());
    ASSERT_EQ(c.rows.size(), 2u);
    EXPECT_GE(c.rows[0].metrics.mcc, c.rows[1].metrics.mcc);
    const std::string mcc = slurp(tmp / "mcc.csv");
    EXPECT_EQ(mcc.substr(0, 10), "model,mcc\n");
    EXPECT_NE(mcc.find(report_label(c.rows[0]) + "," + fixed4(c.rows[0].metrics.mcc) + "\n"), std::string::npos);
    EXPECT_EQ(count_lines(tmp / "radar.csv"), 3u);
    EXPECT_EQ(slurp(tmp / "compare.txt"), c.table);
    EXPECT_EQ(fixed4(0.123456), "0.1235");
    EXPECT_EQ(fixed4(-1.0), "-1.0000");
    EXPECT_THROW(cmd_compare({}, {}), ConfigError);
}

TEST(Commands, EmbedWritesOneRowPerNodeDeterministically) {
    TempDir tmp;
    const RunManifest r = cmd_train(synthetic_config(ModelKind::gat_resnet, tmp.path()));
    cmd_embed(r.checkpoint, tmp / "e1.csv");
    cmd_embed(r.checkpoint, tmp / "e2.csv");
    EXPECT_EQ(count_lines(tmp / "e1.csv"), 100u + 1u);
    EXPECT_EQ(slurp(tmp / "e1.csv"), slurp(tmp / "e2.csv"));
    EXPECT_EQ(read_json(r.manifest)["artifacts"]["embeddings"], (tmp / "e2.csv").string());

    // embeddings feed an AF+NE run
    ExperimentConfig ne = synthetic_config(ModelKind::logreg, tmp / "ne");
    ne.data.feature_set = FeatureSet::all_embed;
    ne.data.embeddings = (tmp / "e1.csv").string();
    const PreparedData d = prepare_data(ne.data);
    EXPECT_EQ(d.x.cols(), 166u + 16u);
    EXPECT_NO_THROW(cmd_train(ne));

    const RunManifest lr = cmd_train(synthetic_config(ModelKind::logreg, tmp / "lr"));
    EXPECT_THROW(cmd_embed(lr.checkpoint, tmp / "e3.csv"), ModelKindError);
}

TEST(Commands, ValidateFingerprintsTinyFixture) {
    const ValidationResult r = cmd_validate(DatasetPaths::in_directory(fixture_dir()));
    EXPECT_EQ(r.fingerprint.nodes, 3u);
    EXPECT_EQ(r.fingerprint.edges, 2u);
    EXPECT_EQ(r.fingerprint.illicit, 1u);
    EXPECT_EQ(r.fingerprint.licit, 1u);
    EXPECT_EQ(r.fingerprint.unknown, 1u);
    EXPECT_FALSE(r.warnings.empty());
    EXPECT_THROW(cmd_validate(DatasetPaths::in_directory("/nonexistent")), IoError);
}

TEST(Commands, ExitCodesFollowErrorCategories) {
    EXPECT_EQ(exit_code(ErrorCategory::config), 2);
    EXPECT_EQ(exit_code(ErrorCategory::data), 3);
    EXPECT_EQ(exit_code(ErrorCategory::compute), 4);
    EXPECT_EQ(exit_code(ErrorCategory::io), 5);
}

#ifdef GATRES_CLI_PATH
namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + GATRES_CLI_PATH + "\" --quiet " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Cli, ExitCodes) {
    TempDir tmp;
    EXPECT_EQ(run_cli("validate --data-dir " + fixture_dir().string()), 0);
    EXPECT_EQ(run_cli("--help"), 0);
    EXPECT_EQ(run_cli(""), 1);
    EXPECT_EQ(run_cli("frobnicate"), 1);
    EXPECT_EQ(run_cli("train --epochs notanumber"), 1);

    spit(tmp / "bad.ini", "[model]\nkind = svm\n");
    EXPECT_EQ(run_cli("--config " + (tmp / "bad.ini").string() + " train"), 2);
    EXPECT_EQ(run_cli("train"), 2);
    EXPECT_EQ(run_cli("--config " + (tmp / "absent.ini").string() + " train"), 5);
    EXPECT_EQ(run_cli("validate --data-dir " + (tmp / "empty").string()), 5);

    fs::create_directories(tmp / "broken");
    for (const char* f : {"elliptic_txs_features.csv", "elliptic_txs_classes.csv", "elliptic_txs_edgelist.csv"})
        fs::copy_file(fixture_dir() / f, tmp / "broken" / f);
    const std::string features = slurp(tmp / "broken/elliptic_txs_features.csv");
    spit(tmp / "broken/elliptic_txs_features.csv", features.substr(0, features.size() - 40));
    EXPECT_EQ(run_cli("validate --data-dir " + (tmp / "broken").string()), 3);

    spit(tmp / "run.ini", "[data]\nsource = synthetic\n[model]\nkind = logreg\n[train]\nepochs = 20\n");
    const std::string out = (tmp / "run").string();
    EXPECT_EQ(run_cli("--config " + (tmp / "run.ini").string() + " --out-dir " + out + " train"), 0);
    EXPECT_TRUE(fs::exists(tmp / "run/report.json"));
    EXPECT_EQ(run_cli("evaluate " + out + "/model.ckpt --split all"), 0);
    EXPECT_TRUE(fs::exists(tmp / "run/eval_all.json"));
    EXPECT_EQ(run_cli("compare " + out + "/report.json " + out + "/eval_all.json"), 0);
    EXPECT_EQ(run_cli("embed " + out + "/model.ckpt"), 2);
    EXPECT_EQ(run_cli("compare " + out + "/model.ckpt"), 3);
}
#endif

TEST(Config, ShippedConfigsParseAndValidate) {
    std::size_t seen = 0;
    for (const auto& entry : fs::directory_iterator(GATRES_CONFIG_DIR)) {
        if (entry.path().extension() != ".ini") continue;
        ++seen;
        EXPECT_NO_THROW(load_config(entry.path()).validate()) << entry.path();
    }
    EXPECT_GE(seen, 6u);
}
