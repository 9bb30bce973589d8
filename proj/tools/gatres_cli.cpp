#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gatres/experiment.hpp"

namespace fs = std::filesystem;
using namespace gatres;

namespace {

constexpr int kUsageExit = 1;

const char* category_label(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::config: return "config_error";
    case ErrorCategory::data: return "data_error";
    case ErrorCategory::compute: return "compute_error";
    case ErrorCategory::io: return "io_error";
    }
    return "error";
}

int fail(ErrorCategory c, const std::string& detail) {
    std::cerr << "error: " << category_label(c) << ": " << detail << '\n';
    return exit_code(c);
}

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> max_nodes;
    bool quiet = false;
};

ExperimentConfig config_or_default(const Globals& g) {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
    apply_overrides(cfg, {g.seed, g.out_dir, g.epochs, g.max_nodes});
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GAT-ResNet illicit-transaction classification experiments"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Experiment config (INI)");
    app.add_option("--seed", g.seed, "Override train.seed");
    app.add_option("--out-dir", g.out_dir, "Override output.dir");
    app.add_option("--epochs", g.epochs, "Override train.epochs");
    app.add_option("--max-nodes", g.max_nodes, "Keep only the earliest N nodes");
    app.add_flag("--quiet", g.quiet, "Suppress progress output");
    app.footer(std::string("Dataset directory default: $") + kDataDirEnv + ", else ./data");

    std::string data_dir;
    auto* validate = app.add_subcommand("validate", "Load a dataset and print its fingerprint");
    validate->add_option("--data-dir", data_dir, "Directory holding the elliptic_txs_*.csv files");
    validate->fallthrough();

    auto* train = app.add_subcommand("train", "Train the configured model and write checkpoint, report, manifest");
    train->fallthrough();

    std::string checkpoint, split = "test", report;
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
    evaluate->add_option("checkpoint", checkpoint, "Checkpoint file")->required();
    evaluate->add_option("--split", split, "train, test or all")->check(CLI::IsMember({"train", "test", "all"}));
    evaluate->add_option("--report", report, "Report path (default: <out-dir>/eval_<split>.json)");
    evaluate->add_option("--data-dir", data_dir, "Override the recorded dataset directory");
    evaluate->fallthrough();

    std::vector<std::string> reports;
    auto* compare = app.add_subcommand("compare", "Tabulate reports and write plot data");
    compare->add_option("reports", reports, "Report files")->required();
    compare->fallthrough();

    std::string embed_out;
    auto* embed_cmd = app.add_subcommand("embed", "Export GAT-ResNet node embeddings");
    embed_cmd->add_option("checkpoint", checkpoint, "GAT-ResNet checkpoint")->required();
    embed_cmd->add_option("--output", embed_out, "CSV path (default: embeddings.csv next to the checkpoint)");
    embed_cmd->add_option("--data-dir", data_dir, "Override the recorded dataset directory");
    embed_cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageExit;
    }

    const CommandOptions opt{g.quiet ? nullptr : &std::cerr};
    try {
        if (validate->parsed()) {
            fs::path dir = data_dir;
            if (dir.empty()) dir = config_or_default(g).data.resolved_dir();
            const ValidationResult r = cmd_validate(DatasetPaths::in_directory(dir));
            const auto& f = r.fingerprint;
            std::cout << "nodes " << f.nodes << "\nedges " << f.edges << "\nillicit " << f.illicit << "\nlicit "
                      << f.licit << "\nunknown " << f.unknown << "\ntime_steps " << f.time_steps << '\n';
            for (const auto& w : r.warnings) std::cout << "warning: differs from published statistics: " << w << '\n';
        } else if (train->parsed()) {
            if (g.config.empty()) return fail(ErrorCategory::config, "train needs --config");
            const RunManifest m = cmd_train(config_or_default(g), opt);
            std::cout << m.manifest.string() << '\n';
        } else if (evaluate->parsed()) {
            if (report.empty()) {
                const fs::path base = g.out_dir ? fs::path(*g.out_dir) : fs::path(checkpoint).parent_path();
                report = (base / ("eval_" + split + ".json")).string();
            }
            const MetricsReport r = cmd_evaluate(checkpoint, split, report, data_dir, opt);
            std::cout << report_label(r) << " " << split << ": P " << fixed4(r.metrics.precision) << " R "
                      << fixed4(r.metrics.recall) << " F1 " << fixed4(r.metrics.f1) << " microF1 "
                      << fixed4(r.metrics.micro_f1) << " MCC " << fixed4(r.metrics.mcc) << '\n';
        } else if (compare->parsed()) {
            std::vector<fs::path> paths(reports.begin(), reports.end());
            const Comparison c = cmd_compare(paths, g.out_dir ? fs::path(*g.out_dir) : fs::path());
            std::cout << c.table;
        } else if (embed_cmd->parsed()) {
            if (embed_out.empty()) {
                const fs::path base = g.out_dir ? fs::path(*g.out_dir) : fs::path(checkpoint).parent_path();
                embed_out = (base / "embeddings.csv").string();
            }
            std::cout << cmd_embed(checkpoint, embed_out, data_dir, opt).string() << '\n';
        }
    } catch (const Error& e) {
        return fail(e.category(), e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(ErrorCategory::io, e.what());
    } catch (const std::bad_alloc&) {
        return fail(ErrorCategory::compute, "out of memory");
    } catch (const std::exception& e) {
        return fail(ErrorCategory::compute, e.what());
    }
    return 0;
}
