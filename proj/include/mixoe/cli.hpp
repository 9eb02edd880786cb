#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixoe/errors.hpp"
#include "mixoe/experiment.hpp"
#include "mixoe/viz.hpp"

namespace mixoe {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

// CLI-level defaults when --objective switches the kind away from what the
// config file declares.
inline ObjectiveConfig default_objective(ObjectiveKind kind) {
    ObjectiveConfig c;
    c.kind = kind;
    switch (kind) {
        case ObjectiveKind::standard: c.beta = 0.0; break;
        case ObjectiveKind::oe: c.beta = 1.0; break;
        case ObjectiveKind::oe_hard_mining: c.beta = 1.0; break;
        case ObjectiveKind::energy_oe: c.beta = 0.1; break;
        case ObjectiveKind::mix: c.beta = 1.0; break;
        case ObjectiveKind::mixoe: c.beta = 5.0; break;
        case ObjectiveKind::mix_plus_oe:
            c.beta = 1.0;
            c.beta_oe = 1.0;
            break;
    }
    return c;
}

namespace cli {

// Flag overrides applied on top of the config file; the resolved values are
// what run manifests record.
struct Overrides {
    bool has_seed = false;
    std::uint64_t seed = 0;
    bool has_objective = false;
    std::string objective;
    bool has_beta = false;
    double beta = 0.0;
    bool has_beta_oe = false;
    double beta_oe = 0.0;
    bool has_alpha = false;
    double alpha = 0.0;
    bool has_mode = false;
    std::string mode;
    bool has_out = false;
    std::string out;
};

inline void apply_overrides(ExperimentConfig& cfg, const Overrides& o) {
    if (o.has_seed) cfg.seed = o.seed;
    if (o.has_out) cfg.output_dir = o.out;
    if (o.has_objective) {
        const ObjectiveKind kind = objective_kind_from_string(o.objective);
        if (kind != cfg.objective.kind) cfg.objective = default_objective(kind);
    }
    const ObjectiveKind kind = cfg.objective.kind;
    if (o.has_beta) {
        if (kind == ObjectiveKind::standard)
            throw std::invalid_argument("--beta is not valid for the standard objective");
        if (o.beta < 0.0) throw std::invalid_argument("--beta must be >= 0");
        cfg.objective.beta = o.beta;
    }
    if (o.has_beta_oe) {
        if (kind != ObjectiveKind::mix_plus_oe)
            throw std::invalid_argument("--beta-oe is only valid for mix_plus_oe");
        if (o.beta_oe < 0.0) throw std::invalid_argument("--beta-oe must be >= 0");
        cfg.objective.beta_oe = o.beta_oe;
    }
    if (o.has_alpha) {
        if (!uses_mixing(kind))
            throw std::invalid_argument("--alpha is only valid for mixing objectives");
        if (o.alpha <= 0.0) throw std::invalid_argument("--alpha must be > 0");
        cfg.objective.alpha = o.alpha;
    }
    if (o.has_mode) {
        if (!uses_mixing(kind))
            throw std::invalid_argument("--mode is only valid for mixing objectives");
        cfg.objective.mode = mix_mode_from_string(o.mode);
    }
}

inline ExperimentConfig resolved_config(const std::string& config_path, const Overrides& o) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    apply_overrides(cfg, o);
    return cfg;
}

// --- make-splits -------------------------------------------------------------------

struct MakeSplitsArgs {
    std::string dataset = "gratings";
    std::size_t n_ood = 0;
    std::size_t n_splits = 3;
    std::uint64_t seed = 0;
    std::string out = "splits";
    bool force = false;
};

inline int cmd_make_splits(const MakeSplitsArgs& args) {
    const std::vector<std::string> classes = toy_class_names(args.dataset);
    const std::vector<std::string> coarse = default_coarse_sources(args.dataset);
    const std::vector<EnvironmentSpec> specs = make_holdout_splits(
        classes, args.n_ood, args.n_splits, args.seed, args.dataset, coarse);

    const fs::path dir = resolve_output_dir(args.out);
    std::vector<fs::path> targets;
    for (const EnvironmentSpec& spec : specs)
        targets.push_back(dir / (args.dataset + "_split" +
                                 std::to_string(spec.split_index) + ".json"));
    if (!args.force) {
        for (const fs::path& p : targets)
            if (fs::exists(p)) {
                std::cerr << "refusing to overwrite " << p.string()
                          << " (use --force)\n";
                return kExitUsage;
            }
    }

    fs::create_directories(dir);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        save_environment_spec(specs[i], targets[i].string());
        std::cout << targets[i].string() << "\n";
    }
    return kExitOk;
}

// --- train / finetune --------------------------------------------------------------

inline int cmd_train(const std::string& config_path, const Overrides& o) {
    const ExperimentConfig cfg = resolved_config(config_path, o);
    const RunPaths paths = make_run_paths(cfg);
    const EnvironmentSpec spec = load_environment_spec(cfg.split_manifest);
    const EnvironmentData env = build_environment_data(cfg, spec);
    fs::create_directories(paths.dir);
    const TrainResult result = phase_train(cfg, env, paths);
    std::cout << "standard checkpoint: " << paths.ckpt_standard.string() << "\n";
    std::cout << "final validation accuracy: " << result.epochs.back().val_accuracy << "\n";
    return kExitOk;
}

inline int cmd_finetune(const std::string& config_path, const Overrides& o) {
    const ExperimentConfig cfg = resolved_config(config_path, o);
    const RunPaths paths = make_run_paths(cfg);
    const EnvironmentSpec spec = load_environment_spec(cfg.split_manifest);
    const EnvironmentData env = build_environment_data(cfg, spec);
    fs::create_directories(paths.dir);
    const TrainResult result = phase_finetune(cfg, env, paths);
    std::cout << "finetuned checkpoint: " << paths.ckpt_finetuned.string() << "\n";
    std::cout << "final validation accuracy: " << result.epochs.back().val_accuracy << "\n";
    return kExitOk;
}

// --- tune --------------------------------------------------------------------------

inline std::vector<ObjectiveConfig> load_objective_grid(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read grid: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("grid parse error: ") + e.what());
    }
    if (!j.is_array() || j.empty())
        throw std::invalid_argument("grid must be a non-empty JSON array");
    std::vector<ObjectiveConfig> grid;
    for (const auto& entry : j) grid.push_back(objective_config_from_json(entry));
    return grid;
}

inline int cmd_tune(const std::string& config_path, const std::string& grid_path,
                    int epochs, const Overrides& o) {
    const ExperimentConfig cfg = resolved_config(config_path, o);
    const std::vector<ObjectiveConfig> grid = load_objective_grid(grid_path);
    if (epochs < 1) throw std::invalid_argument("--epochs must be >= 1");

    const RunPaths paths = make_run_paths(cfg);
    const EnvironmentSpec spec = load_environment_spec(cfg.split_manifest);
    const EnvironmentData env = build_environment_data(cfg, spec);
    fs::create_directories(paths.dir);
    if (!fs::exists(paths.ckpt_standard)) phase_train(cfg, env, paths);
    const Checkpoint base =
        load_checkpoint(paths.ckpt_standard.string(), standard_config_hash(cfg));

    const LabelMap labels = make_label_map(spec.id_classes);
    const ModelFactory factory = [&base]() -> std::unique_ptr<Model> {
        return std::make_unique<MlpModel>(base.spec, 0);
    };
    const TuneResult result =
        tune_hyperparams(grid, factory, base.params, env.id, labels, env.outlier_train,
                         env.outlier_validation, cfg.seed, epochs, cfg.id_batch_size);

    nlohmann::ordered_json out;
    out["baseline_accuracy"] = result.baseline_accuracy;
    out["flagged"] = result.flagged;
    out["chosen"] = objective_config_to_json(result.chosen);
    nlohmann::ordered_json trials = nlohmann::ordered_json::array();
    for (const TuneTrial& t : result.trials) {
        nlohmann::ordered_json tj;
        tj["config"] = objective_config_to_json(t.config);
        tj["validation_auroc"] = t.validation_auroc;
        tj["validation_accuracy"] = t.validation_accuracy;
        tj["qualified"] = t.qualified;
        trials.push_back(std::move(tj));
    }
    out["trials"] = std::move(trials);
    const fs::path result_path = paths.dir / "tuning_result.json";
    detail::write_json(out, result_path);

    std::cout << "tuning result: " << result_path.string() << "\n";
    std::cout << "chosen: " << objective_config_to_json(result.chosen).dump() << "\n";
    if (result.flagged)
        std::cout << "flagged: no grid point kept the ID accuracy drop within 1 point\n";
    return kExitOk;
}

// --- evaluate ----------------------------------------------------------------------

inline int cmd_evaluate(const std::string& config_path, const Overrides& o,
                        const std::vector<std::string>& scorer_filter) {
    ExperimentConfig cfg = resolved_config(config_path, o);
    if (!scorer_filter.empty()) {
        std::set<ScorerKind> wanted;
        for (const std::string& s : scorer_filter) wanted.insert(scorer_from_string(s));
        std::vector<std::pair<ScorerKind, double>> kept;
        for (const auto& sc : cfg.scorers)
            if (wanted.count(sc.first)) kept.push_back(sc);
        if (kept.empty())
            throw std::invalid_argument("--scorer filter removed every configured scorer");
        cfg.scorers = std::move(kept);
    }
    const RunPaths paths = make_run_paths(cfg);
    const EnvironmentSpec spec = load_environment_spec(cfg.split_manifest);
    const EnvironmentData env = build_environment_data(cfg, spec);
    fs::create_directories(paths.dir);
    const EvaluatePhaseResult result = phase_evaluate(cfg, env, paths);
    std::cout << "reports: " << paths.reports_csv.string() << "\n";
    for (const DetectionReport& r : result.reports) {
        std::cout << r.scorer;
        if (r.auroc_coarse) std::cout << "  auroc_coarse=" << *r.auroc_coarse;
        if (r.auroc_fine) std::cout << "  auroc_fine=" << *r.auroc_fine;
        if (r.id_accuracy) std::cout << "  id_accuracy=" << *r.id_accuracy;
        std::cout << "\n";
    }
    return kExitOk;
}

// --- run ---------------------------------------------------------------------------

inline int cmd_run(const std::string& config_path, const Overrides& o, bool no_figures) {
    ExperimentConfig cfg = resolved_config(config_path, o);
    if (no_figures) cfg.figures = false;
    const RunOutcome outcome = run_experiment(cfg, config_path);
    std::cout << "manifest: " << outcome.paths.manifest.string() << "\n";
    for (const DetectionReport& r : outcome.reports) {
        std::cout << r.objective << "/" << r.scorer;
        if (r.auroc_coarse) std::cout << "  auroc_coarse=" << *r.auroc_coarse;
        if (r.auroc_fine) std::cout << "  auroc_fine=" << *r.auroc_fine;
        if (r.tnr95_coarse) std::cout << "  tnr95_coarse=" << *r.tnr95_coarse;
        if (r.tnr95_fine) std::cout << "  tnr95_fine=" << *r.tnr95_fine;
        if (r.id_accuracy) std::cout << "  id_accuracy=" << *r.id_accuracy;
        std::cout << "\n";
    }
    return kExitOk;
}

// --- report ------------------------------------------------------------------------

struct FoundReport {
    fs::path path;
    DetectionReport report;
};

inline std::vector<FoundReport> scan_reports(const fs::path& dir) {
    if (!fs::exists(dir)) throw DataError("report directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("report_", 0) == 0 && name.size() > 5 &&
            name.substr(name.size() - 5) == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<FoundReport> out;
    for (const fs::path& p : files) {
        std::ifstream in(p);
        if (!in) throw IoError("cannot read report: " + p.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("report parse error in " + p.string() + ": " + e.what());
        }
        out.push_back({p, report_from_json(j)});
    }
    if (out.empty()) throw DataError("no report_*.json files under " + dir.string());
    return out;
}

inline int cmd_report(const std::string& dir_arg, const std::string& out_arg) {
    const fs::path dir = resolve_output_dir(dir_arg);
    const fs::path out_dir = out_arg.empty() ? dir : resolve_output_dir(out_arg);
    const std::vector<FoundReport> found = scan_reports(dir);

    std::vector<DetectionReport> reports;
    for (const FoundReport& f : found) reports.push_back(f.report);
    const AggregateTable table = aggregate_reports(reports);
    const std::string rendered = render_aggregate_table(table);

    fs::create_directories(out_dir / "figures");
    {
        std::ofstream txt(out_dir / "summary_table.txt");
        if (!txt) throw IoError("cannot write summary table");
        txt << rendered;
    }
    std::cout << rendered;

    nlohmann::ordered_json figure_entries = nlohmann::ordered_json::array();
    for (int split : table.split_indices) {
        // bar chart per split, methods in table order
        std::vector<DetectionReport> split_reports;
        for (const MethodRow& row : table.rows) {
            const auto it = row.by_split.find(split);
            if (it != row.by_split.end()) split_reports.push_back(it->second);
        }
        const fs::path bars =
            out_dir / "figures" / ("tnr_bars_split" + std::to_string(split) + ".svg");
        figure_entries.push_back(emit_tnr_bars(split_reports, bars.string()));

        // confidence densities from each run's saved MSP score table, one
        // curve per objective (first run found per objective wins)
        std::vector<std::pair<std::string, ScoreTable>> tables;
        std::set<std::string> seen;
        for (const FoundReport& f : found) {
            if (f.report.split_index != split || f.report.scorer != "msp") continue;
            if (!seen.insert(f.report.objective).second) continue;
            const fs::path scores = f.path.parent_path() / "scores_msp.csv";
            if (!fs::exists(scores)) continue;
            tables.emplace_back(f.report.objective, load_score_table(scores.string()));
        }
        if (!tables.empty()) {
            const fs::path density =
                out_dir / "figures" /
                ("confidence_density_split" + std::to_string(split) + ".svg");
            figure_entries.push_back(emit_confidence_density(tables, density.string()));
        }
    }

    nlohmann::ordered_json summary;
    summary["tool"] = kToolName;
    summary["version"] = kToolVersion;
    summary["dataset"] = table.dataset;
    summary["split_indices"] = table.split_indices;
    summary["n_reports"] = reports.size();
    summary["table"] = (out_dir / "summary_table.txt").string();
    summary["figures"] = figure_entries;
    detail::write_json(summary, out_dir / "report_summary.json");
    return kExitOk;
}

} // namespace cli

// Subcommand dispatch; returns a process exit code.
inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"fine-grained OOD detection experiments on toy image families"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);

    cli::MakeSplitsArgs splits_args;
    CLI::App* make_splits = app.add_subcommand(
        "make-splits", "Generate holdout-class environment manifests");
    make_splits->add_option("--dataset", splits_args.dataset, "Toy dataset family")
        ->capture_default_str();
    make_splits->add_option("--n-ood", splits_args.n_ood, "Holdout classes per split")
        ->required();
    make_splits->add_option("--n-splits", splits_args.n_splits, "Number of splits")
        ->capture_default_str();
    make_splits->add_option("--seed", splits_args.seed, "Split-sampling seed")
        ->capture_default_str();
    make_splits->add_option("--out", splits_args.out, "Output directory")
        ->capture_default_str();
    make_splits->add_flag("--force", splits_args.force, "Overwrite existing manifests");

    // options shared by the config-driven commands
    std::string config_path;
    std::string grid_path;
    int tune_epochs = 10;
    std::vector<std::string> scorer_filter;
    bool no_figures = false;
    std::string report_dir;
    std::string report_out;
    cli::Overrides ov;

    const auto add_common = [&](CLI::App* cmd, bool with_objective) {
        cmd->add_option("--config", config_path, "Experiment config JSON")->required();
        cmd->add_option("--seed", ov.seed, "Override the experiment seed")
            ->each([&ov](const std::string&) { ov.has_seed = true; });
        cmd->add_option("--out", ov.out, "Override the output directory")
            ->each([&ov](const std::string&) { ov.has_out = true; });
        if (!with_objective) return;
        cmd->add_option("--objective", ov.objective, "Override the training objective")
            ->each([&ov](const std::string&) { ov.has_objective = true; });
        cmd->add_option("--beta", ov.beta, "Override the regularizer weight")
            ->each([&ov](const std::string&) { ov.has_beta = true; });
        cmd->add_option("--beta-oe", ov.beta_oe, "Override the mix_plus_oe OE weight")
            ->each([&ov](const std::string&) { ov.has_beta_oe = true; });
        cmd->add_option("--alpha", ov.alpha, "Override the Beta shape")
            ->each([&ov](const std::string&) { ov.has_alpha = true; });
        cmd->add_option("--mode", ov.mode, "Override the mixing mode (linear|cut)")
            ->each([&ov](const std::string&) { ov.has_mode = true; });
    };

    CLI::App* train = app.add_subcommand("train", "Train the standard model");
    add_common(train, false);

    CLI::App* finetune =
        app.add_subcommand("finetune", "Fine-tune from the standard checkpoint");
    add_common(finetune, true);

    CLI::App* tune = app.add_subcommand("tune", "Grid-search objective hyperparameters");
    add_common(tune, false);
    tune->add_option("--grid", grid_path, "JSON array of objective configs")->required();
    tune->add_option("--epochs", tune_epochs, "Fine-tune epochs per grid point")
        ->capture_default_str();

    CLI::App* evaluate = app.add_subcommand("evaluate", "Score and report a trained model");
    add_common(evaluate, false);
    evaluate->add_option("--scorer", scorer_filter,
                         "Only evaluate these scorers (msp|odin|energy)");

    CLI::App* run =
        app.add_subcommand("run", "Full pipeline: train, finetune, evaluate, figures");
    add_common(run, true);
    run->add_flag("--no-figures", no_figures, "Skip figure emission");

    CLI::App* report = app.add_subcommand("report", "Aggregate run reports into a table");
    report->add_option("--dir", report_dir, "Directory scanned for report_*.json")
        ->required();
    report->add_option("--out", report_out, "Output directory (default: --dir)");

    try {
        app.parse(argc, argv);
        if (make_splits->parsed()) return cli::cmd_make_splits(splits_args);
        if (train->parsed()) return cli::cmd_train(config_path, ov);
        if (finetune->parsed()) return cli::cmd_finetune(config_path, ov);
        if (tune->parsed()) return cli::cmd_tune(config_path, grid_path, tune_epochs, ov);
        if (evaluate->parsed()) return cli::cmd_evaluate(config_path, ov, scorer_filter);
        if (run->parsed()) return cli::cmd_run(config_path, ov, no_figures);
        if (report->parsed()) return cli::cmd_report(report_dir, report_out);
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitData;
    } catch (const UnsupportedOperation& e) {
        std::cerr << "unsupported: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}

} // namespace mixoe
