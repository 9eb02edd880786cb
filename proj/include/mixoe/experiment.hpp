#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mixoe/dataset.hpp"
#include "mixoe/errors.hpp"
#include "mixoe/metrics.hpp"
#include "mixoe/model.hpp"
#include "mixoe/objectives.hpp"
#include "mixoe/rng.hpp"
#include "mixoe/scoring.hpp"
#include "mixoe/splits.hpp"
#include "mixoe/toydata.hpp"
#include "mixoe/trainer.hpp"
#include "mixoe/version.hpp"
#include "mixoe/viz.hpp"

namespace mixoe {

namespace fs = std::filesystem;

// One declarative experiment: environment, backbone, budgets, objective,
// scorers. Loaded from a JSON file; every field has a resolved value so the
// canonical serialization (and thus the config hash) is total.
struct ExperimentConfig {
    std::string dataset;
    std::string split_manifest;
    std::string output_dir;
    std::uint64_t seed = 0;

    std::vector<std::size_t> hidden = {64};

    ToyConfig data;
    std::size_t outliers_per_concept = 250;
    double val_fraction = 0.1;
    double outlier_val_fraction = 0.1;

    int standard_epochs = 90;
    int finetune_epochs = 10;
    OptimizerConfig optimizer;
    std::size_t id_batch_size = 32;

    ObjectiveConfig objective;

    std::vector<std::pair<ScorerKind, double>> scorers = {
        {ScorerKind::msp, 1.0}, {ScorerKind::odin, 1000.0}, {ScorerKind::energy, 1.0}};

    bool figures = true;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::vector<std::string>& allowed,
                                const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

} // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j,
        {"dataset", "split_manifest", "output_dir", "seed", "model", "data", "train",
         "finetune", "objective", "scorers", "figures"},
        "top level");
    ExperimentConfig c;
    try {
        c.dataset = j.at("dataset").get<std::string>();
        c.split_manifest = j.at("split_manifest").get<std::string>();
        c.output_dir = j.at("output_dir").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();

        if (j.contains("model")) {
            detail::reject_unknown_keys(j.at("model"), {"hidden"}, "model");
            if (j.at("model").contains("hidden"))
                c.hidden = j.at("model").at("hidden").get<std::vector<std::size_t>>();
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            detail::reject_unknown_keys(d,
                                        {"image_hw", "train_per_class", "test_per_class",
                                         "noise", "outliers_per_concept", "val_fraction",
                                         "outlier_val_fraction"},
                                        "data");
            if (d.contains("image_hw")) c.data.image_hw = d.at("image_hw").get<std::size_t>();
            if (d.contains("train_per_class"))
                c.data.train_per_class = d.at("train_per_class").get<std::size_t>();
            if (d.contains("test_per_class"))
                c.data.test_per_class = d.at("test_per_class").get<std::size_t>();
            if (d.contains("noise")) c.data.noise = d.at("noise").get<double>();
            if (d.contains("outliers_per_concept"))
                c.outliers_per_concept = d.at("outliers_per_concept").get<std::size_t>();
            if (d.contains("val_fraction")) c.val_fraction = d.at("val_fraction").get<double>();
            if (d.contains("outlier_val_fraction"))
                c.outlier_val_fraction = d.at("outlier_val_fraction").get<double>();
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            detail::reject_unknown_keys(
                t, {"epochs", "lr", "momentum", "weight_decay", "id_batch_size"}, "train");
            if (t.contains("epochs")) c.standard_epochs = t.at("epochs").get<int>();
            if (t.contains("lr")) c.optimizer.lr = t.at("lr").get<double>();
            if (t.contains("momentum")) c.optimizer.momentum = t.at("momentum").get<double>();
            if (t.contains("weight_decay"))
                c.optimizer.weight_decay = t.at("weight_decay").get<double>();
            if (t.contains("id_batch_size"))
                c.id_batch_size = t.at("id_batch_size").get<std::size_t>();
        }
        if (j.contains("finetune")) {
            detail::reject_unknown_keys(j.at("finetune"), {"epochs"}, "finetune");
            if (j.at("finetune").contains("epochs"))
                c.finetune_epochs = j.at("finetune").at("epochs").get<int>();
        }
        if (j.contains("objective")) c.objective = objective_config_from_json(j.at("objective"));
        if (j.contains("scorers")) {
            c.scorers.clear();
            for (const auto& s : j.at("scorers")) {
                detail::reject_unknown_keys(s, {"name", "temperature"}, "scorers");
                const ScorerKind kind = scorer_from_string(s.at("name").get<std::string>());
                double temp = 1.0;
                if (s.contains("temperature")) temp = s.at("temperature").get<double>();
                c.scorers.emplace_back(kind, temp);
            }
            if (c.scorers.empty()) throw std::invalid_argument("config: empty scorers list");
        }
        if (j.contains("figures")) c.figures = j.at("figures").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    if (c.standard_epochs < 1 || c.finetune_epochs < 1)
        throw std::invalid_argument("config: epochs must be >= 1");
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    return experiment_config_from_json(j);
}

// Canonical resolved form: every field explicit, fixed key order.
inline nlohmann::ordered_json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["dataset"] = c.dataset;
    j["split_manifest"] = c.split_manifest;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["model"]["hidden"] = c.hidden;
    j["data"]["image_hw"] = c.data.image_hw;
    j["data"]["train_per_class"] = c.data.train_per_class;
    j["data"]["test_per_class"] = c.data.test_per_class;
    j["data"]["noise"] = c.data.noise;
    j["data"]["outliers_per_concept"] = c.outliers_per_concept;
    j["data"]["val_fraction"] = c.val_fraction;
    j["data"]["outlier_val_fraction"] = c.outlier_val_fraction;
    j["train"]["epochs"] = c.standard_epochs;
    j["train"]["lr"] = c.optimizer.lr;
    j["train"]["momentum"] = c.optimizer.momentum;
    j["train"]["weight_decay"] = c.optimizer.weight_decay;
    j["train"]["id_batch_size"] = c.id_batch_size;
    j["finetune"]["epochs"] = c.finetune_epochs;
    j["objective"] = objective_config_to_json(c.objective);
    nlohmann::ordered_json scorers = nlohmann::ordered_json::array();
    for (const auto& [kind, temp] : c.scorers) {
        nlohmann::ordered_json s;
        s["name"] = to_string(kind);
        s["temperature"] = temp;
        scorers.push_back(s);
    }
    j["scorers"] = scorers;
    j["figures"] = c.figures;
    return j;
}

inline std::uint64_t config_hash(const ExperimentConfig& c) {
    return fnv1a(experiment_config_to_json(c).dump());
}

// Hash over the fields the standard phase depends on, so a standard
// checkpoint stays valid across objective variants of the same environment.
inline std::uint64_t standard_config_hash(const ExperimentConfig& c) {
    nlohmann::ordered_json j = experiment_config_to_json(c);
    j.erase("objective");
    j.erase("finetune");
    j.erase("scorers");
    j.erase("figures");
    j.erase("output_dir");
    return fnv1a(j.dump());
}

// Same idea for the finetuned checkpoint: scorer choice, figure emission and
// the output location do not affect the trained parameters.
inline std::uint64_t finetune_config_hash(const ExperimentConfig& c) {
    nlohmann::ordered_json j = experiment_config_to_json(c);
    j.erase("scorers");
    j.erase("figures");
    j.erase("output_dir");
    return fnv1a(j.dump());
}

// --- output layout --------------------------------------------------------------

inline constexpr const char* kOutputRootEnvVar = "MIXOE_OUTPUT_ROOT";

inline fs::path resolve_output_dir(const std::string& configured) {
    fs::path p(configured);
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv(kOutputRootEnvVar)) return fs::path(root) / p;
    return p;
}

struct RunPaths {
    fs::path dir;
    fs::path ckpt_standard;
    fs::path ckpt_finetuned;
    fs::path trace_standard;
    fs::path trace_finetune;
    fs::path manifest;
    fs::path reports_csv;
    fs::path figures_dir;

    fs::path report_json(const std::string& scorer) const {
        return dir / ("report_" + scorer + ".json");
    }
    fs::path scores_csv(const std::string& scorer) const {
        return dir / ("scores_" + scorer + ".csv");
    }
};

inline RunPaths make_run_paths(const ExperimentConfig& c) {
    RunPaths p;
    p.dir = resolve_output_dir(c.output_dir);
    p.ckpt_standard = p.dir / "checkpoint_standard.bin";
    p.ckpt_finetuned = p.dir / "checkpoint_finetuned.bin";
    p.trace_standard = p.dir / "trace_standard.json";
    p.trace_finetune = p.dir / "trace_finetune.json";
    p.manifest = p.dir / "experiment_manifest.json";
    p.reports_csv = p.dir / "reports.csv";
    p.figures_dir = p.dir / "figures";
    return p;
}

// --- environment assembly ---------------------------------------------------------

inline EnvironmentData build_environment_data(const ExperimentConfig& cfg,
                                              const EnvironmentSpec& spec) {
    if (spec.dataset_name != cfg.dataset)
        throw DataError("split manifest is for dataset '" + spec.dataset_name +
                        "', config says '" + cfg.dataset + "'");
    EnvironmentData env;
    env.spec = spec;

    const std::uint64_t data_seed = mix_seed(spec.seed, fnv1a("toy-data"));
    const Dataset id_ds = make_toy_dataset(cfg.dataset, data_seed, cfg.data);
    DataPartition part = partition_id_data(id_ds, spec, cfg.val_fraction,
                                           mix_seed(spec.seed, fnv1a("partition")));
    env.id_test = AuditedExamples(std::move(part.test));
    part.test.clear();
    env.id = std::move(part);
    env.fine_ood = AuditedExamples(collect_fine_ood(id_ds, spec));

    std::map<std::string, Dataset> sources;
    for (const auto& name : spec.coarse_ood_sources)
        sources.emplace(name, make_toy_dataset(name, data_seed, cfg.data));
    env.coarse_ood = AuditedExamples(assemble_coarse_ood(spec, sources));

    const OutlierPool raw = make_texture_pool(mix_seed(spec.seed, fnv1a("outliers")),
                                              cfg.outliers_per_concept, cfg.data);
    const OutlierPool filtered = filter_outlier_pool(raw, forbidden_concepts_for(spec));
    auto [train_pool, val_pool] = split_outlier_validation(
        filtered, cfg.outlier_val_fraction, mix_seed(spec.seed, fnv1a("outlier-val")));
    env.outlier_train = std::move(train_pool);
    env.outlier_validation = std::move(val_pool);
    return env;
}

inline std::unique_ptr<MlpModel> make_experiment_model(const ExperimentConfig& cfg,
                                                       std::size_t num_classes) {
    MlpSpec spec;
    spec.input_dim = cfg.data.image_hw * cfg.data.image_hw;
    spec.hidden = cfg.hidden;
    spec.num_classes = num_classes;
    return std::make_unique<MlpModel>(spec, mix_seed(cfg.seed, fnv1a("model-init")));
}

// --- phases ------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json trace_to_json(const TrainResult& r) {
    nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
    for (const EpochTrace& t : r.epochs) {
        nlohmann::ordered_json e;
        e["epoch"] = t.epoch;
        e["lr"] = t.lr;
        e["loss_total"] = t.loss_total;
        e["id_term"] = t.id_term;
        e["reg_term"] = t.reg_term;
        e["val_accuracy"] = t.val_accuracy;
        epochs.push_back(e);
    }
    nlohmann::ordered_json j;
    j["epochs"] = epochs;
    j["distinct_outliers_consumed"] = r.distinct_outliers_consumed;
    j["outlier_reads"] = r.outlier_reads;
    return j;
}

inline void write_json(const nlohmann::ordered_json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace detail

inline TrainResult phase_train(const ExperimentConfig& cfg, const EnvironmentData& env,
                               const RunPaths& paths) {
    auto model = make_experiment_model(cfg, env.spec.id_classes.size());
    TrainConfig tc = make_standard_config(cfg.seed, cfg.standard_epochs);
    tc.optimizer = cfg.optimizer;
    tc.id_batch_size = cfg.id_batch_size;
    const LabelMap labels = make_label_map(env.spec.id_classes);
    TrainResult result = train_standard(*model, env.id, labels, tc);

    Checkpoint ckpt;
    ckpt.config_hash = standard_config_hash(cfg);
    ckpt.spec = model->spec();
    ckpt.params = model->parameters();
    save_checkpoint(ckpt, paths.ckpt_standard.string());
    detail::write_json(detail::trace_to_json(result), paths.trace_standard);
    return result;
}

// Continues from the standard checkpoint under the configured objective (the
// standard objective continues plain training, so every run has the same
// total budget).
inline TrainResult phase_finetune(const ExperimentConfig& cfg, const EnvironmentData& env,
                                  const RunPaths& paths) {
    if (!fs::exists(paths.ckpt_standard))
        throw DataError("finetune requires the standard checkpoint (run train first): " +
                        paths.ckpt_standard.string());
    const Checkpoint base =
        load_checkpoint(paths.ckpt_standard.string(), standard_config_hash(cfg));
    MlpModel model(base.spec, 0);
    model.set_parameters(base.params);

    TrainConfig tc = make_finetune_config(cfg.objective, cfg.seed, cfg.finetune_epochs,
                                          cfg.id_batch_size);
    tc.optimizer = cfg.optimizer;
    const LabelMap labels = make_label_map(env.spec.id_classes);
    TrainResult result = finetune(model, env.id, labels, env.outlier_train, tc);

    Checkpoint ckpt;
    ckpt.config_hash = finetune_config_hash(cfg);
    ckpt.spec = model.spec();
    ckpt.params = model.parameters();
    save_checkpoint(ckpt, paths.ckpt_finetuned.string());
    detail::write_json(detail::trace_to_json(result), paths.trace_finetune);
    return result;
}

// The model evaluation and figures run on: the finetuned checkpoint when
// present, otherwise the standard one.
inline std::unique_ptr<MlpModel> load_final_model(const ExperimentConfig& cfg,
                                                  const RunPaths& paths) {
    Checkpoint ckpt;
    if (fs::exists(paths.ckpt_finetuned)) {
        ckpt = load_checkpoint(paths.ckpt_finetuned.string(), finetune_config_hash(cfg));
    } else if (fs::exists(paths.ckpt_standard)) {
        ckpt = load_checkpoint(paths.ckpt_standard.string(), standard_config_hash(cfg));
    } else {
        throw DataError("no checkpoint found under " + paths.dir.string());
    }
    auto model = std::make_unique<MlpModel>(ckpt.spec, 0);
    model->set_parameters(ckpt.params);
    return model;
}

struct EvaluatePhaseResult {
    std::vector<DetectionReport> reports;
    std::vector<EvaluationResult> evaluations; // parallel to reports
};

inline EvaluatePhaseResult phase_evaluate(const ExperimentConfig& cfg,
                                          const EnvironmentData& env, const RunPaths& paths) {
    auto model = load_final_model(cfg, paths);
    EvaluatePhaseResult out;
    std::ofstream csv(paths.reports_csv);
    if (!csv) throw IoError("cannot write " + paths.reports_csv.string());
    csv << report_csv_header() << "\n";
    for (const auto& [kind, temp] : cfg.scorers) {
        EvaluationResult ev = evaluate_environment(*model, env, kind, temp);
        ev.report.objective = to_string(cfg.objective.kind);
        save_score_table(ev.table, paths.scores_csv(to_string(kind)).string());
        detail::write_json(report_to_json(ev.report), paths.report_json(to_string(kind)));
        csv << report_csv_row(ev.report) << "\n";
        out.reports.push_back(ev.report);
        out.evaluations.push_back(std::move(ev));
    }
    if (!csv) throw IoError("failed writing " + paths.reports_csv.string());
    return out;
}

// --- figures -----------------------------------------------------------------------

inline nlohmann::ordered_json emit_run_figures(const ExperimentConfig& cfg,
                                               const EnvironmentData& env,
                                               const RunPaths& paths, Model& model,
                                               const VisProjector& projector,
                                               const EvaluatePhaseResult& eval) {
    fs::create_directories(paths.figures_dir);
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();

    const auto take = [](const AuditedExamples& src, std::size_t cap) {
        std::vector<Example> out;
        for (std::size_t i = 0; i < std::min(cap, src.size()); ++i) out.push_back(src.at(i));
        return out;
    };

    std::vector<TaggedPoint> pts;
    const auto add_points = [&](const std::vector<Example>& items, const std::string& tag) {
        if (items.empty()) return;
        Batch b;
        for (const Example& ex : items) b.push(ex, -1);
        const Matrix logits = model.forward(b);
        std::vector<Point2> proj = project_examples(projector, model, items);
        for (std::size_t i = 0; i < items.size(); ++i) {
            std::vector<double> row(logits.row(i), logits.row(i) + logits.cols);
            pts.push_back(TaggedPoint{proj[i], tag, score_msp(row)});
        }
    };

    add_points(take(env.id_test, 400), "id");
    add_points(take(env.coarse_ood, 300), "coarse_ood");
    add_points(take(env.fine_ood, 300), "fine_ood");
    {
        std::vector<Example> outliers;
        for (std::size_t i = 0; i < std::min<std::size_t>(300, env.outlier_train.examples.size());
             ++i)
            outliers.push_back(env.outlier_train.examples[i]);
        add_points(outliers, "outlier");

        // virtual outliers for the mixed panel, drawn from the first ID/outlier pairs
        std::vector<Example> mixed;
        Rng rng(mix_seed(env.spec.seed, fnv1a("fig-mixed")));
        const std::size_t n_pairs =
            std::min<std::size_t>({100, env.id.train.size(), outliers.size()});
        const double lambdas[3] = {0.25, 0.5, 0.75};
        for (std::size_t i = 0; i < n_pairs; ++i)
            for (double lam : lambdas) {
                Example ex;
                ex.id = "mixed/" + std::to_string(i) + "/" + std::to_string(lam);
                ex.source = "mixed";
                ex.input = mix_linear(env.id.train[i].input, outliers[i].input, lam);
                mixed.push_back(std::move(ex));
            }
        add_points(mixed, "mixed");
    }
    entries.push_back(emit_scatter(pts, (paths.figures_dir / "scatter.svg").string()));

    for (const auto& ev : eval.evaluations)
        if (ev.table.scorer == ScorerKind::msp) {
            entries.push_back(emit_confidence_density(
                {{to_string(cfg.objective.kind), ev.table}},
                (paths.figures_dir / "confidence_density.svg").string()));
            break;
        }
    entries.push_back(
        emit_tnr_bars(eval.reports, (paths.figures_dir / "tnr_bars.svg").string()));
    return entries;
}

// --- full pipeline -------------------------------------------------------------------

struct RunOutcome {
    RunPaths paths;
    std::vector<DetectionReport> reports;
    nlohmann::ordered_json manifest;
};

inline RunOutcome run_experiment(const ExperimentConfig& cfg, const std::string& config_path) {
    const RunPaths paths = make_run_paths(cfg);
    fs::create_directories(paths.dir);

    const EnvironmentSpec spec = load_environment_spec(cfg.split_manifest);
    EnvironmentData env = build_environment_data(cfg, spec);

    phase_train(cfg, env, paths);
    phase_finetune(cfg, env, paths);

    auto model = load_final_model(cfg, paths);
    const LabelMap labels = make_label_map(spec.id_classes);
    std::optional<VisProjector> projector;
    if (cfg.figures)
        projector = fit_vis_layer(*model, env.id.train, labels, 10, 0.001,
                                  mix_seed(cfg.seed, fnv1a("vis")));

    // training and projector fitting are complete; evaluation data must still
    // be untouched
    nlohmann::ordered_json audit;
    audit["id_test_reads_before_eval"] = env.id_test.reads();
    audit["fine_ood_reads_before_eval"] = env.fine_ood.reads();
    audit["coarse_ood_reads_before_eval"] = env.coarse_ood.reads();

    EvaluatePhaseResult eval = phase_evaluate(cfg, env, paths);

    nlohmann::ordered_json figure_entries = nlohmann::ordered_json::array();
    if (cfg.figures)
        figure_entries = emit_run_figures(cfg, env, paths, *model, *projector, eval);

    nlohmann::ordered_json manifest;
    manifest["tool"] = kToolName;
    manifest["version"] = kToolVersion;
    manifest["config_path"] = config_path;
    manifest["config"] = experiment_config_to_json(cfg);
    manifest["config_hash"] = config_hash(cfg);
    manifest["environment"] = environment_spec_to_json(spec);
    manifest["objective"] = to_string(cfg.objective.kind);
    manifest["seed"] = cfg.seed;
    manifest["checkpoints"] = {{"standard", paths.ckpt_standard.string()},
                               {"finetuned", paths.ckpt_finetuned.string()}};
    nlohmann::ordered_json report_paths = nlohmann::ordered_json::array();
    for (const auto& [kind, temp] : cfg.scorers)
        report_paths.push_back(paths.report_json(to_string(kind)).string());
    manifest["reports"] = report_paths;
    manifest["reports_csv"] = paths.reports_csv.string();
    manifest["audit"] = audit;
    if (projector) {
        manifest["vis_layer"] = {{"epochs", projector->epochs},
                                 {"lr", projector->lr},
                                 {"final_train_accuracy", projector->final_train_accuracy},
                                 {"backbone_hash", projector->backbone_hash}};
    }
    manifest["figures"] = figure_entries;
    nlohmann::ordered_json mean_msp = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < eval.evaluations.size(); ++i) {
        nlohmann::ordered_json m;
        m["scorer"] = to_string(cfg.scorers[i].first);
        for (const auto& [k, v] : eval.evaluations[i].mean_msp) m[k] = v;
        mean_msp.push_back(m);
    }
    manifest["mean_msp"] = mean_msp;
    detail::write_json(manifest, paths.manifest);

    RunOutcome out;
    out.paths = paths;
    out.reports = eval.reports;
    out.manifest = std::move(manifest);
    return out;
}

// --- aggregation (cmd_report) ----------------------------------------------------------

struct MethodKey {
    std::string objective;
    std::string scorer;

    bool operator<(const MethodKey& o) const {
        if (objective != o.objective) return objective < o.objective;
        return scorer < o.scorer;
    }
    std::string label() const { return objective + "/" + scorer; }
};

struct MethodRow {
    MethodKey key;
    std::map<int, DetectionReport> by_split;
    std::optional<double> avg_diff_coarse; // vs the standard/msp baseline, TNR95
    std::optional<double> avg_diff_fine;
};

struct AggregateTable {
    std::string dataset;
    std::vector<int> split_indices; // sorted
    std::vector<MethodRow> rows;    // sorted by method key
};

// Groups per-split reports into one table; a mixed-dataset collection is a
// hard error because splits from different environments are not comparable.
inline AggregateTable aggregate_reports(const std::vector<DetectionReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("aggregate_reports: no reports");
    AggregateTable table;
    table.dataset = reports.front().dataset;
    std::set<int> splits;
    std::map<MethodKey, std::map<int, DetectionReport>> grouped;
    for (const DetectionReport& r : reports) {
        if (r.dataset != table.dataset)
            throw std::invalid_argument(
                "aggregate_reports: heterogeneous environments (datasets '" + table.dataset +
                "' and '" + r.dataset + "')");
        splits.insert(r.split_index);
        grouped[MethodKey{r.objective, r.scorer}][r.split_index] = r;
    }
    table.split_indices.assign(splits.begin(), splits.end());

    const MethodKey baseline_key{"standard", "msp"};
    const auto baseline = grouped.find(baseline_key);
    for (auto& [key, by_split] : grouped) {
        MethodRow row;
        row.key = key;
        row.by_split = by_split;
        if (baseline != grouped.end()) {
            double dc = 0.0, df = 0.0;
            std::size_t nc = 0, nf = 0;
            for (int s : table.split_indices) {
                const auto mine = by_split.find(s);
                const auto base = baseline->second.find(s);
                if (mine == by_split.end() || base == baseline->second.end()) continue;
                if (mine->second.tnr95_coarse && base->second.tnr95_coarse) {
                    dc += *mine->second.tnr95_coarse - *base->second.tnr95_coarse;
                    ++nc;
                }
                if (mine->second.tnr95_fine && base->second.tnr95_fine) {
                    df += *mine->second.tnr95_fine - *base->second.tnr95_fine;
                    ++nf;
                }
            }
            if (nc) row.avg_diff_coarse = dc / static_cast<double>(nc);
            if (nf) row.avg_diff_fine = df / static_cast<double>(nf);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

// Text rendering: one row per method, "coarse / fine" TNR95 percentage pairs
// per split, then the average difference vs the MSP baseline.
inline std::string render_aggregate_table(const AggregateTable& table) {
    std::ostringstream out;
    out << "# " << table.dataset << " TNR95 (coarse / fine, %)\n";
    out << "method";
    for (int s : table.split_indices) out << "\tSplit " << s;
    out << "\tAvg. diff.\n";
    const auto pct = [](const std::optional<double>& v) -> std::string {
        if (!v) return "-";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
        return buf;
    };
    for (const MethodRow& row : table.rows) {
        out << row.key.label();
        for (int s : table.split_indices) {
            const auto it = row.by_split.find(s);
            if (it == row.by_split.end()) {
                out << "\t-";
            } else {
                out << "\t" << pct(it->second.tnr95_coarse) << " / "
                    << pct(it->second.tnr95_fine);
            }
        }
        out << "\t" << pct(row.avg_diff_coarse) << " / " << pct(row.avg_diff_fine) << "\n";
    }
    return out.str();
}

} // namespace mixoe
