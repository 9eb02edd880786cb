#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
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

namespace mixoe {

enum class TrainPhase { standard, finetune };

inline std::string to_string(TrainPhase p) {
    return p == TrainPhase::standard ? "standard" : "finetune";
}

inline TrainPhase train_phase_from_string(const std::string& s) {
    if (s == "standard") return TrainPhase::standard;
    if (s == "finetune") return TrainPhase::finetune;
    throw std::invalid_argument("unknown train phase: " + s);
}

struct OptimizerConfig {
    std::string type = "sgd_momentum";
    double lr = 0.001;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

struct TrainConfig {
    TrainPhase phase = TrainPhase::standard;
    int epochs = 90; // 10 for finetune
    OptimizerConfig optimizer;
    std::string schedule = "cosine";
    std::size_t id_batch_size = 32;
    std::size_t outlier_batch_size = 64; // 2x ID for oe/oe_hard_mining/energy_oe,
                                         // equal to ID for mixoe/mix_plus_oe
    ObjectiveConfig objective;
    std::uint64_t seed = 0;
    bool pretrained_init = false;
};

// The batch-size convention tied to the objective family.
inline std::size_t conventional_outlier_batch(ObjectiveKind kind, std::size_t id_batch) {
    switch (kind) {
        case ObjectiveKind::mixoe:
        case ObjectiveKind::mix_plus_oe:
            return id_batch;
        case ObjectiveKind::oe:
        case ObjectiveKind::oe_hard_mining:
        case ObjectiveKind::energy_oe:
            return 2 * id_batch;
        default:
            return 0;
    }
}

inline void validate_train_config(const TrainConfig& c) {
    if (c.epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (c.id_batch_size < 1) throw std::invalid_argument("train config: empty ID batch");
    if (c.schedule != "cosine") throw std::invalid_argument("train config: unknown schedule");
    if (c.optimizer.type != "sgd_momentum")
        throw std::invalid_argument("train config: unknown optimizer");
    if (!(c.optimizer.lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
    if (c.phase == TrainPhase::standard && c.objective.kind != ObjectiveKind::standard)
        throw std::invalid_argument("train config: standard phase requires standard objective");
    if (uses_outliers(c.objective.kind) &&
        c.outlier_batch_size != conventional_outlier_batch(c.objective.kind, c.id_batch_size))
        throw std::invalid_argument(
            "train config: outlier_batch_size must equal the ID batch size for mixing "
            "objectives and twice the ID batch size for oe/oe_hard_mining/energy_oe");
}

inline TrainConfig make_standard_config(std::uint64_t seed, int epochs = 90) {
    TrainConfig c;
    c.phase = TrainPhase::standard;
    c.epochs = epochs;
    c.seed = seed;
    c.objective.kind = ObjectiveKind::standard;
    c.outlier_batch_size = 0;
    return c;
}

inline TrainConfig make_finetune_config(const ObjectiveConfig& objective, std::uint64_t seed,
                                        int epochs = 10, std::size_t id_batch = 32) {
    TrainConfig c;
    c.phase = TrainPhase::finetune;
    c.epochs = epochs;
    c.seed = seed;
    c.id_batch_size = id_batch;
    c.objective = objective;
    c.outlier_batch_size = conventional_outlier_batch(objective.kind, id_batch);
    return c;
}

// lr(e) = 0.5 * lr0 * (1 + cos(pi * e / (E-1))): exactly lr0 at epoch 0,
// exactly 0 at the final epoch, 0.5*lr0 at the midpoint.
inline double cosine_lr(double lr0, int epoch, int total_epochs) {
    if (epoch < 0 || epoch >= total_epochs) throw std::invalid_argument("cosine_lr: bad epoch");
    if (total_epochs == 1) return lr0;
    return 0.5 * lr0 *
           (1.0 + std::cos(M_PI * static_cast<double>(epoch) /
                           static_cast<double>(total_epochs - 1)));
}

struct EpochTrace {
    int epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0; // means over the epoch's steps
    double id_term = 0.0;
    double reg_term = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochTrace> epochs;
    std::uint64_t distinct_outliers_consumed = 0;
    std::uint64_t outlier_reads = 0;
};

namespace detail {

// PyTorch-convention SGD: buf = momentum*buf + (g + wd*p); p -= lr*buf.
class SgdMomentum {
public:
    SgdMomentum(const OptimizerConfig& cfg, std::size_t n_params)
        : cfg_(cfg), buf_(n_params, 0.0) {}

    void step(Model& model, double lr) {
        std::vector<double> p = model.parameters();
        const std::vector<double> g = model.gradients();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double grad = g[i] + cfg_.weight_decay * p[i];
            buf_[i] = cfg_.momentum * buf_[i] + grad;
            p[i] -= lr * buf_[i];
        }
        model.set_parameters(p);
    }

private:
    OptimizerConfig cfg_;
    std::vector<double> buf_;
};

inline Batch gather_id_batch(const std::vector<Example>& train, const LabelMap& labels,
                             const std::vector<std::size_t>& order, std::size_t begin,
                             std::size_t count) {
    Batch b;
    for (std::size_t i = 0; i < count; ++i) {
        const Example& ex = train[order[begin + i]];
        auto it = labels.find(ex.class_id);
        if (it == labels.end())
            throw DataError("training example with non-ID class: " + ex.class_id);
        b.push(ex, it->second);
    }
    return b;
}

// Cycling view over the outlier pool: reshuffled independently each epoch,
// wrapping within an epoch, with consumption bookkeeping.
class OutlierStream {
public:
    OutlierStream(const OutlierPool& pool, std::uint64_t seed)
        : pool_(&pool), seed_(seed), consumed_(pool.examples.size(), false) {}

    void start_epoch(int epoch) {
        order_.resize(pool_->examples.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        Rng rng(mix_seed(seed_, 0x00717e00ULL + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order_);
        pos_ = 0;
    }

    Batch next(std::size_t count) {
        Batch b;
        for (std::size_t i = 0; i < count; ++i) {
            if (pos_ == order_.size()) pos_ = 0;
            const std::size_t idx = order_[pos_++];
            b.push(pool_->examples[idx], -1);
            ++reads_;
            if (!consumed_[idx]) {
                consumed_[idx] = true;
                ++distinct_;
            }
        }
        return b;
    }

    std::uint64_t distinct_consumed() const { return distinct_; }
    std::uint64_t reads() const { return reads_; }

private:
    const OutlierPool* pool_;
    std::uint64_t seed_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::vector<bool> consumed_;
    std::uint64_t distinct_ = 0;
    std::uint64_t reads_ = 0;
};

inline double validation_accuracy(Model& model, const std::vector<Example>& validation,
                                  const LabelMap& labels) {
    if (validation.empty()) return 0.0;
    std::vector<int> predicted, truth;
    const std::size_t chunk = 256;
    for (std::size_t at = 0; at < validation.size(); at += chunk) {
        Batch b;
        for (std::size_t i = at; i < std::min(validation.size(), at + chunk); ++i) {
            auto it = labels.find(validation[i].class_id);
            if (it == labels.end())
                throw DataError("validation example with non-ID class: " +
                                validation[i].class_id);
            b.push(validation[i], it->second);
        }
        const Matrix logits = model.forward(b);
        for (std::size_t r = 0; r < logits.rows; ++r) {
            const double* lr = logits.row(r);
            predicted.push_back(static_cast<int>(
                std::max_element(lr, lr + logits.cols) - lr));
            truth.push_back(b.labels[r]);
        }
    }
    return accuracy(predicted, truth);
}

} // namespace detail

// One training loop for both phases. The ID example stream, the outlier
// stream, and the mixing draws run on three decoupled generators so that the
// ID-side trajectory is identical across objectives sharing a seed.
inline TrainResult run_training(Model& model, const DataPartition& partition,
                                const LabelMap& labels, const OutlierPool* pool,
                                const TrainConfig& config) {
    validate_train_config(config);
    if (partition.train.empty()) throw std::invalid_argument("run_training: empty train set");
    const bool needs_outliers = uses_outliers(config.objective.kind);
    if (needs_outliers) {
        if (!pool) throw std::invalid_argument("run_training: objective requires an outlier pool");
        if (pool->examples.size() < config.outlier_batch_size)
            throw std::invalid_argument("run_training: outlier pool smaller than one batch");
    }

    const std::size_t n = partition.train.size();
    const std::size_t batch = std::min(config.id_batch_size, n);
    const std::size_t steps = std::max<std::size_t>(1, n / batch);

    detail::SgdMomentum opt(config.optimizer, model.parameters().size());
    std::optional<detail::OutlierStream> outliers;
    if (needs_outliers) outliers.emplace(*pool, mix_seed(config.seed, 0x0047));

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = cosine_lr(config.optimizer.lr, epoch, config.epochs);
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng id_rng(mix_seed(config.seed, 0x1d000000ULL + static_cast<std::uint64_t>(epoch)));
        id_rng.shuffle(order);
        if (outliers) outliers->start_epoch(epoch);
        Rng mix_rng(mix_seed(config.seed, 0x3b000000ULL + static_cast<std::uint64_t>(epoch)));

        EpochTrace trace;
        trace.epoch = epoch;
        trace.lr = lr;
        for (std::size_t s = 0; s < steps; ++s) {
            const Batch id_batch =
                detail::gather_id_batch(partition.train, labels, order, s * batch, batch);
            model.zero_grad();
            LossValue loss;
            switch (config.objective.kind) {
                case ObjectiveKind::standard:
                    loss = loss_standard(model, id_batch);
                    break;
                case ObjectiveKind::oe:
                    loss = loss_oe(model, id_batch, outliers->next(config.outlier_batch_size),
                                   config.objective.beta);
                    break;
                case ObjectiveKind::oe_hard_mining: {
                    const std::size_t pool_n =
                        config.outlier_batch_size *
                        static_cast<std::size_t>(config.objective.mining_pool_factor);
                    const Batch mining_pool = outliers->next(pool_n);
                    const Batch hard =
                        select_hard_outliers(model, mining_pool, config.outlier_batch_size);
                    loss = loss_oe(model, id_batch, hard, config.objective.beta);
                    break;
                }
                case ObjectiveKind::energy_oe:
                    loss = loss_energy_oe(model, id_batch,
                                          outliers->next(config.outlier_batch_size),
                                          config.objective.m_in, config.objective.m_out,
                                          config.objective.beta, true,
                                          config.objective.energy_average_hinges);
                    break;
                case ObjectiveKind::mix:
                    loss = loss_mix(model, id_batch, config.objective.alpha,
                                    config.objective.beta, config.objective.mode, mix_rng);
                    break;
                case ObjectiveKind::mixoe:
                    loss = loss_mixoe(model, id_batch,
                                      outliers->next(config.outlier_batch_size),
                                      config.objective.alpha, config.objective.beta,
                                      config.objective.mode, mix_rng);
                    break;
                case ObjectiveKind::mix_plus_oe:
                    loss = loss_mix_plus_oe(model, id_batch,
                                            outliers->next(config.outlier_batch_size),
                                            config.objective.alpha, config.objective.beta,
                                            config.objective.beta_oe, config.objective.mode,
                                            mix_rng);
                    break;
            }
            if (!std::isfinite(loss.total))
                throw DivergenceError("loss diverged (non-finite) at epoch " +
                                      std::to_string(epoch) + " step " + std::to_string(s));
            opt.step(model, lr);
            trace.loss_total += loss.total;
            trace.id_term += loss.id_term;
            trace.reg_term += loss.reg_term;
        }
        trace.loss_total /= static_cast<double>(steps);
        trace.id_term /= static_cast<double>(steps);
        trace.reg_term /= static_cast<double>(steps);
        trace.val_accuracy = detail::validation_accuracy(model, partition.validation, labels);
        result.epochs.push_back(trace);
    }
    if (outliers) {
        result.distinct_outliers_consumed = outliers->distinct_consumed();
        result.outlier_reads = outliers->reads();
    }
    return result;
}

inline TrainResult train_standard(Model& model, const DataPartition& partition,
                                  const LabelMap& labels, const TrainConfig& config) {
    if (config.phase != TrainPhase::standard)
        throw std::invalid_argument("train_standard: config.phase must be standard");
    return run_training(model, partition, labels, nullptr, config);
}

inline TrainResult finetune(Model& model, const DataPartition& partition,
                            const LabelMap& labels, const OutlierPool& pool,
                            const TrainConfig& config) {
    if (config.phase != TrainPhase::finetune)
        throw std::invalid_argument("finetune: config.phase must be finetune");
    const OutlierPool* p = uses_outliers(config.objective.kind) ? &pool : nullptr;
    return run_training(model, partition, labels, p, config);
}

// --- checkpoints --------------------------------------------------------------

struct Checkpoint {
    std::uint64_t config_hash = 0;
    MlpSpec spec;
    std::vector<double> params;
};

namespace detail {

constexpr std::uint32_t kCheckpointMagic = 0x4d584f45u; // "MXOE"
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_pod(std::ofstream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

template <class T>
void read_pod(std::ifstream& in, T& value) {
    in.read(reinterpret_cast<char*>(&value), sizeof value);
}

} // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    detail::write_pod(out, detail::kCheckpointMagic);
    detail::write_pod(out, detail::kCheckpointVersion);
    detail::write_pod(out, ckpt.config_hash);
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.spec.input_dim));
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.spec.hidden.size()));
    for (std::size_t h : ckpt.spec.hidden)
        detail::write_pod(out, static_cast<std::uint64_t>(h));
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.spec.num_classes));
    detail::write_pod(out, static_cast<std::uint64_t>(ckpt.params.size()));
    out.write(reinterpret_cast<const char*>(ckpt.params.data()),
              static_cast<std::streamsize>(ckpt.params.size() * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint: " + path);
    std::uint32_t magic = 0, version = 0;
    detail::read_pod(in, magic);
    detail::read_pod(in, version);
    if (!in || magic != detail::kCheckpointMagic)
        throw DataError("not a checkpoint file: " + path);
    if (version != detail::kCheckpointVersion)
        throw DataError("unsupported checkpoint version in " + path);
    Checkpoint ckpt;
    detail::read_pod(in, ckpt.config_hash);
    std::uint64_t input_dim = 0, n_hidden = 0, num_classes = 0, n_params = 0;
    detail::read_pod(in, input_dim);
    detail::read_pod(in, n_hidden);
    ckpt.spec.input_dim = static_cast<std::size_t>(input_dim);
    for (std::uint64_t i = 0; i < n_hidden; ++i) {
        std::uint64_t h = 0;
        detail::read_pod(in, h);
        ckpt.spec.hidden.push_back(static_cast<std::size_t>(h));
    }
    detail::read_pod(in, num_classes);
    ckpt.spec.num_classes = static_cast<std::size_t>(num_classes);
    detail::read_pod(in, n_params);
    ckpt.params.resize(static_cast<std::size_t>(n_params));
    in.read(reinterpret_cast<char*>(ckpt.params.data()),
            static_cast<std::streamsize>(ckpt.params.size() * sizeof(double)));
    if (!in) throw DataError("truncated checkpoint: " + path);
    return ckpt;
}

// Strict load: the stored config hash must match the caller's experiment
// config, so stale or foreign checkpoints cannot be evaluated silently.
inline Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_config_hash) {
    Checkpoint ckpt = read_checkpoint(path);
    if (ckpt.config_hash != expected_config_hash)
        throw DataError("checkpoint config hash mismatch for " + path);
    return ckpt;
}

// --- environment evaluation ---------------------------------------------------

// All data one environment needs, with evaluation-only collections behind
// read-audit counters.
struct EnvironmentData {
    EnvironmentSpec spec;
    DataPartition id; // train / validation only; test lives in id_test below
    AuditedExamples id_test;
    AuditedExamples fine_ood;
    AuditedExamples coarse_ood;
    OutlierPool outlier_train;
    OutlierPool outlier_validation;
};

struct EvaluationResult {
    DetectionReport report;
    ScoreTable table;
    std::map<std::string, double> mean_msp; // per origin, for the density plots
};

namespace detail {

inline void score_collection(Model& model, const AuditedExamples& items, Origin origin,
                             ScorerKind scorer, double temperature, ScoreTable& table,
                             std::vector<double>& msp_out, std::vector<int>* predicted,
                             std::vector<int>* truth, const LabelMap* labels) {
    const std::size_t chunk = 256;
    for (std::size_t at = 0; at < items.size(); at += chunk) {
        Batch b;
        std::vector<std::string> ids;
        for (std::size_t i = at; i < std::min(items.size(), at + chunk); ++i) {
            const Example& ex = items.at(i);
            b.push(ex, -1);
            ids.push_back(ex.id);
            if (truth && labels) {
                auto it = labels->find(ex.class_id);
                if (it == labels->end())
                    throw DataError("ID test example with non-ID class: " + ex.class_id);
                truth->push_back(it->second);
            }
        }
        const Matrix logits = model.forward(b);
        for (std::size_t r = 0; r < logits.rows; ++r) {
            std::vector<double> row(logits.row(r), logits.row(r) + logits.cols);
            double s = 0.0;
            switch (scorer) {
                case ScorerKind::msp: s = score_msp(row); break;
                case ScorerKind::odin: s = score_odin(row, temperature); break;
                case ScorerKind::energy: s = score_energy(row, temperature); break;
            }
            table.push(ids[r], origin, s);
            msp_out.push_back(score_msp(row));
            if (predicted)
                predicted->push_back(static_cast<int>(
                    std::max_element(row.begin(), row.end()) - row.begin()));
        }
    }
}

} // namespace detail

// Scores ID test / fine-OOD / coarse-OOD under one scorer and assembles the
// DetectionReport. Empty collections simply leave their fields unset.
inline EvaluationResult evaluate_environment(Model& model, const EnvironmentData& data,
                                             ScorerKind scorer, double temperature = 1.0) {
    EvaluationResult res;
    res.table.scorer = scorer;
    res.table.temperature = temperature;
    const LabelMap labels = make_label_map(data.spec.id_classes);

    std::vector<int> predicted, truth;
    std::vector<double> msp_id, msp_fine, msp_coarse;
    detail::score_collection(model, data.id_test, Origin::id_test, scorer, temperature,
                             res.table, msp_id, &predicted, &truth, &labels);
    detail::score_collection(model, data.fine_ood, Origin::fine_ood, scorer, temperature,
                             res.table, msp_fine, nullptr, nullptr, nullptr);
    detail::score_collection(model, data.coarse_ood, Origin::coarse_ood, scorer, temperature,
                             res.table, msp_coarse, nullptr, nullptr, nullptr);

    res.report = build_report(res.table, predicted, truth, data.spec.dataset_name,
                              data.spec.split_index, data.spec.seed);
    const auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    if (!msp_id.empty()) res.mean_msp["id_test"] = mean(msp_id);
    if (!msp_fine.empty()) res.mean_msp["fine_ood"] = mean(msp_fine);
    if (!msp_coarse.empty()) res.mean_msp["coarse_ood"] = mean(msp_coarse);
    return res;
}

// --- hyperparameter tuning ------------------------------------------------------

using ModelFactory = std::function<std::unique_ptr<Model>()>;

struct TuneTrial {
    ObjectiveConfig config;
    double validation_auroc = 0.0;
    double validation_accuracy = 0.0;
    bool qualified = false;
};

struct TuneResult {
    ObjectiveConfig chosen;
    bool flagged = false; // no grid point met the accuracy constraint
    double baseline_accuracy = 0.0;
    std::vector<TuneTrial> trials;
};

namespace detail {

inline std::vector<double> msp_scores_of(Model& model, const std::vector<Example>& items) {
    std::vector<double> out;
    const std::size_t chunk = 256;
    for (std::size_t at = 0; at < items.size(); at += chunk) {
        Batch b;
        for (std::size_t i = at; i < std::min(items.size(), at + chunk); ++i)
            b.push(items[i], -1);
        const Matrix logits = model.forward(b);
        for (std::size_t r = 0; r < logits.rows; ++r) {
            std::vector<double> row(logits.row(r), logits.row(r) + logits.cols);
            out.push_back(score_msp(row));
        }
    }
    return out;
}

} // namespace detail

// Grid search on a single split: fine-tune per grid point from the standard
// checkpoint, score ID-validation vs outlier-validation AUROC with MSP, and
// pick the best AUROC among configs losing at most 1 accuracy point
// (tie-break: higher accuracy, then grid order). If nothing qualifies the
// best-AUROC config is returned flagged.
inline TuneResult tune_hyperparams(const std::vector<ObjectiveConfig>& grid,
                                   const ModelFactory& model_factory,
                                   const std::vector<double>& standard_params,
                                   const DataPartition& partition, const LabelMap& labels,
                                   const OutlierPool& outlier_train,
                                   const OutlierPool& outlier_validation,
                                   std::uint64_t seed, int epochs = 10,
                                   std::size_t id_batch = 32) {
    if (grid.empty()) throw std::invalid_argument("tune_hyperparams: empty grid");
    if (partition.validation.empty())
        throw std::invalid_argument("tune_hyperparams: empty ID validation set");
    if (outlier_validation.examples.empty())
        throw std::invalid_argument("tune_hyperparams: empty outlier validation set");

    TuneResult result;
    {
        std::unique_ptr<Model> base = model_factory();
        base->set_parameters(standard_params);
        result.baseline_accuracy =
            detail::validation_accuracy(*base, partition.validation, labels);
    }

    for (const ObjectiveConfig& oc : grid) {
        std::unique_ptr<Model> model = model_factory();
        model->set_parameters(standard_params);
        const TrainConfig cfg = make_finetune_config(oc, seed, epochs, id_batch);
        finetune(*model, partition, labels, outlier_train, cfg);

        TuneTrial trial;
        trial.config = oc;
        const std::vector<double> id_scores =
            detail::msp_scores_of(*model, partition.validation);
        const std::vector<double> out_scores =
            detail::msp_scores_of(*model, outlier_validation.examples);
        trial.validation_auroc = auroc(id_scores, out_scores);
        trial.validation_accuracy =
            detail::validation_accuracy(*model, partition.validation, labels);
        trial.qualified =
            result.baseline_accuracy - trial.validation_accuracy <= 0.01 + 1e-12;
        result.trials.push_back(trial);
    }

    const auto better = [](const TuneTrial& a, const TuneTrial& b) {
        if (a.validation_auroc != b.validation_auroc)
            return a.validation_auroc > b.validation_auroc;
        return a.validation_accuracy > b.validation_accuracy;
    };
    const TuneTrial* best_qualified = nullptr;
    const TuneTrial* best_any = nullptr;
    for (const TuneTrial& t : result.trials) {
        if (!best_any || better(t, *best_any)) best_any = &t;
        if (t.qualified && (!best_qualified || better(t, *best_qualified)))
            best_qualified = &t;
    }
    if (best_qualified) {
        result.chosen = best_qualified->config;
    } else {
        result.chosen = best_any->config;
        result.flagged = true;
    }
    return result;
}

} // namespace mixoe
