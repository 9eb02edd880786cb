#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixoe/dataset.hpp"
#include "mixoe/mixing.hpp"
#include "mixoe/model.hpp"
#include "mixoe/rng.hpp"
#include "mixoe/scoring.hpp"

namespace mixoe {

// Training objectives. Every loss_* call runs forward passes and, unless
// with_grad is false, accumulates parameter gradients into the model (callers
// zero_grad first). Evaluation-time calls on a frozen model should pass
// with_grad = false.

enum class ObjectiveKind {
    standard,
    oe,
    oe_hard_mining,
    energy_oe,
    mix,
    mixoe,
    mix_plus_oe,
};

inline std::string to_string(ObjectiveKind k) {
    switch (k) {
        case ObjectiveKind::standard: return "standard";
        case ObjectiveKind::oe: return "oe";
        case ObjectiveKind::oe_hard_mining: return "oe_hard_mining";
        case ObjectiveKind::energy_oe: return "energy_oe";
        case ObjectiveKind::mix: return "mix";
        case ObjectiveKind::mixoe: return "mixoe";
        case ObjectiveKind::mix_plus_oe: return "mix_plus_oe";
    }
    return "?";
}

inline ObjectiveKind objective_kind_from_string(const std::string& s) {
    if (s == "standard") return ObjectiveKind::standard;
    if (s == "oe") return ObjectiveKind::oe;
    if (s == "oe_hard_mining") return ObjectiveKind::oe_hard_mining;
    if (s == "energy_oe") return ObjectiveKind::energy_oe;
    if (s == "mix") return ObjectiveKind::mix;
    if (s == "mixoe") return ObjectiveKind::mixoe;
    if (s == "mix_plus_oe") return ObjectiveKind::mix_plus_oe;
    throw std::invalid_argument("unknown objective kind: " + s);
}

inline bool uses_mixing(ObjectiveKind k) {
    return k == ObjectiveKind::mix || k == ObjectiveKind::mixoe ||
           k == ObjectiveKind::mix_plus_oe;
}

inline bool uses_outliers(ObjectiveKind k) {
    return k == ObjectiveKind::oe || k == ObjectiveKind::oe_hard_mining ||
           k == ObjectiveKind::energy_oe || k == ObjectiveKind::mixoe ||
           k == ObjectiveKind::mix_plus_oe;
}

struct ObjectiveConfig {
    ObjectiveKind kind = ObjectiveKind::standard;
    double beta = 0.0;     // regularizer weight (the Mix-term weight for mix_plus_oe)
    double beta_oe = 0.0;  // mix_plus_oe only: OE-term weight
    double alpha = 1.0;    // Beta(alpha, alpha) shape, mixing kinds only
    MixMode mode = MixMode::linear; // mixing kinds only
    double m_in = -13.0;   // energy_oe only
    double m_out = -5.0;   // energy_oe only
    bool energy_average_hinges = false; // average the two hinge means instead of summing
    int mining_pool_factor = 4;         // oe_hard_mining only
};

// loss decomposition: total = id_term + beta * reg_term. For mix_plus_oe,
// reg_term already carries both weights and the identity holds with beta = 1.
struct LossValue {
    double total = 0.0;
    double id_term = 0.0;
    double reg_term = 0.0;
};

// Per-batch mixing record for reproducibility logs.
struct MixBatchLog {
    double lambda_base = 1.0;
    MixMode mode = MixMode::linear;
    std::vector<double> lambda_used;            // per example (cut adjusts area)
    std::vector<std::optional<CutRegion>> regions;
};

struct MixOptions {
    std::optional<double> forced_lambda; // degeneracy tests only, never training
};

namespace detail {

inline void check_targets(const Matrix& targets) {
    for (std::size_t r = 0; r < targets.rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < targets.cols; ++c) {
            const double t = targets.at(r, c);
            if (t < -1e-12) throw std::invalid_argument("cross_entropy_soft: negative target entry");
            sum += t;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("cross_entropy_soft: non-normalized target");
    }
}

inline void softmax_row(const double* logits, double* out, std::size_t k) {
    double m = logits[0];
    for (std::size_t i = 1; i < k; ++i) m = std::max(m, logits[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = std::exp(logits[i] - m);
        s += out[i];
    }
    for (std::size_t i = 0; i < k; ++i) out[i] /= s;
}

} // namespace detail

// Mean over the batch of -sum_k target_k * log softmax(logits)_k. If dlogits
// is given it receives d(mean CE)/dlogits = (softmax - target) / B.
inline double cross_entropy_soft(const Matrix& logits, const Matrix& targets,
                                 Matrix* dlogits = nullptr) {
    if (logits.rows == 0) throw std::invalid_argument("cross_entropy_soft: empty batch");
    if (logits.rows != targets.rows || logits.cols != targets.cols)
        throw std::invalid_argument("cross_entropy_soft: shape mismatch");
    detail::check_targets(targets);
    const std::size_t B = logits.rows, K = logits.cols;
    if (dlogits) *dlogits = Matrix(B, K);
    std::vector<double> p(K);
    double loss = 0.0;
    for (std::size_t r = 0; r < B; ++r) {
        const double* lr = logits.row(r);
        double m = lr[0];
        for (std::size_t c = 1; c < K; ++c) m = std::max(m, lr[c]);
        double s = 0.0;
        for (std::size_t c = 0; c < K; ++c) s += std::exp(lr[c] - m);
        const double lse = m + std::log(s);
        for (std::size_t c = 0; c < K; ++c) {
            loss -= targets.at(r, c) * (lr[c] - lse);
            if (dlogits)
                dlogits->at(r, c) =
                    (std::exp(lr[c] - lse) - targets.at(r, c)) / static_cast<double>(B);
        }
    }
    return loss / static_cast<double>(B);
}

namespace detail {

inline Matrix one_hot_targets(const Batch& batch, std::size_t K) {
    Matrix t(batch.size(), K);
    for (std::size_t r = 0; r < batch.size(); ++r) {
        const int y = batch.labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= K)
            throw std::invalid_argument("batch label out of range");
        t.at(r, static_cast<std::size_t>(y)) = 1.0;
    }
    return t;
}

inline Matrix uniform_targets(std::size_t B, std::size_t K) {
    Matrix t(B, K);
    const double u = 1.0 / static_cast<double>(K);
    std::fill(t.a.begin(), t.a.end(), u);
    return t;
}

// CE of `batch` against `targets`; optionally backprops grad_scale * dCE.
inline double ce_pass(Model& model, const Batch& batch, const Matrix& targets,
                      double grad_scale, bool with_grad) {
    const Matrix logits = model.forward(batch);
    Matrix dlogits;
    const double loss = cross_entropy_soft(logits, targets, with_grad ? &dlogits : nullptr);
    if (with_grad && grad_scale != 0.0) {
        for (double& g : dlogits.a) g *= grad_scale;
        model.backward(dlogits);
    }
    return loss;
}

} // namespace detail

// Plain cross-entropy on labeled ID data.
inline LossValue loss_standard(Model& model, const Batch& id_batch, bool with_grad = true) {
    if (id_batch.size() == 0) throw std::invalid_argument("loss_standard: empty batch");
    const Matrix targets = detail::one_hot_targets(id_batch, model.num_classes());
    const double id_term = detail::ce_pass(model, id_batch, targets, 1.0, with_grad);
    return LossValue{id_term, id_term, 0.0};
}

// ID cross-entropy plus beta * mean CE of outlier predictions against the
// uniform distribution.
inline LossValue loss_oe(Model& model, const Batch& id_batch, const Batch& outlier_batch,
                         double beta, bool with_grad = true) {
    if (outlier_batch.size() == 0) throw std::invalid_argument("loss_oe: empty outlier batch");
    const LossValue id = loss_standard(model, id_batch, with_grad);
    const Matrix uniform =
        detail::uniform_targets(outlier_batch.size(), model.num_classes());
    const double reg = detail::ce_pass(model, outlier_batch, uniform, beta, with_grad);
    return LossValue{id.id_term + beta * reg, id.id_term, reg};
}

// The k most ID-like pool examples (highest MSP under the current model),
// returned in input order; ties keep earlier examples.
inline Batch select_hard_outliers(Model& model, const Batch& pool_batch, std::size_t k) {
    if (k > pool_batch.size())
        throw std::invalid_argument("select_hard_outliers: k exceeds pool size");
    const Matrix logits = model.forward(pool_batch);
    std::vector<double> msp(pool_batch.size());
    std::vector<double> p(model.num_classes());
    for (std::size_t r = 0; r < pool_batch.size(); ++r) {
        detail::softmax_row(logits.row(r), p.data(), model.num_classes());
        msp[r] = *std::max_element(p.begin(), p.end());
    }
    std::vector<std::size_t> idx(pool_batch.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return msp[a] > msp[b]; });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    Batch out;
    for (std::size_t i : idx) {
        out.inputs.push_back(pool_batch.inputs[i]);
        out.labels.push_back(pool_batch.labels[i]);
    }
    return out;
}

// ID cross-entropy plus squared hinges pushing ID energies below m_in and
// outlier energies above m_out, E(x) = -log sum_k exp(logit_k). The two hinge
// means are summed by default; average_hinges halves the combination.
inline LossValue loss_energy_oe(Model& model, const Batch& id_batch,
                                const Batch& outlier_batch, double m_in, double m_out,
                                double beta, bool with_grad = true,
                                bool average_hinges = false) {
    if (id_batch.size() == 0 || outlier_batch.size() == 0)
        throw std::invalid_argument("loss_energy_oe: empty batch");
    const std::size_t K = model.num_classes();
    const double combine = average_hinges ? 0.5 : 1.0;

    // One pass per stream; the ID pass carries both the CE and hinge grads.
    const Matrix id_logits = model.forward(id_batch);
    Matrix id_targets = detail::one_hot_targets(id_batch, K);
    Matrix id_dlogits;
    const double id_term =
        cross_entropy_soft(id_logits, id_targets, with_grad ? &id_dlogits : nullptr);

    double hinge_in = 0.0;
    std::vector<double> p(K);
    const double Bi = static_cast<double>(id_batch.size());
    for (std::size_t r = 0; r < id_batch.size(); ++r) {
        std::vector<double> row(id_logits.row(r), id_logits.row(r) + K);
        const double energy = -logsumexp(row);
        const double h = std::max(0.0, energy - m_in);
        hinge_in += h * h;
        if (with_grad && h > 0.0) {
            detail::softmax_row(id_logits.row(r), p.data(), K);
            for (std::size_t c = 0; c < K; ++c)
                id_dlogits.at(r, c) += beta * combine * (2.0 * h * -p[c]) / Bi;
        }
    }
    hinge_in /= Bi;
    if (with_grad) model.backward(id_dlogits);

    const Matrix out_logits = model.forward(outlier_batch);
    double hinge_out = 0.0;
    Matrix out_dlogits(outlier_batch.size(), K);
    const double Bo = static_cast<double>(outlier_batch.size());
    for (std::size_t r = 0; r < outlier_batch.size(); ++r) {
        std::vector<double> row(out_logits.row(r), out_logits.row(r) + K);
        const double energy = -logsumexp(row);
        const double h = std::max(0.0, m_out - energy);
        hinge_out += h * h;
        if (with_grad && h > 0.0) {
            detail::softmax_row(out_logits.row(r), p.data(), K);
            for (std::size_t c = 0; c < K; ++c)
                out_dlogits.at(r, c) += beta * combine * (2.0 * h * p[c]) / Bo;
        }
    }
    hinge_out /= Bo;
    if (with_grad) model.backward(out_dlogits);

    const double reg = combine * (hinge_in + hinge_out);
    return LossValue{id_term + beta * reg, id_term, reg};
}

namespace detail {

// Mixed batch for MixOE: i-th ID example paired with i-th outlier, one base
// lambda for the whole batch, per-example boxes (and lambda adjustment) in
// cut mode. Targets follow the soft-target formula.
struct MixedBatch {
    Batch inputs;
    Matrix targets;
};

inline MixedBatch build_mixoe_batch(const Batch& id_batch, const Batch& outlier_batch,
                                    double lambda, MixMode mode, std::size_t K, Rng& rng,
                                    MixBatchLog* log) {
    MixedBatch mb;
    mb.targets = Matrix(id_batch.size(), K);
    for (std::size_t i = 0; i < id_batch.size(); ++i) {
        double lam = lambda;
        std::optional<CutRegion> region;
        Tensor mixed;
        if (mode == MixMode::linear) {
            mixed = mix_linear(id_batch.inputs[i], outlier_batch.inputs[i], lambda);
        } else {
            CutResult r = mix_cut(id_batch.inputs[i], outlier_batch.inputs[i], lambda, rng);
            mixed = std::move(r.input);
            lam = r.lambda_adjusted;
            region = r.region;
        }
        const int y = id_batch.labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= K)
            throw std::invalid_argument("build_mixoe_batch: label out of range");
        const SoftTarget t = make_soft_target(one_hot(K, static_cast<std::size_t>(y)).probs, lam);
        for (std::size_t c = 0; c < K; ++c) mb.targets.at(i, c) = t.probs[c];
        mb.inputs.inputs.push_back(std::move(mixed));
        mb.inputs.labels.push_back(-1);
        if (log) {
            log->lambda_used.push_back(lam);
            log->regions.push_back(region);
        }
    }
    return mb;
}

inline double draw_lambda(double alpha, Rng& rng, const MixOptions& opt) {
    if (opt.forced_lambda) {
        const double l = *opt.forced_lambda;
        if (!(l >= 0.0 && l <= 1.0))
            throw std::invalid_argument("forced lambda must be in [0, 1]");
        return l;
    }
    return sample_lambda(alpha, rng).lambda;
}

} // namespace detail

// The MixOE objective: ID cross-entropy plus beta * soft-target cross-entropy
// on virtual outliers mixed from (ID, outlier) pairs.
inline LossValue loss_mixoe(Model& model, const Batch& id_batch, const Batch& outlier_batch,
                            double alpha, double beta, MixMode mode, Rng& rng,
                            bool with_grad = true, const MixOptions& opt = {},
                            MixBatchLog* log = nullptr) {
    if (id_batch.size() == 0) throw std::invalid_argument("loss_mixoe: empty batch");
    if (outlier_batch.size() != id_batch.size())
        throw std::invalid_argument("loss_mixoe: outlier batch size must equal ID batch size");
    const double lambda = detail::draw_lambda(alpha, rng, opt);
    if (log) {
        log->lambda_base = lambda;
        log->mode = mode;
    }
    const std::size_t K = model.num_classes();
    detail::MixedBatch mb =
        detail::build_mixoe_batch(id_batch, outlier_batch, lambda, mode, K, rng, log);

    const Matrix id_targets = detail::one_hot_targets(id_batch, K);
    const double id_term = detail::ce_pass(model, id_batch, id_targets, 1.0, with_grad);
    const Matrix mixed_logits = model.forward(mb.inputs);
    Matrix dlogits;
    const double reg =
        cross_entropy_soft(mixed_logits, mb.targets, with_grad ? &dlogits : nullptr);
    if (with_grad && beta != 0.0) {
        for (double& g : dlogits.a) g *= beta;
        model.backward(dlogits);
    }
    return LossValue{id_term + beta * reg, id_term, reg};
}

namespace detail {

// Mixed batch for ID-only Mix training: each example paired with a shuffled
// partner, interpolated targets lambda*y1 + (1-lambda)*y2.
inline MixedBatch build_mix_batch(const Batch& id_batch, double lambda, MixMode mode,
                                  std::size_t K, Rng& rng, MixBatchLog* log) {
    std::vector<std::size_t> perm(id_batch.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    MixedBatch mb;
    mb.targets = Matrix(id_batch.size(), K);
    for (std::size_t i = 0; i < id_batch.size(); ++i) {
        const std::size_t j = perm[i];
        double lam = lambda;
        std::optional<CutRegion> region;
        Tensor mixed;
        if (mode == MixMode::linear) {
            mixed = mix_linear(id_batch.inputs[i], id_batch.inputs[j], lambda);
        } else {
            CutResult r = mix_cut(id_batch.inputs[i], id_batch.inputs[j], lambda, rng);
            mixed = std::move(r.input);
            lam = r.lambda_adjusted;
            region = r.region;
        }
        const int yi = id_batch.labels[i], yj = id_batch.labels[j];
        if (yi < 0 || yj < 0 || static_cast<std::size_t>(yi) >= K ||
            static_cast<std::size_t>(yj) >= K)
            throw std::invalid_argument("build_mix_batch: label out of range");
        mb.targets.at(i, static_cast<std::size_t>(yi)) += lam;
        mb.targets.at(i, static_cast<std::size_t>(yj)) += 1.0 - lam;
        mb.inputs.inputs.push_back(std::move(mixed));
        mb.inputs.labels.push_back(-1);
        if (log) {
            log->lambda_used.push_back(lam);
            log->regions.push_back(region);
        }
    }
    return mb;
}

} // namespace detail

// ID-only mixing ablation: no outlier data, interpolated two-hot targets.
inline LossValue loss_mix(Model& model, const Batch& id_batch, double alpha, double beta,
                          MixMode mode, Rng& rng, bool with_grad = true,
                          const MixOptions& opt = {}, MixBatchLog* log = nullptr) {
    if (id_batch.size() < 2)
        throw std::invalid_argument("loss_mix: batch must contain at least 2 examples");
    const double lambda = detail::draw_lambda(alpha, rng, opt);
    if (log) {
        log->lambda_base = lambda;
        log->mode = mode;
    }
    const std::size_t K = model.num_classes();
    detail::MixedBatch mb = detail::build_mix_batch(id_batch, lambda, mode, K, rng, log);

    const Matrix id_targets = detail::one_hot_targets(id_batch, K);
    const double id_term = detail::ce_pass(model, id_batch, id_targets, 1.0, with_grad);
    const Matrix mixed_logits = model.forward(mb.inputs);
    Matrix dlogits;
    const double reg =
        cross_entropy_soft(mixed_logits, mb.targets, with_grad ? &dlogits : nullptr);
    if (with_grad && beta != 0.0) {
        for (double& g : dlogits.a) g *= beta;
        model.backward(dlogits);
    }
    return LossValue{id_term + beta * reg, id_term, reg};
}

// Naive combination of the Mix and OE objectives, kept to reproduce its
// failure mode (conflicting targets on nearby inputs). reg_term carries both
// weighted regularizers, so total = id_term + 1 * reg_term.
inline LossValue loss_mix_plus_oe(Model& model, const Batch& id_batch,
                                  const Batch& outlier_batch, double alpha,
                                  double beta_mix, double beta_oe, MixMode mode, Rng& rng,
                                  bool with_grad = true, const MixOptions& opt = {},
                                  MixBatchLog* log = nullptr) {
    if (id_batch.size() < 2)
        throw std::invalid_argument("loss_mix_plus_oe: batch must contain at least 2 examples");
    if (outlier_batch.size() == 0)
        throw std::invalid_argument("loss_mix_plus_oe: empty outlier batch");
    const double lambda = detail::draw_lambda(alpha, rng, opt);
    if (log) {
        log->lambda_base = lambda;
        log->mode = mode;
    }
    const std::size_t K = model.num_classes();
    detail::MixedBatch mb = detail::build_mix_batch(id_batch, lambda, mode, K, rng, log);

    const Matrix id_targets = detail::one_hot_targets(id_batch, K);
    const double id_term = detail::ce_pass(model, id_batch, id_targets, 1.0, with_grad);

    const Matrix mixed_logits = model.forward(mb.inputs);
    Matrix dmixed;
    const double mix_reg =
        cross_entropy_soft(mixed_logits, mb.targets, with_grad ? &dmixed : nullptr);
    if (with_grad && beta_mix != 0.0) {
        for (double& g : dmixed.a) g *= beta_mix;
        model.backward(dmixed);
    }

    const Matrix uniform = detail::uniform_targets(outlier_batch.size(), K);
    const double oe_reg = detail::ce_pass(model, outlier_batch, uniform, beta_oe, with_grad);

    const double reg = beta_mix * mix_reg + beta_oe * oe_reg;
    return LossValue{id_term + reg, id_term, reg};
}

// --- config (de)serialization -----------------------------------------------

// Strict parse: only the keys meaningful for the kind are accepted, so a
// config cannot silently carry ignored hyperparameters.
inline ObjectiveConfig objective_config_from_json(const nlohmann::json& j) {
    if (!j.contains("kind")) throw std::invalid_argument("objective config: missing kind");
    ObjectiveConfig c;
    c.kind = objective_kind_from_string(j.at("kind").get<std::string>());

    std::vector<std::string> allowed = {"kind"};
    if (c.kind != ObjectiveKind::standard) allowed.push_back("beta");
    if (uses_mixing(c.kind)) {
        allowed.push_back("alpha");
        allowed.push_back("mode");
    }
    if (c.kind == ObjectiveKind::mix_plus_oe) allowed.push_back("beta_oe");
    if (c.kind == ObjectiveKind::energy_oe) {
        allowed.push_back("m_in");
        allowed.push_back("m_out");
        allowed.push_back("energy_average_hinges");
    }
    if (c.kind == ObjectiveKind::oe_hard_mining) allowed.push_back("mining_pool_factor");
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("objective config: key '" + key +
                                        "' not valid for kind " + to_string(c.kind));
    }

    if (j.contains("beta")) c.beta = j.at("beta").get<double>();
    if (j.contains("beta_oe")) c.beta_oe = j.at("beta_oe").get<double>();
    if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
    if (j.contains("mode")) c.mode = mix_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("m_in")) c.m_in = j.at("m_in").get<double>();
    if (j.contains("m_out")) c.m_out = j.at("m_out").get<double>();
    if (j.contains("energy_average_hinges"))
        c.energy_average_hinges = j.at("energy_average_hinges").get<bool>();
    if (j.contains("mining_pool_factor"))
        c.mining_pool_factor = j.at("mining_pool_factor").get<int>();

    if (c.beta < 0.0) throw std::invalid_argument("objective config: beta must be >= 0");
    if (uses_mixing(c.kind) && !(c.alpha > 0.0))
        throw std::invalid_argument("objective config: alpha must be > 0");
    if (c.kind == ObjectiveKind::oe_hard_mining && c.mining_pool_factor < 1)
        throw std::invalid_argument("objective config: mining_pool_factor must be >= 1");
    return c;
}

inline nlohmann::json objective_config_to_json(const ObjectiveConfig& c) {
    nlohmann::json j;
    j["kind"] = to_string(c.kind);
    if (c.kind != ObjectiveKind::standard) j["beta"] = c.beta;
    if (uses_mixing(c.kind)) {
        j["alpha"] = c.alpha;
        j["mode"] = to_string(c.mode);
    }
    if (c.kind == ObjectiveKind::mix_plus_oe) j["beta_oe"] = c.beta_oe;
    if (c.kind == ObjectiveKind::energy_oe) {
        j["m_in"] = c.m_in;
        j["m_out"] = c.m_out;
        j["energy_average_hinges"] = c.energy_average_hinges;
    }
    if (c.kind == ObjectiveKind::oe_hard_mining) j["mining_pool_factor"] = c.mining_pool_factor;
    return j;
}

} // namespace mixoe
