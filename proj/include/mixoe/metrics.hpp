#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixoe/scoring.hpp"

namespace mixoe {

// Detection metrics. Orientation convention everywhere: ID is the positive
// class and higher score means "more ID".

// Probability that a uniformly random ID score exceeds a uniformly random OOD
// score, ties counting 1/2 (Mann-Whitney form; equals the trapezoidal ROC
// area). Exact up to floating-point summation, no curve interpolation.
inline double auroc(const std::vector<double>& id_scores,
                    const std::vector<double>& ood_scores) {
    if (id_scores.empty() || ood_scores.empty())
        throw std::invalid_argument("auroc: empty score vector");
    std::vector<double> ood = ood_scores;
    std::sort(ood.begin(), ood.end());
    double wins = 0.0;
    for (double s : id_scores) {
        const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
        const auto hi = std::upper_bound(lo, ood.end(), s);
        wins += static_cast<double>(lo - ood.begin());
        wins += 0.5 * static_cast<double>(hi - lo);
    }
    return wins / (static_cast<double>(id_scores.size()) *
                   static_cast<double>(ood_scores.size()));
}

// Threshold used by tnr_at_tpr: the lower-interpolation quantile of the ID
// scores, i.e. ascending-sorted id[floor((n-1) * (1 - tpr_target))]. Chosen
// among observed ID scores; guarantees fraction(ID >= theta) >= tpr_target.
inline double tpr_threshold(const std::vector<double>& id_scores, double tpr_target) {
    if (id_scores.empty()) throw std::invalid_argument("tpr_threshold: empty score vector");
    if (!(tpr_target > 0.0) || tpr_target > 1.0)
        throw std::invalid_argument("tpr_threshold: tpr_target must be in (0, 1]");
    std::vector<double> id = id_scores;
    std::sort(id.begin(), id.end());
    const double pos = static_cast<double>(id.size() - 1) * (1.0 - tpr_target);
    const std::size_t idx = static_cast<std::size_t>(std::floor(pos));
    return id[idx];
}

// True negative rate (fraction of OOD scored strictly below the threshold) at
// the threshold where at least tpr_target of the ID scores are accepted.
// Ties at the threshold count as accepted ID.
inline double tnr_at_tpr(const std::vector<double>& id_scores,
                         const std::vector<double>& ood_scores,
                         double tpr_target = 0.95) {
    if (ood_scores.empty()) throw std::invalid_argument("tnr_at_tpr: empty score vector");
    const double theta = tpr_threshold(id_scores, tpr_target);
    std::size_t below = 0;
    for (double s : ood_scores)
        if (s < theta) ++below;
    return static_cast<double>(below) / static_cast<double>(ood_scores.size());
}

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size())
        throw std::invalid_argument("accuracy: length mismatch");
    if (predicted.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == truth[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

// Everything cmd_report and the plots need for one environment x scorer x
// objective cell. Metric fields are optional: a missing origin class yields a
// partial report with explicit nulls.
struct DetectionReport {
    std::optional<double> tnr95_coarse, tnr95_fine;
    std::optional<double> auroc_coarse, auroc_fine;
    std::optional<double> id_accuracy;

    // environment reference
    std::string dataset;
    int split_index = 0;
    std::uint64_t split_seed = 0;

    std::string scorer;    // msp | odin | energy
    double temperature = 1.0;
    std::string objective; // training objective of the evaluated model

    std::size_t n_id = 0, n_fine = 0, n_coarse = 0;

    double tpr_target = 0.95;
    // Recorded so reported numbers are reproducible under this convention.
    std::string threshold_convention = "lower-quantile:ties-accept-id";
};

// Computes all metric fields from a score table plus ID-test predictions.
// Deterministic; missing origins leave the corresponding fields unset.
inline DetectionReport build_report(const ScoreTable& table,
                                    const std::vector<int>& predicted,
                                    const std::vector<int>& labels,
                                    const std::string& dataset,
                                    int split_index,
                                    std::uint64_t split_seed,
                                    double tpr_target = 0.95) {
    if (table.scores.size() != table.origin.size())
        throw std::invalid_argument("build_report: scores/origin length mismatch");
    std::vector<double> id, fine, coarse;
    for (std::size_t i = 0; i < table.scores.size(); ++i) {
        switch (table.origin[i]) {
            case Origin::id_test: id.push_back(table.scores[i]); break;
            case Origin::fine_ood: fine.push_back(table.scores[i]); break;
            case Origin::coarse_ood: coarse.push_back(table.scores[i]); break;
        }
    }
    DetectionReport r;
    r.dataset = dataset;
    r.split_index = split_index;
    r.split_seed = split_seed;
    r.scorer = to_string(table.scorer);
    r.temperature = table.temperature;
    r.tpr_target = tpr_target;
    r.n_id = id.size();
    r.n_fine = fine.size();
    r.n_coarse = coarse.size();
    if (!id.empty() && !fine.empty()) {
        r.auroc_fine = auroc(id, fine);
        r.tnr95_fine = tnr_at_tpr(id, fine, tpr_target);
    }
    if (!id.empty() && !coarse.empty()) {
        r.auroc_coarse = auroc(id, coarse);
        r.tnr95_coarse = tnr_at_tpr(id, coarse, tpr_target);
    }
    if (!predicted.empty()) r.id_accuracy = accuracy(predicted, labels);
    return r;
}

namespace detail {

inline nlohmann::ordered_json opt_json(const std::optional<double>& v) {
    if (v) return *v;
    return nullptr;
}

inline std::optional<double> opt_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline std::string csv_num(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

} // namespace detail

inline nlohmann::ordered_json report_to_json(const DetectionReport& r) {
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["split_index"] = r.split_index;
    j["split_seed"] = r.split_seed;
    j["objective"] = r.objective;
    j["scorer"] = r.scorer;
    j["temperature"] = r.temperature;
    j["tnr95_coarse"] = detail::opt_json(r.tnr95_coarse);
    j["tnr95_fine"] = detail::opt_json(r.tnr95_fine);
    j["auroc_coarse"] = detail::opt_json(r.auroc_coarse);
    j["auroc_fine"] = detail::opt_json(r.auroc_fine);
    j["id_accuracy"] = detail::opt_json(r.id_accuracy);
    j["n_id"] = r.n_id;
    j["n_fine"] = r.n_fine;
    j["n_coarse"] = r.n_coarse;
    j["tpr_target"] = r.tpr_target;
    j["threshold_convention"] = r.threshold_convention;
    return j;
}

inline DetectionReport report_from_json(const nlohmann::json& j) {
    DetectionReport r;
    try {
        r.dataset = j.at("dataset").get<std::string>();
        r.split_index = j.at("split_index").get<int>();
        r.split_seed = j.at("split_seed").get<std::uint64_t>();
        r.objective = j.at("objective").get<std::string>();
        r.scorer = j.at("scorer").get<std::string>();
        r.temperature = j.at("temperature").get<double>();
        r.tnr95_coarse = detail::opt_from_json(j.at("tnr95_coarse"));
        r.tnr95_fine = detail::opt_from_json(j.at("tnr95_fine"));
        r.auroc_coarse = detail::opt_from_json(j.at("auroc_coarse"));
        r.auroc_fine = detail::opt_from_json(j.at("auroc_fine"));
        r.id_accuracy = detail::opt_from_json(j.at("id_accuracy"));
        r.n_id = j.at("n_id").get<std::size_t>();
        r.n_fine = j.at("n_fine").get<std::size_t>();
        r.n_coarse = j.at("n_coarse").get<std::size_t>();
        r.tpr_target = j.at("tpr_target").get<double>();
        r.threshold_convention = j.at("threshold_convention").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("detection report: ") + e.what());
    }
    return r;
}

// Flat row mirroring the coarse/fine pairing of the result tables.
inline std::string report_csv_header() {
    return "dataset,split_index,split_seed,objective,scorer,temperature,"
           "tnr95_coarse,tnr95_fine,auroc_coarse,auroc_fine,id_accuracy,"
           "n_id,n_fine,n_coarse,tpr_target,threshold_convention";
}

inline std::string report_csv_row(const DetectionReport& r) {
    char tmp[64];
    std::snprintf(tmp, sizeof tmp, "%.17g", r.temperature);
    std::string row = r.dataset + ',' + std::to_string(r.split_index) + ',' +
                      std::to_string(r.split_seed) + ',' + r.objective + ',' + r.scorer +
                      ',' + tmp;
    row += ',' + detail::csv_num(r.tnr95_coarse);
    row += ',' + detail::csv_num(r.tnr95_fine);
    row += ',' + detail::csv_num(r.auroc_coarse);
    row += ',' + detail::csv_num(r.auroc_fine);
    row += ',' + detail::csv_num(r.id_accuracy);
    row += ',' + std::to_string(r.n_id);
    row += ',' + std::to_string(r.n_fine);
    row += ',' + std::to_string(r.n_coarse);
    std::snprintf(tmp, sizeof tmp, "%.17g", r.tpr_target);
    row += std::string(",") + tmp;
    row += ',' + r.threshold_convention;
    return row;
}

} // namespace mixoe
