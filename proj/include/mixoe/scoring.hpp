#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixoe/errors.hpp"

namespace mixoe {

// Post-hoc detection scores computed from a trained model's logits.
// All scorers are oriented "higher = more ID" so a single threshold
// convention serves every scorer downstream.

enum class Origin { id_test, fine_ood, coarse_ood };
enum class ScorerKind { msp, odin, energy };

inline std::string to_string(Origin o) {
    switch (o) {
        case Origin::id_test: return "id_test";
        case Origin::fine_ood: return "fine_ood";
        case Origin::coarse_ood: return "coarse_ood";
    }
    return "?";
}

inline Origin origin_from_string(const std::string& s) {
    if (s == "id_test") return Origin::id_test;
    if (s == "fine_ood") return Origin::fine_ood;
    if (s == "coarse_ood") return Origin::coarse_ood;
    throw std::invalid_argument("unknown origin: " + s);
}

inline std::string to_string(ScorerKind k) {
    switch (k) {
        case ScorerKind::msp: return "msp";
        case ScorerKind::odin: return "odin";
        case ScorerKind::energy: return "energy";
    }
    return "?";
}

inline ScorerKind scorer_from_string(const std::string& s) {
    if (s == "msp") return ScorerKind::msp;
    if (s == "odin") return ScorerKind::odin;
    if (s == "energy") return ScorerKind::energy;
    throw std::invalid_argument("unknown scorer: " + s);
}

namespace detail {
inline void check_finite(const std::vector<double>& logits, const char* who) {
    if (logits.empty()) throw std::invalid_argument(std::string(who) + ": empty logits");
    for (double x : logits)
        if (!std::isfinite(x))
            throw std::invalid_argument(std::string(who) + ": non-finite logit");
}
} // namespace detail

// log(sum_k exp(x_k)) with max-subtraction so logits up to ~1e4 in magnitude
// stay finite.
inline double logsumexp(const std::vector<double>& x) {
    double m = x[0];
    for (double v : x) m = std::max(m, v);
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

// Maximum softmax probability.
inline double score_msp(const std::vector<double>& logits) {
    detail::check_finite(logits, "score_msp");
    const double lse = logsumexp(logits);
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    return std::exp(m - lse);
}

// MSP on temperature-scaled logits. No input preprocessing: detection runs on
// the logits as given.
inline double score_odin(const std::vector<double>& logits, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("score_odin: tau must be > 0");
    detail::check_finite(logits, "score_odin");
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / tau;
    return score_msp(scaled);
}

// Negated free energy tau * log sum_k exp(logit_k / tau); higher = more ID,
// consistent with the other scorers.
inline double score_energy(const std::vector<double>& logits, double tau = 1.0) {
    if (!(tau > 0.0)) throw std::invalid_argument("score_energy: tau must be > 0");
    detail::check_finite(logits, "score_energy");
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / tau;
    return tau * logsumexp(scaled);
}

// Per-example scores tagged by origin, the unit the metrics and plots consume.
struct ScoreTable {
    std::vector<double> scores;
    std::vector<Origin> origin;
    std::vector<std::string> ids; // parallel example ids for serialization
    ScorerKind scorer = ScorerKind::msp;
    double temperature = 1.0;

    std::size_t size() const { return scores.size(); }

    void push(const std::string& id, Origin o, double s) {
        ids.push_back(id);
        origin.push_back(o);
        scores.push_back(s);
    }

    std::vector<double> scores_of(Origin o) const {
        std::vector<double> out;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (origin[i] == o) out.push_back(scores[i]);
        return out;
    }
};

// Columnar text serialization: one header comment with scorer identity, then
// example_id,origin,scorer,score rows.
inline void save_score_table(const ScoreTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write score table: " + path);
    out << "# scorer=" << to_string(t.scorer) << " temperature=" << t.temperature << "\n";
    out << "example_id,origin,scorer,score\n";
    char buf[64];
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", t.scores[i]);
        out << t.ids[i] << ',' << to_string(t.origin[i]) << ','
            << to_string(t.scorer) << ',' << buf << "\n";
    }
    if (!out) throw IoError("error while writing score table: " + path);
}

inline ScoreTable load_score_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read score table: " + path);
    ScoreTable t;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto sp = line.find("scorer=");
            const auto tp = line.find("temperature=");
            if (sp != std::string::npos) {
                std::string s = line.substr(sp + 7);
                t.scorer = scorer_from_string(s.substr(0, s.find(' ')));
            }
            if (tp != std::string::npos) t.temperature = std::stod(line.substr(tp + 12));
            continue;
        }
        if (line.rfind("example_id", 0) == 0) continue;
        std::istringstream ss(line);
        std::string id, origin, scorer, score;
        if (!std::getline(ss, id, ',') || !std::getline(ss, origin, ',') ||
            !std::getline(ss, scorer, ',') || !std::getline(ss, score, ','))
            throw DataError("malformed score row in " + path + ": " + line);
        t.push(id, origin_from_string(origin), std::stod(score));
    }
    return t;
}

} // namespace mixoe
