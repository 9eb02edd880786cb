#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mixoe/metrics.hpp"
#include "mixoe/rng.hpp"
#include "mixoe/scoring.hpp"

using namespace mixoe;

namespace {

// Exhaustive pair-counting AUROC, independent of the production formula.
double auroc_oracle(const std::vector<double>& id, const std::vector<double>& ood) {
    double wins = 0.0;
    for (const double a : id)
        for (const double b : ood) {
            if (a > b) wins += 1.0;
            else if (a == b) wins += 0.5;
        }
    return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

// Exhaustive threshold sweep under the recorded convention
// "lower-quantile:ties-accept-id": candidate thresholds are the observed ID
// scores; keep those whose strictly-below ID count stays within the lower
// quantile position, pick the largest, then count OOD strictly below it.
double tnr_oracle(const std::vector<double>& id, const std::vector<double>& ood,
                  double tpr_target) {
    const double pos =
        static_cast<double>(id.size() - 1) * (1.0 - tpr_target);
    double best = 0.0;
    bool found = false;
    for (const double theta : id) {
        std::size_t n_below = 0;
        for (const double s : id) n_below += s < theta ? 1 : 0;
        if (static_cast<double>(n_below) <= pos && (!found || theta > best)) {
            best = theta;
            found = true;
        }
    }
    REQUIRE(found);
    std::size_t below = 0;
    for (const double s : ood) below += s < best ? 1 : 0;
    return static_cast<double>(below) / static_cast<double>(ood.size());
}

std::vector<double> random_scores(Rng& rng, std::size_t n, bool with_ties) {
    std::vector<double> v(n);
    for (auto& x : v) {
        x = rng.uniform();
        // collapse to a coarse grid so duplicate values are common
        if (with_ties) x = std::floor(x * 20.0) / 20.0;
    }
    return v;
}

} // namespace

TEST_CASE("auroc hand examples") {
    CHECK(auroc({2, 3}, {0, 1}) == 1.0);
    CHECK(auroc({5, 5}, {5, 5}) == 0.5);
    CHECK(auroc({0.9, 0.4, 0.8}, {0.5, 0.3}) == Catch::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK_THROWS_AS(auroc({}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(auroc({1.0}, {}), std::invalid_argument);
}

TEST_CASE("tnr_at_tpr hand examples") {
    std::vector<double> id(100);
    for (int i = 0; i < 100; ++i) id[i] = i + 1;

    CHECK(tpr_threshold(id, 0.95) == 5.0);
    CHECK(tnr_at_tpr(id, std::vector<double>(50, 0.0), 0.95) == 1.0);
    // ood identical to id: exactly the four scores 1..4 fall strictly below 5
    CHECK(tnr_at_tpr(id, id, 0.95) == Catch::Approx(0.04).epsilon(1e-12));
    // tpr=1 puts the threshold at the ID minimum
    CHECK(tpr_threshold(id, 1.0) == 1.0);
    CHECK(tnr_at_tpr(id, {0.0, 0.5, 2.0}, 1.0) == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS(tnr_at_tpr({}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(tnr_at_tpr(id, id, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(tnr_at_tpr(id, id, 1.5), std::invalid_argument);
}

TEST_CASE("auroc and tnr match exhaustive oracles on 100 random instances") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(200);
        const std::size_t m = 1 + rng.uniform_index(200);
        const bool ties = trial % 2 == 0;
        const auto id = random_scores(rng, n, ties);
        const auto ood = random_scores(rng, m, ties);

        CHECK(std::abs(auroc(id, ood) - auroc_oracle(id, ood)) <= 1e-12);
        for (const double target : {0.95, 0.5, 1.0})
            CHECK(std::abs(tnr_at_tpr(id, ood, target) - tnr_oracle(id, ood, target)) <=
                  1e-12);
    }
}

TEST_CASE("rank invariance under strictly increasing transforms") {
    Rng rng(99);
    const auto id = random_scores(rng, 80, true);
    const auto ood = random_scores(rng, 60, true);
    const double base_auroc = auroc(id, ood);
    const double base_tnr = tnr_at_tpr(id, ood, 0.95);

    const auto apply = [](const std::vector<double>& v, auto f) {
        std::vector<double> out(v.size());
        std::transform(v.begin(), v.end(), out.begin(), f);
        return out;
    };
    const auto exp_t = [](double x) { return std::exp(x); };
    const auto affine_t = [](double x) { return 3.0 * x + 11.0; };
    const auto cube_t = [](double x) { return x * x * x; };

    for (int which = 0; which < 3; ++which) {
        std::vector<double> tid, tood;
        if (which == 0) {
            tid = apply(id, exp_t);
            tood = apply(ood, exp_t);
        } else if (which == 1) {
            tid = apply(id, affine_t);
            tood = apply(ood, affine_t);
        } else {
            tid = apply(id, cube_t);
            tood = apply(ood, cube_t);
        }
        CHECK(auroc(tid, tood) == Catch::Approx(base_auroc).epsilon(1e-12));
        CHECK(tnr_at_tpr(tid, tood, 0.95) == Catch::Approx(base_tnr).epsilon(1e-12));
    }
}

TEST_CASE("adding a low OOD score never decreases AUROC or TNR95") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const auto id = random_scores(rng, 50, true);
        auto ood = random_scores(rng, 50, true);
        const double a0 = auroc(id, ood);
        const double t0 = tnr_at_tpr(id, ood, 0.95);
        const double low =
            *std::min_element(id.begin(), id.end()) - 1.0;
        ood.push_back(low);
        CHECK(auroc(id, ood) >= a0 - 1e-12);
        CHECK(tnr_at_tpr(id, ood, 0.95) >= t0 - 1e-12);
    }
}

TEST_CASE("accuracy basics") {
    CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(accuracy({1, 2, 3}, {0, 0, 0}) == 0.0);
    CHECK(accuracy({1, 0, 2, 2}, {1, 1, 2, 2}) == 0.75);
    CHECK_THROWS_AS(accuracy({1}, {1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
}

namespace {

ScoreTable synthetic_table(const std::vector<double>& id, const std::vector<double>& fine,
                           const std::vector<double>& coarse) {
    ScoreTable t;
    t.scorer = ScorerKind::msp;
    std::size_t n = 0;
    for (const double s : id) t.push("id/" + std::to_string(n++), Origin::id_test, s);
    for (const double s : fine) t.push("f/" + std::to_string(n++), Origin::fine_ood, s);
    for (const double s : coarse) t.push("c/" + std::to_string(n++), Origin::coarse_ood, s);
    return t;
}

} // namespace

TEST_CASE("build_report on a perfect scorer") {
    const auto t = synthetic_table({0.9, 0.95, 0.99}, {0.1, 0.2}, {0.05});
    const auto r = build_report(t, {0, 1}, {0, 1}, "toy", 1, 7);
    REQUIRE(r.auroc_fine.has_value());
    CHECK(*r.auroc_fine == 1.0);
    CHECK(*r.auroc_coarse == 1.0);
    CHECK(*r.tnr95_fine == 1.0);
    CHECK(*r.tnr95_coarse == 1.0);
    CHECK(*r.id_accuracy == 1.0);
    CHECK(r.n_id == 3);
    CHECK(r.n_fine == 2);
    CHECK(r.n_coarse == 1);
    CHECK(r.dataset == "toy");
    CHECK(r.threshold_convention == "lower-quantile:ties-accept-id");
}

TEST_CASE("build_report leaves missing origins unset") {
    const auto t = synthetic_table({0.9, 0.8}, {}, {0.1});
    const auto r = build_report(t, {}, {}, "toy", 2, 7);
    CHECK_FALSE(r.auroc_fine.has_value());
    CHECK_FALSE(r.tnr95_fine.has_value());
    CHECK(r.auroc_coarse.has_value());
    CHECK_FALSE(r.id_accuracy.has_value());
}

TEST_CASE("build_report at chance level") {
    Rng rng(1);
    std::vector<double> id(10000), fine(10000);
    for (auto& x : id) x = rng.uniform();
    for (auto& x : fine) x = rng.uniform();
    const auto t = synthetic_table(id, fine, {});
    const auto r = build_report(t, {0}, {0}, "toy", 1, 1);
    CHECK(std::abs(*r.auroc_fine - 0.5) < 0.02);
}

TEST_CASE("build_report matches independent recomputation") {
    Rng rng(55);
    const auto id = random_scores(rng, 120, true);
    const auto fine = random_scores(rng, 70, true);
    const auto coarse = random_scores(rng, 90, true);
    const auto t = synthetic_table(id, fine, coarse);
    const auto r = build_report(t, {1, 2, 1}, {1, 2, 2}, "toy", 3, 42);
    CHECK(*r.auroc_fine == Catch::Approx(auroc_oracle(id, fine)).epsilon(1e-12));
    CHECK(*r.auroc_coarse == Catch::Approx(auroc_oracle(id, coarse)).epsilon(1e-12));
    CHECK(*r.tnr95_fine == Catch::Approx(tnr_oracle(id, fine, 0.95)).epsilon(1e-12));
    CHECK(*r.tnr95_coarse == Catch::Approx(tnr_oracle(id, coarse, 0.95)).epsilon(1e-12));
    CHECK(*r.id_accuracy == Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.split_seed == 42);
}

TEST_CASE("report JSON round-trip preserves every field") {
    const auto t = synthetic_table({0.9, 0.8, 0.7}, {0.3}, {0.2, 0.1});
    auto r = build_report(t, {0, 1, 0}, {0, 1, 1}, "gratings", 2, 99);
    r.objective = "mixoe";
    const auto j = report_to_json(r);
    const auto back = report_from_json(j);
    CHECK(back.dataset == r.dataset);
    CHECK(back.split_index == r.split_index);
    CHECK(back.split_seed == r.split_seed);
    CHECK(back.scorer == r.scorer);
    CHECK(back.objective == r.objective);
    CHECK(back.temperature == r.temperature);
    CHECK(back.auroc_fine == r.auroc_fine);
    CHECK(back.auroc_coarse == r.auroc_coarse);
    CHECK(back.tnr95_fine == r.tnr95_fine);
    CHECK(back.tnr95_coarse == r.tnr95_coarse);
    CHECK(back.id_accuracy == r.id_accuracy);
    CHECK(back.n_id == r.n_id);
    CHECK(back.n_fine == r.n_fine);
    CHECK(back.n_coarse == r.n_coarse);
    CHECK(back.tpr_target == r.tpr_target);
    CHECK(back.threshold_convention == r.threshold_convention);
}

TEST_CASE("report CSV row parses back to the same numbers") {
    const auto t = synthetic_table({0.9, 0.8}, {}, {0.1});
    auto r = build_report(t, {0, 1}, {0, 1}, "toy", 1, 7);
    r.objective = "oe";
    const std::string header = report_csv_header();
    const std::string row = report_csv_row(r);
    CHECK(std::count(header.begin(), header.end(), ',') ==
          std::count(row.begin(), row.end(), ','));
    // unset metrics serialize as empty cells
    CHECK(row.find(",,") != std::string::npos);
    CHECK(row.find("lower-quantile:ties-accept-id") != std::string::npos);
}
