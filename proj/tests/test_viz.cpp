#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mixoe/errors.hpp"
#include "mixoe/toydata.hpp"
#include "mixoe/viz.hpp"

using namespace mixoe;

namespace {

std::filesystem::path fig_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "mixoe_viz_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

struct VizEnv {
    Dataset dataset;
    LabelMap labels;
    MlpModel model;

    VizEnv()
        : dataset([] {
              ToyConfig cfg;
              cfg.image_hw = 8;
              cfg.train_per_class = 6;
              cfg.test_per_class = 2;
              cfg.noise = 0.1;
              return make_blobs(4, cfg);
          }()),
          labels(make_label_map(dataset.classes)),
          model(MlpSpec{64, {16}, 6}, 17) {}
};

} // namespace

TEST_CASE("shaded lightness ramp") {
    const Color base = palette::id; // 31,119,180
    const Color full = shaded(base, 1.0);
    CHECK(full.r == base.r);
    CHECK(full.g == base.g);
    CHECK(full.b == base.b);

    const Color faint = shaded(base, 0.0);
    CHECK(faint.r == 221);
    CHECK(faint.g == 235);
    CHECK(faint.b == 244);

    const Color below = shaded(base, -5.0);
    CHECK(below.r == 255);
    CHECK(below.g == 255);
    CHECK(below.b == 255);
    const Color above = shaded(base, 7.0);
    CHECK(above.r == base.r);

    CHECK(base.hex() == "#1f77b4");
}

TEST_CASE("canvas SVG output") {
    Canvas c(100, 50);
    c.comment("alpha & <beta>");
    c.rect(10, 10, 20, 10, palette::fine, true);
    c.circle(50, 25, 3, palette::id);
    c.line(0, 0, 100, 50, palette::gray, 1.5, true);
    c.polyline({1, 2, 3}, {4, 5, 6}, palette::coarse, 2.0);
    c.text(5, 45, "a<b", 9.0, palette::black, true);

    const std::string svg = c.to_svg();
    CHECK(svg.rfind("<?xml version=\"1.0\" encoding=\"UTF-8\"?>", 0) == 0);
    CHECK(svg.find("viewBox=\"0 0 100.00 50.00\"") != std::string::npos);
    CHECK(svg.find("<!-- alpha &amp; &lt;beta&gt; -->") != std::string::npos);
    CHECK(svg.find("stroke-dasharray=\"4 3\"") != std::string::npos);
    CHECK(svg.find("text-anchor=\"middle\"") != std::string::npos);
    CHECK(svg.find(">a&lt;b</text>") != std::string::npos);
    CHECK(svg.find("<polyline points=\"1.00,4.00 2.00,5.00 3.00,6.00\"") != std::string::npos);

    // byte determinism of the render
    CHECK(c.to_svg() == svg);

    CHECK_THROWS_AS(c.polyline({}, {}, palette::id), std::invalid_argument);
    CHECK_THROWS_AS(c.polyline({1, 2}, {1}, palette::id), std::invalid_argument);
    CHECK_THROWS_AS(c.write_svg("/no/such/dir/fig.svg"), IoError);
}

TEST_CASE("canvas PPM raster") {
    const auto path = fig_dir() / "raster.ppm";
    Canvas c(20, 10);
    c.rect(0, 0, 20, 10, Color{255, 255, 255});
    c.rect(2, 2, 4, 3, palette::fine);
    c.circle(-1, -1, 1.0, palette::id); // clipped, must not crash
    c.write_ppm(path.string());

    const std::string raw = slurp(path);
    const std::string header = "P6\n20 10\n255\n";
    REQUIRE(raw.rfind(header, 0) == 0);
    CHECK(raw.size() == header.size() + 20 * 10 * 3);
    // pixel (3,3) sits inside the red rectangle
    const std::size_t at = header.size() + (3 * 20 + 3) * 3;
    CHECK(static_cast<unsigned char>(raw[at]) == palette::fine.r);
    CHECK(static_cast<unsigned char>(raw[at + 1]) == palette::fine.g);
    CHECK(static_cast<unsigned char>(raw[at + 2]) == palette::fine.b);
}

TEST_CASE("fit_vis_layer freezes the backbone") {
    VizEnv env;
    const std::vector<double> before = env.model.parameters();
    const std::uint64_t hash_before = parameter_hash(before);

    const VisProjector proj = fit_vis_layer(env.model, env.dataset.train, env.labels, 6, 0.01, 3);
    CHECK(env.model.parameters() == before);
    CHECK(proj.backbone_hash == hash_before);
    CHECK(proj.epochs == 6);
    CHECK(proj.lr == 0.01);
    CHECK(proj.map.in == 16);
    CHECK(proj.map.out == 2);
    CHECK(proj.head.in == 2);
    CHECK(proj.head.out == 6);
    CHECK(proj.final_train_accuracy >= 0.0);
    CHECK(proj.final_train_accuracy <= 1.0);

    SECTION("deterministic in the seed") {
        const VisProjector again =
            fit_vis_layer(env.model, env.dataset.train, env.labels, 6, 0.01, 3);
        CHECK(again.map.w == proj.map.w);
        CHECK(again.map.b == proj.map.b);
        CHECK(again.head.w == proj.head.w);
        const VisProjector other =
            fit_vis_layer(env.model, env.dataset.train, env.labels, 6, 0.01, 4);
        CHECK(other.map.w != proj.map.w);
    }
    SECTION("argument validation") {
        CHECK_THROWS_AS(fit_vis_layer(env.model, {}, env.labels, 6, 0.01, 3),
                        std::invalid_argument);
        CHECK_THROWS_AS(fit_vis_layer(env.model, env.dataset.train, env.labels, 0, 0.01, 3),
                        std::invalid_argument);
        std::vector<Example> ghost = {env.dataset.train[0]};
        ghost[0].class_id = "phantom";
        CHECK_THROWS_AS(fit_vis_layer(env.model, ghost, env.labels, 6, 0.01, 3),
                        std::invalid_argument);
    }
}

TEST_CASE("projection is affine and order-preserving") {
    VizEnv env;
    const VisProjector proj = fit_vis_layer(env.model, env.dataset.train, env.labels, 4, 0.01, 5);

    const std::size_t P = env.model.penultimate_dim();
    REQUIRE(P == 16);
    Rng rng(99);
    Matrix f(2, P);
    for (std::size_t i = 0; i < P; ++i) {
        f.at(0, i) = rng.uniform() * 2.0 - 1.0;
        f.at(1, i) = rng.uniform() * 2.0 - 1.0;
    }

    SECTION("convex combinations map onto the segment") {
        for (double lam : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            Matrix mixed(1, P);
            for (std::size_t i = 0; i < P; ++i)
                mixed.at(0, i) = lam * f.at(0, i) + (1.0 - lam) * f.at(1, i);
            const std::vector<Point2> ends = project(proj, f);
            const std::vector<Point2> mid = project(proj, mixed);
            CHECK(mid[0].x ==
                  Catch::Approx(lam * ends[0].x + (1.0 - lam) * ends[1].x).margin(1e-12));
            CHECK(mid[0].y ==
                  Catch::Approx(lam * ends[0].y + (1.0 - lam) * ends[1].y).margin(1e-12));
        }
    }
    SECTION("project_examples matches manual per-example projection") {
        std::vector<Example> subset(env.dataset.test.begin(), env.dataset.test.begin() + 5);
        const std::vector<Point2> pts = project_examples(proj, env.model, subset);
        REQUIRE(pts.size() == 5);
        for (std::size_t i = 0; i < subset.size(); ++i) {
            Batch b;
            b.push(subset[i], -1);
            const Matrix feat = env.model.penultimate(b);
            const std::vector<Point2> one = project(proj, feat);
            CHECK(pts[i].x == one[0].x);
            CHECK(pts[i].y == one[0].y);
        }
    }
    SECTION("dimension mismatch rejected") {
        Matrix wrong(1, P + 1);
        CHECK_THROWS_AS(project(proj, wrong), std::invalid_argument);
    }
}

TEST_CASE("2D bottleneck separates an easy task") {
    ToyConfig cfg;
    cfg.image_hw = 8;
    cfg.train_per_class = 20;
    cfg.test_per_class = 10;
    cfg.noise = 0.08;
    const Dataset blobs = make_blobs(6, cfg);
    EnvironmentSpec spec;
    spec.dataset_name = "blobs";
    spec.id_classes = {blobs.classes[0], blobs.classes[1], blobs.classes[2]};
    const DataPartition part = partition_id_data(blobs, spec, 0.2, 21);
    const LabelMap labels = make_label_map(spec.id_classes);

    MlpModel model(MlpSpec{64, {16}, 3}, 21);
    TrainConfig tc = make_standard_config(21, 10);
    tc.optimizer.lr = 0.05;
    tc.id_batch_size = 16;
    train_standard(model, part, labels, tc);

    const VisProjector proj = fit_vis_layer(model, part.train, labels, 40, 0.05, 8);

    std::vector<int> predicted, truth;
    for (const Example& ex : part.test) {
        Batch b;
        b.push(ex, -1);
        const Matrix z = proj.map.apply(model.penultimate(b));
        const Matrix logits = proj.head.apply(z);
        const double* row = logits.row(0);
        predicted.push_back(
            static_cast<int>(std::max_element(row, row + logits.cols) - row));
        truth.push_back(labels.at(ex.class_id));
    }
    CHECK(accuracy(predicted, truth) >= 0.9);

    // projected training points stay 1-NN separable in the plane
    const std::vector<Point2> pts = project_examples(proj, model, part.train);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double best = 0.0;
        std::size_t arg = i;
        for (std::size_t j = 0; j < pts.size(); ++j) {
            if (j == i) continue;
            const double dx = pts[i].x - pts[j].x, dy = pts[i].y - pts[j].y;
            const double d = dx * dx + dy * dy;
            if (arg == i || d < best) {
                best = d;
                arg = j;
            }
        }
        if (part.train[arg].class_id == part.train[i].class_id) ++hits;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(pts.size()) >= 0.85);
}

TEST_CASE("emit_scatter") {
    const auto svg_path = (fig_dir() / "scatter.svg").string();
    std::vector<TaggedPoint> pts;
    pts.push_back({{0.0, 0.0}, "id", 1.0});
    pts.push_back({{1.0, 1.0}, "id", 0.0});
    pts.push_back({{0.5, -0.5}, "id", std::nullopt});
    pts.push_back({{-1.0, 0.5}, "outlier", std::nullopt});
    pts.push_back({{0.2, 0.8}, "outlier", 0.5});
    pts.push_back({{0.0, 1.0}, "mixed", std::nullopt});

    const auto entry = emit_scatter(pts, svg_path);
    CHECK(entry.at("figure") == "scatter");
    CHECK(entry.at("svg") == svg_path);
    CHECK(entry.at("ppm") == (fig_dir() / "scatter.ppm").string());
    CHECK(entry.at("points") == 6);
    CHECK(entry.at("per_tag").at("id") == 3);
    CHECK(entry.at("per_tag").at("outlier") == 2);
    CHECK(entry.at("per_tag").at("mixed") == 1);
    CHECK(entry.at("per_tag").at("fine_ood") == 0);
    CHECK(entry.at("per_tag").at("coarse_ood") == 0);

    const std::string svg = slurp(svg_path);
    CHECK(svg.find("<!-- scatter panels=id,coarse_ood,fine_ood,outlier,mixed -->") !=
          std::string::npos);
    CHECK(svg.find("#1f77b4") != std::string::npos); // unshaded id point
    CHECK(svg.find("#ddebf4") != std::string::npos); // confidence-0 id point
    const std::string ppm = slurp(fig_dir() / "scatter.ppm");
    CHECK(ppm.rfind("P6\n1268 290\n255\n", 0) == 0);

    SECTION("byte-deterministic re-render") {
        const auto again = (fig_dir() / "scatter2.svg").string();
        emit_scatter(pts, again);
        CHECK(slurp(again) == svg);
    }
    SECTION("unknown tag rejected") {
        std::vector<TaggedPoint> bad = {{{0, 0}, "mystery", std::nullopt}};
        CHECK_THROWS_AS(emit_scatter(bad, (fig_dir() / "bad.svg").string()),
                        std::invalid_argument);
    }
    SECTION("no points still renders the frame") {
        const auto empty = (fig_dir() / "empty.svg").string();
        const auto e = emit_scatter({}, empty);
        CHECK(e.at("points") == 0);
        CHECK(slurp(empty).find("<svg") != std::string::npos);
    }
}

TEST_CASE("emit_confidence_density") {
    ScoreTable a;
    a.scorer = ScorerKind::msp;
    a.push("i1", Origin::id_test, 0.95);
    a.push("i2", Origin::id_test, 0.9);
    a.push("i3", Origin::id_test, 0.85);
    a.push("f1", Origin::fine_ood, 0.6);
    a.push("f2", Origin::fine_ood, 0.55);
    a.push("c1", Origin::coarse_ood, 0.4);
    ScoreTable b = a;
    b.scores[0] = 0.99;

    const auto svg_path = (fig_dir() / "density.svg").string();
    const auto entry = emit_confidence_density({{"standard", a}, {"mixoe", b}}, svg_path);
    CHECK(entry.at("figure") == "confidence_density");
    CHECK(entry.at("bins") == 30);
    CHECK(entry.at("range").at(0) == 0.4);
    CHECK(entry.at("range").at(1) == 0.99);
    REQUIRE(entry.at("models").size() == 2);
    CHECK(entry.at("models").at(0) == "standard");
    CHECK(entry.at("models").at(1) == "mixoe");

    const std::string svg = slurp(svg_path);
    CHECK(svg.find("density bins=30 range=[0.4,0.99]") != std::string::npos);
    CHECK(svg.find(">standard</text>") != std::string::npos);
    CHECK(svg.find(">mixoe</text>") != std::string::npos);

    SECTION("single-score origins draw a tick instead of a curve") {
        ScoreTable solo;
        solo.scorer = ScorerKind::msp;
        solo.push("i1", Origin::id_test, 0.8);
        solo.push("f1", Origin::fine_ood, 0.3);
        CHECK_NOTHROW(
            emit_confidence_density({{"solo", solo}}, (fig_dir() / "solo.svg").string()));
    }
    SECTION("rejects non-MSP tables and empty input") {
        ScoreTable energy = a;
        energy.scorer = ScorerKind::energy;
        CHECK_THROWS_AS(
            emit_confidence_density({{"e", energy}}, (fig_dir() / "x.svg").string()),
            std::invalid_argument);
        CHECK_THROWS_AS(emit_confidence_density({}, (fig_dir() / "x.svg").string()),
                        std::invalid_argument);
        ScoreTable hollow;
        hollow.scorer = ScorerKind::msp;
        CHECK_THROWS_AS(
            emit_confidence_density({{"h", hollow}}, (fig_dir() / "x.svg").string()),
            std::invalid_argument);
    }
}

TEST_CASE("emit_tnr_bars") {
    DetectionReport standard;
    standard.objective = "standard";
    standard.scorer = "msp";
    standard.tnr95_coarse = 0.8;
    standard.tnr95_fine = 0.3;
    DetectionReport mixoe_r;
    mixoe_r.objective = "mixoe";
    mixoe_r.scorer = "msp";
    mixoe_r.tnr95_coarse = 0.9;
    mixoe_r.tnr95_fine = 0.5;

    const auto svg_path = (fig_dir() / "bars.svg").string();
    const auto entry = emit_tnr_bars({mixoe_r, standard}, svg_path);
    CHECK(entry.at("figure") == "tnr_bars");
    CHECK(entry.at("methods") == 2);
    CHECK(entry.at("baseline") == "standard/msp");

    const std::string svg = slurp(svg_path);
    CHECK(svg.find("tnr95 bars rows=coarse,fine baseline=standard/msp") != std::string::npos);
    CHECK(svg.find(">mixoe/msp</text>") != std::string::npos);
    CHECK(svg.find("stroke-dasharray") != std::string::npos); // baseline rule is dashed

    SECTION("without a standard/msp report the first entry anchors the baseline") {
        const auto e = emit_tnr_bars({mixoe_r}, (fig_dir() / "bars2.svg").string());
        CHECK(e.at("baseline") == "mixoe/msp");
    }
    SECTION("missing TNR values are skipped") {
        DetectionReport sparse;
        sparse.objective = "oe";
        sparse.scorer = "msp";
        sparse.tnr95_coarse = 0.7; // fine-grained value absent
        CHECK_NOTHROW(emit_tnr_bars({sparse}, (fig_dir() / "bars3.svg").string()));
    }
    SECTION("empty report list rejected") {
        CHECK_THROWS_AS(emit_tnr_bars({}, (fig_dir() / "bars4.svg").string()),
                        std::invalid_argument);
    }
}
