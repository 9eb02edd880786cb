#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mixoe/dataset.hpp"
#include "mixoe/metrics.hpp"
#include "mixoe/model.hpp"
#include "mixoe/objectives.hpp"
#include "mixoe/plot.hpp"
#include "mixoe/scoring.hpp"
#include "mixoe/trainer.hpp"

namespace mixoe {

struct Point2 {
    double x = 0.0, y = 0.0;
};

// Trained 2D bottleneck over frozen penultimate features. The classifier head
// exists only to train the map; projection uses the map alone.
struct VisProjector {
    Linear map;  // penultimate_dim -> 2
    Linear head; // 2 -> K
    int epochs = 0;
    double lr = 0.0;
    double final_train_accuracy = 0.0; // ID accuracy through the 2D bottleneck
    std::uint64_t backbone_hash = 0;   // backbone parameters when fitting finished
};

namespace detail {

inline Matrix penultimate_features(Model& model, const std::vector<Example>& examples) {
    Matrix feats(examples.size(), model.penultimate_dim());
    const std::size_t chunk = 256;
    for (std::size_t at = 0; at < examples.size(); at += chunk) {
        Batch b;
        for (std::size_t i = at; i < std::min(examples.size(), at + chunk); ++i)
            b.push(examples[i], -1);
        const Matrix f = model.penultimate(b);
        for (std::size_t r = 0; r < f.rows; ++r)
            std::copy(f.row(r), f.row(r) + f.cols, feats.row(at + r));
    }
    return feats;
}

} // namespace detail

// Trains map+head with CE on ID training data only; the backbone is never
// updated (its parameter hash is recorded for the freeze assertion).
inline VisProjector fit_vis_layer(Model& model, const std::vector<Example>& id_train,
                                  const LabelMap& labels, int epochs = 10, double lr = 0.001,
                                  std::uint64_t seed = 0) {
    if (model.penultimate_dim() == 0)
        throw std::invalid_argument("fit_vis_layer: zero-dimensional penultimate features");
    if (id_train.empty()) throw std::invalid_argument("fit_vis_layer: empty ID training set");
    if (epochs < 1) throw std::invalid_argument("fit_vis_layer: epochs must be >= 1");

    const std::size_t P = model.penultimate_dim();
    const std::size_t K = labels.size();
    const Matrix feats = detail::penultimate_features(model, id_train);
    std::vector<int> y(id_train.size());
    for (std::size_t i = 0; i < id_train.size(); ++i) {
        auto it = labels.find(id_train[i].class_id);
        if (it == labels.end())
            throw std::invalid_argument("fit_vis_layer: non-ID class " + id_train[i].class_id);
        y[i] = it->second;
    }

    VisProjector proj;
    proj.epochs = epochs;
    proj.lr = lr;
    proj.map = Linear(P, 2);
    proj.head = Linear(2, K);
    {
        Rng rng(mix_seed(seed, 0x001512));
        proj.map.init_he(rng);
        proj.head.init_he(rng);
    }

    const std::size_t n = id_train.size();
    const std::size_t batch = std::min<std::size_t>(32, n);
    const std::size_t steps = std::max<std::size_t>(1, n / batch);
    const double momentum = 0.9, weight_decay = 5e-4;
    std::vector<double> buf_mw(proj.map.w.size(), 0.0), buf_mb(proj.map.b.size(), 0.0);
    std::vector<double> buf_hw(proj.head.w.size(), 0.0), buf_hb(proj.head.b.size(), 0.0);

    const auto sgd = [&](std::vector<double>& p, std::vector<double>& g,
                         std::vector<double>& buf, double step_lr) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            buf[i] = momentum * buf[i] + g[i] + weight_decay * p[i];
            p[i] -= step_lr * buf[i];
            g[i] = 0.0;
        }
    };

    for (int epoch = 0; epoch < epochs; ++epoch) {
        const double step_lr = cosine_lr(lr, epoch, epochs);
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng rng(mix_seed(seed, 0x71500000ULL + static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        for (std::size_t s = 0; s < steps; ++s) {
            Matrix x(batch, P), targets(batch, K);
            for (std::size_t i = 0; i < batch; ++i) {
                const std::size_t idx = order[s * batch + i];
                std::copy(feats.row(idx), feats.row(idx) + P, x.row(i));
                targets.at(i, static_cast<std::size_t>(y[idx])) = 1.0;
            }
            const Matrix z = proj.map.apply(x);
            const Matrix logits = proj.head.apply(z);
            Matrix dlogits;
            cross_entropy_soft(logits, targets, &dlogits);
            const Matrix dz = proj.head.backward(z, dlogits);
            proj.map.backward(x, dz);
            sgd(proj.map.w, proj.map.gw, buf_mw, step_lr);
            sgd(proj.map.b, proj.map.gb, buf_mb, step_lr);
            sgd(proj.head.w, proj.head.gw, buf_hw, step_lr);
            sgd(proj.head.b, proj.head.gb, buf_hb, step_lr);
        }
    }

    std::vector<int> predicted(n), truth(y.begin(), y.end());
    const Matrix logits = proj.head.apply(proj.map.apply(feats));
    for (std::size_t r = 0; r < n; ++r) {
        const double* lr_row = logits.row(r);
        predicted[r] =
            static_cast<int>(std::max_element(lr_row, lr_row + logits.cols) - lr_row);
    }
    proj.final_train_accuracy = accuracy(predicted, truth);
    proj.backbone_hash = parameter_hash(model.parameters());
    return proj;
}

// Affine map of penultimate features into the plane; order-preserving.
inline std::vector<Point2> project(const VisProjector& proj, const Matrix& features) {
    if (features.cols != proj.map.in)
        throw std::invalid_argument("project: feature dimension mismatch");
    const Matrix z = proj.map.apply(features);
    std::vector<Point2> pts(z.rows);
    for (std::size_t r = 0; r < z.rows; ++r) pts[r] = {z.at(r, 0), z.at(r, 1)};
    return pts;
}

inline std::vector<Point2> project_examples(const VisProjector& proj, Model& model,
                                            const std::vector<Example>& examples) {
    return project(proj, detail::penultimate_features(model, examples));
}

// --- figures -------------------------------------------------------------------

struct TaggedPoint {
    Point2 p;
    std::string tag; // id | coarse_ood | fine_ood | outlier | mixed
    std::optional<double> confidence;
};

namespace detail {

inline Color tag_color(const std::string& tag) {
    if (tag == "id") return palette::id;
    if (tag == "coarse_ood") return palette::coarse;
    if (tag == "fine_ood") return palette::fine;
    if (tag == "outlier") return palette::outlier;
    if (tag == "mixed") return palette::mixed;
    throw std::invalid_argument("unknown point tag: " + tag);
}

inline std::string ppm_sibling(const std::string& svg_path) {
    const auto dot = svg_path.rfind('.');
    return (dot == std::string::npos ? svg_path : svg_path.substr(0, dot)) + ".ppm";
}

struct Bounds {
    double x0 = -1.0, x1 = 1.0, y0 = -1.0, y1 = 1.0;
};

inline Bounds point_bounds(const std::vector<TaggedPoint>& pts) {
    Bounds b;
    if (pts.empty()) return b;
    b.x0 = b.x1 = pts[0].p.x;
    b.y0 = b.y1 = pts[0].p.y;
    for (const auto& tp : pts) {
        b.x0 = std::min(b.x0, tp.p.x);
        b.x1 = std::max(b.x1, tp.p.x);
        b.y0 = std::min(b.y0, tp.p.y);
        b.y1 = std::max(b.y1, tp.p.y);
    }
    const double padx = 0.05 * std::max(1e-9, b.x1 - b.x0);
    const double pady = 0.05 * std::max(1e-9, b.y1 - b.y0);
    b.x0 -= padx;
    b.x1 += padx;
    b.y0 -= pady;
    b.y1 += pady;
    return b;
}

} // namespace detail

// Five-panel scatter (ID, coarse-OOD, fine-OOD, outliers, mixed) over shared
// axes; per-point confidence shades the color lightness where provided.
inline nlohmann::ordered_json emit_scatter(const std::vector<TaggedPoint>& points,
                                           const std::string& svg_path) {
    for (const auto& tp : points) (void)detail::tag_color(tp.tag);
    const std::vector<std::string> tags = {"id", "coarse_ood", "fine_ood", "outlier", "mixed"};
    const double panel_w = 220.0, panel_h = 220.0, margin = 28.0, top = 30.0;
    Canvas canvas(margin + tags.size() * (panel_w + margin), top + panel_h + 40.0);
    canvas.comment("scatter panels=id,coarse_ood,fine_ood,outlier,mixed");
    const detail::Bounds b = detail::point_bounds(points);

    nlohmann::ordered_json counts;
    for (std::size_t t = 0; t < tags.size(); ++t) {
        const double ox = margin + t * (panel_w + margin);
        canvas.rect(ox, top, panel_w, panel_h, Color{255, 255, 255}, true);
        canvas.text(ox + panel_w / 2.0, top - 8.0, tags[t], 12.0, palette::black, true);
        std::size_t n = 0;
        for (const auto& tp : points) {
            if (tp.tag != tags[t]) continue;
            ++n;
            const double px = ox + (tp.p.x - b.x0) / (b.x1 - b.x0) * panel_w;
            const double py = top + panel_h - (tp.p.y - b.y0) / (b.y1 - b.y0) * panel_h;
            const Color base = detail::tag_color(tp.tag);
            canvas.circle(px, py, 2.2,
                          tp.confidence ? shaded(base, *tp.confidence) : base);
        }
        counts[tags[t]] = n;
    }
    canvas.write_svg(svg_path);
    canvas.write_ppm(detail::ppm_sibling(svg_path));

    nlohmann::ordered_json entry;
    entry["figure"] = "scatter";
    entry["svg"] = svg_path;
    entry["ppm"] = detail::ppm_sibling(svg_path);
    entry["points"] = points.size();
    entry["per_tag"] = counts;
    return entry;
}

// Per-model confidence density curves (histogram-based, fixed binning recorded
// in the figure) with one panel per model and one curve per origin.
inline nlohmann::ordered_json emit_confidence_density(
    const std::vector<std::pair<std::string, ScoreTable>>& tables,
    const std::string& svg_path) {
    if (tables.empty()) throw std::invalid_argument("emit_confidence_density: no tables");
    for (const auto& [name, table] : tables)
        if (table.scorer != ScorerKind::msp)
            throw std::invalid_argument("emit_confidence_density: table '" + name +
                                        "' does not carry MSP scores");

    constexpr int kBins = 30;
    double lo = 0.0, hi = 1.0;
    bool any = false;
    for (const auto& [name, table] : tables)
        for (double s : table.scores) {
            if (!any) {
                lo = hi = s;
                any = true;
            }
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    if (!any) throw std::invalid_argument("emit_confidence_density: empty tables");
    if (hi - lo < 1e-9) {
        lo -= 0.05;
        hi += 0.05;
    }

    const double panel_w = 300.0, panel_h = 150.0, margin = 40.0, gap = 34.0;
    Canvas canvas(margin * 2 + panel_w,
                  margin + tables.size() * (panel_h + gap));
    char meta[96];
    std::snprintf(meta, sizeof meta, "density bins=%d range=[%.12g,%.12g]", kBins, lo, hi);
    canvas.comment(meta);

    const std::vector<std::pair<Origin, Color>> origins = {
        {Origin::id_test, palette::id},
        {Origin::fine_ood, palette::fine},
        {Origin::coarse_ood, palette::coarse},
    };

    for (std::size_t m = 0; m < tables.size(); ++m) {
        const double oy = margin + m * (panel_h + gap);
        canvas.rect(margin, oy, panel_w, panel_h, Color{255, 255, 255}, true);
        canvas.text(margin, oy - 6.0, tables[m].first, 12.0);
        for (const auto& [origin, color] : origins) {
            const std::vector<double> scores = tables[m].second.scores_of(origin);
            if (scores.empty()) continue;
            if (scores.size() == 1) {
                const double px = margin + (scores[0] - lo) / (hi - lo) * panel_w;
                canvas.line(px, oy, px, oy + panel_h, color, 1.5);
                continue;
            }
            std::vector<double> density(kBins, 0.0);
            const double width = (hi - lo) / kBins;
            for (double s : scores) {
                int bin = static_cast<int>((s - lo) / width);
                if (bin >= kBins) bin = kBins - 1;
                if (bin < 0) bin = 0;
                density[bin] += 1.0;
            }
            double dmax = 0.0;
            for (double& d : density) {
                d /= static_cast<double>(scores.size()) * width;
                dmax = std::max(dmax, d);
            }
            if (dmax <= 0.0) dmax = 1.0;
            std::vector<double> xs(kBins), ys(kBins);
            for (int i = 0; i < kBins; ++i) {
                xs[i] = margin + ((i + 0.5) * width) / (hi - lo) * panel_w;
                ys[i] = oy + panel_h - density[i] / dmax * (panel_h - 8.0);
            }
            canvas.polyline(xs, ys, color, 1.5);
        }
    }
    canvas.write_svg(svg_path);
    canvas.write_ppm(detail::ppm_sibling(svg_path));

    nlohmann::ordered_json entry;
    entry["figure"] = "confidence_density";
    entry["svg"] = svg_path;
    entry["ppm"] = detail::ppm_sibling(svg_path);
    entry["bins"] = kBins;
    entry["range"] = {lo, hi};
    nlohmann::ordered_json models = nlohmann::ordered_json::array();
    for (const auto& [name, _] : tables) models.push_back(name);
    entry["models"] = models;
    return entry;
}

// Grouped TNR95 bars, coarse-grained row on top and fine-grained row below,
// with a dashed gray baseline at the standard-model MSP value.
inline nlohmann::ordered_json emit_tnr_bars(const std::vector<DetectionReport>& reports,
                                            const std::string& svg_path) {
    if (reports.empty()) throw std::invalid_argument("emit_tnr_bars: no reports");

    const DetectionReport* baseline = nullptr;
    for (const auto& r : reports)
        if (r.objective == "standard" && r.scorer == "msp") {
            baseline = &r;
            break;
        }
    if (!baseline) baseline = &reports.front();

    const double bar_w = 46.0, bar_gap = 18.0, panel_h = 150.0, margin = 46.0, gap = 44.0;
    const double panel_w = reports.size() * (bar_w + bar_gap) + bar_gap;
    Canvas canvas(margin * 2 + panel_w, margin + 2 * (panel_h + gap));
    canvas.comment("tnr95 bars rows=coarse,fine baseline=" + baseline->objective + "/" +
                   baseline->scorer);

    const struct Row {
        const char* label;
        bool coarse;
    } rows[2] = {{"coarse-grained TNR95", true}, {"fine-grained TNR95", false}};

    for (int row = 0; row < 2; ++row) {
        const double oy = margin + row * (panel_h + gap);
        canvas.rect(margin, oy, panel_w, panel_h, Color{255, 255, 255}, true);
        canvas.text(margin, oy - 6.0, rows[row].label, 12.0);
        const auto value = [&](const DetectionReport& r) -> std::optional<double> {
            return rows[row].coarse ? r.tnr95_coarse : r.tnr95_fine;
        };
        for (std::size_t i = 0; i < reports.size(); ++i) {
            const double x = margin + bar_gap + i * (bar_w + bar_gap);
            const std::optional<double> v = value(reports[i]);
            if (v) {
                const double h = *v * (panel_h - 10.0);
                canvas.rect(x, oy + panel_h - h, bar_w, h, palette::id, true);
            }
            canvas.text(x + bar_w / 2.0, oy + panel_h + 14.0,
                        reports[i].objective + "/" + reports[i].scorer, 9.0, palette::black,
                        true);
        }
        if (const std::optional<double> bv = value(*baseline)) {
            const double by = oy + panel_h - *bv * (panel_h - 10.0);
            canvas.line(margin, by, margin + panel_w, by, palette::gray, 1.2, true);
        }
    }
    canvas.write_svg(svg_path);
    canvas.write_ppm(detail::ppm_sibling(svg_path));

    nlohmann::ordered_json entry;
    entry["figure"] = "tnr_bars";
    entry["svg"] = svg_path;
    entry["ppm"] = detail::ppm_sibling(svg_path);
    entry["methods"] = reports.size();
    entry["baseline"] = baseline->objective + "/" + baseline->scorer;
    return entry;
}

} // namespace mixoe
