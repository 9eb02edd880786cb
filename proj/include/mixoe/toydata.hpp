#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <functional>

#include "mixoe/dataset.hpp"
#include "mixoe/rng.hpp"
#include "mixoe/splits.hpp"
#include "mixoe/tensor.hpp"

namespace mixoe {

// Procedural desk-scale imagery, all single-channel HxW in [0,1]. Every
// example is generated from a generator keyed by its identity string, so a
// dataset is byte-identical no matter in which order or how often it is built.
//
// Families:
//   gratings  - oriented sinusoids on a 7 orientation x 4 frequency grid
//               (28 visually similar classes; the fine-grained ID task)
//   blobs     - Gaussian bumps, 6 classes by position/size
//   checkers  - checkerboards, 6 classes by cell size/parity
//   rings     - annuli, 4 classes by radius
//   textures  - the unlabeled-by-convention outlier pool, 8 concepts with
//               source labels kept for concept filtering

struct ToyConfig {
    std::size_t image_hw = 8;
    std::size_t train_per_class = 40;
    std::size_t test_per_class = 20;
    double noise = 0.06;
};

namespace toy {

constexpr std::size_t kGratingOrientations = 7;
constexpr std::size_t kGratingFrequencies = 4;

inline double clip01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Centered pixel coordinate in [-0.5, 0.5).
inline double coord(std::size_t i, std::size_t n) {
    return (static_cast<double>(i) + 0.5) / static_cast<double>(n) - 0.5;
}

inline Tensor render(std::size_t hw, Rng& rng, double noise,
                     const std::function<double(double, double)>& field) {
    Tensor t = Tensor::zeros({hw, hw});
    for (std::size_t y = 0; y < hw; ++y)
        for (std::size_t x = 0; x < hw; ++x) {
            double v = field(coord(x, hw), coord(y, hw));
            if (noise > 0.0) v += noise * rng.normal();
            t.v[y * hw + x] = clip01(v);
        }
    return t;
}

inline Tensor grating_image(std::size_t hw, Rng& rng, double noise, double theta,
                            double cycles) {
    const double phase = rng.uniform() * 2.0 * M_PI;
    const double kx = std::cos(theta), ky = std::sin(theta);
    return render(hw, rng, noise, [&](double u, double v) {
        return 0.5 + 0.45 * std::sin(2.0 * M_PI * cycles * (u * kx + v * ky) + phase);
    });
}

inline Tensor blob_image(std::size_t hw, Rng& rng, double noise, double cx, double cy,
                         double sigma) {
    const double jx = cx + (rng.uniform() - 0.5) * 0.08;
    const double jy = cy + (rng.uniform() - 0.5) * 0.08;
    return render(hw, rng, noise, [&](double u, double v) {
        const double d2 = (u - jx) * (u - jx) + (v - jy) * (v - jy);
        return 0.1 + 0.85 * std::exp(-d2 / (2.0 * sigma * sigma));
    });
}

inline Tensor checker_image(std::size_t hw, Rng& rng, double noise, std::size_t cell,
                            int parity) {
    return render(hw, rng, noise, [&](double u, double v) {
        const auto xi = static_cast<long>(std::floor((u + 0.5) * static_cast<double>(hw)));
        const auto yi = static_cast<long>(std::floor((v + 0.5) * static_cast<double>(hw)));
        const long c = static_cast<long>(cell);
        const bool on = ((xi / c + yi / c + parity) % 2) != 0;
        return on ? 0.85 : 0.15;
    });
}

inline Tensor ring_image(std::size_t hw, Rng& rng, double noise, double radius) {
    const double r = radius + (rng.uniform() - 0.5) * 0.04;
    return render(hw, rng, noise, [&](double u, double v) {
        const double d = std::sqrt(u * u + v * v);
        const double w = 0.055;
        return 0.1 + 0.85 * std::exp(-(d - r) * (d - r) / (2.0 * w * w));
    });
}

inline Rng example_rng(std::uint64_t seed, const std::string& identity) {
    return Rng(mix_seed(seed, fnv1a(identity)));
}

} // namespace toy

inline std::vector<std::string> grating_class_names() {
    std::vector<std::string> names;
    for (std::size_t o = 0; o < toy::kGratingOrientations; ++o)
        for (std::size_t f = 0; f < toy::kGratingFrequencies; ++f)
            names.push_back("ori" + std::to_string(o) + "_freq" + std::to_string(f));
    return names;
}

inline Dataset make_gratings(std::uint64_t seed, const ToyConfig& cfg = {}) {
    Dataset ds;
    ds.name = "gratings";
    ds.classes = grating_class_names();
    std::size_t ci = 0;
    for (std::size_t o = 0; o < toy::kGratingOrientations; ++o)
        for (std::size_t f = 0; f < toy::kGratingFrequencies; ++f, ++ci) {
            const double theta =
                static_cast<double>(o) * M_PI / static_cast<double>(toy::kGratingOrientations);
            const double cycles = 1.0 + 0.6 * static_cast<double>(f);
            for (int portion = 0; portion < 2; ++portion) {
                const bool is_test = portion == 1;
                const std::size_t n = is_test ? cfg.test_per_class : cfg.train_per_class;
                for (std::size_t i = 0; i < n; ++i) {
                    Example ex;
                    ex.class_id = ds.classes[ci];
                    ex.source = ds.name;
                    ex.id = ds.name + "/" + (is_test ? "test" : "train") + "/" + ex.class_id +
                            "/" + std::to_string(i);
                    Rng rng = toy::example_rng(seed, ex.id);
                    ex.input = toy::grating_image(cfg.image_hw, rng, cfg.noise, theta, cycles);
                    (is_test ? ds.test : ds.train).push_back(std::move(ex));
                }
            }
        }
    return ds;
}

namespace toy {

struct BlobClass {
    double cx, cy, sigma;
};
inline const std::vector<BlobClass>& blob_classes() {
    static const std::vector<BlobClass> k = {
        {-0.22, -0.22, 0.12}, {0.22, -0.22, 0.12}, {-0.22, 0.22, 0.12},
        {0.22, 0.22, 0.12},   {0.0, 0.0, 0.08},    {0.0, 0.0, 0.19},
    };
    return k;
}

struct CheckerClass {
    std::size_t cell;
    int parity;
};
inline const std::vector<CheckerClass>& checker_classes() {
    static const std::vector<CheckerClass> k = {{1, 0}, {1, 1}, {2, 0}, {2, 1}, {4, 0}, {4, 1}};
    return k;
}

inline const std::vector<double>& ring_radii() {
    static const std::vector<double> k = {0.12, 0.20, 0.28, 0.36};
    return k;
}

template <class MakeImage>
Dataset make_family(const std::string& name, const std::vector<std::string>& classes,
                    std::uint64_t seed, const ToyConfig& cfg, MakeImage make_image) {
    Dataset ds;
    ds.name = name;
    ds.classes = classes;
    for (std::size_t ci = 0; ci < classes.size(); ++ci)
        for (int portion = 0; portion < 2; ++portion) {
            const bool is_test = portion == 1;
            const std::size_t n = is_test ? cfg.test_per_class : cfg.train_per_class;
            for (std::size_t i = 0; i < n; ++i) {
                Example ex;
                ex.class_id = classes[ci];
                ex.source = name;
                ex.id = name + "/" + (is_test ? "test" : "train") + "/" + ex.class_id + "/" +
                        std::to_string(i);
                Rng rng = example_rng(seed, ex.id);
                ex.input = make_image(ci, rng);
                (is_test ? ds.test : ds.train).push_back(std::move(ex));
            }
        }
    return ds;
}

} // namespace toy

// Class lists without rendering any images.
inline std::vector<std::string> toy_class_names(const std::string& name) {
    if (name == "gratings") return grating_class_names();
    std::vector<std::string> out;
    if (name == "blobs") {
        for (std::size_t i = 0; i < toy::blob_classes().size(); ++i)
            out.push_back("blob" + std::to_string(i));
        return out;
    }
    if (name == "checkers") {
        for (std::size_t i = 0; i < toy::checker_classes().size(); ++i)
            out.push_back("checker" + std::to_string(i));
        return out;
    }
    if (name == "rings") {
        for (std::size_t i = 0; i < toy::ring_radii().size(); ++i)
            out.push_back("ring" + std::to_string(i));
        return out;
    }
    throw std::invalid_argument("unknown toy dataset: " + name);
}

inline Dataset make_blobs(std::uint64_t seed, const ToyConfig& cfg = {}) {
    const std::vector<std::string> classes = toy_class_names("blobs");
    return toy::make_family("blobs", classes, seed, cfg, [&](std::size_t ci, Rng& rng) {
        const auto& b = toy::blob_classes()[ci];
        return toy::blob_image(cfg.image_hw, rng, cfg.noise, b.cx, b.cy, b.sigma);
    });
}

inline Dataset make_checkers(std::uint64_t seed, const ToyConfig& cfg = {}) {
    const std::vector<std::string> classes = toy_class_names("checkers");
    return toy::make_family("checkers", classes, seed, cfg, [&](std::size_t ci, Rng& rng) {
        const auto& c = toy::checker_classes()[ci];
        return toy::checker_image(cfg.image_hw, rng, cfg.noise, c.cell, c.parity);
    });
}

inline Dataset make_rings(std::uint64_t seed, const ToyConfig& cfg = {}) {
    const std::vector<std::string> classes = toy_class_names("rings");
    return toy::make_family("rings", classes, seed, cfg, [&](std::size_t ci, Rng& rng) {
        return toy::ring_image(cfg.image_hw, rng, cfg.noise, toy::ring_radii()[ci]);
    });
}

inline Dataset make_toy_dataset(const std::string& name, std::uint64_t seed,
                                const ToyConfig& cfg = {}) {
    if (name == "gratings") return make_gratings(seed, cfg);
    if (name == "blobs") return make_blobs(seed, cfg);
    if (name == "checkers") return make_checkers(seed, cfg);
    if (name == "rings") return make_rings(seed, cfg);
    throw std::invalid_argument("unknown toy dataset: " + name);
}

inline std::vector<std::string> toy_dataset_names() {
    return {"gratings", "blobs", "checkers", "rings"};
}


// --- outlier pool -------------------------------------------------------------

inline std::vector<std::string> texture_concepts() {
    return {"stripes", "spots", "grid", "annuli", "noise", "ramp", "corner", "cross"};
}

// Concepts visually related to each dataset family. Filtering an environment's
// outlier pool removes the concepts of the ID dataset and of every coarse-OOD
// source, so nothing resembling evaluation data can leak into training.
inline std::vector<std::string> related_concepts(const std::string& dataset_name) {
    static const std::map<std::string, std::vector<std::string>> k = {
        {"gratings", {"stripes"}},
        {"blobs", {"spots"}},
        {"checkers", {"grid"}},
        {"rings", {"annuli"}},
    };
    auto it = k.find(dataset_name);
    if (it == k.end()) throw std::invalid_argument("unknown toy dataset: " + dataset_name);
    return it->second;
}

inline std::vector<std::string> forbidden_concepts_for(const EnvironmentSpec& spec) {
    std::vector<std::string> out = related_concepts(spec.dataset_name);
    for (const auto& src : spec.coarse_ood_sources)
        for (const auto& c : related_concepts(src))
            if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    return out;
}

namespace toy {

inline Tensor texture_image(const std::string& concept_name, std::size_t hw, Rng& rng,
                            double noise) {
    if (concept_name == "stripes") {
        const double theta = rng.uniform() * M_PI;
        const double cycles = 0.8 + rng.uniform() * 2.4;
        return grating_image(hw, rng, noise, theta, cycles);
    }
    if (concept_name == "spots") {
        struct Bump {
            double x, y, s;
        };
        std::vector<Bump> bumps(3);
        for (auto& b : bumps) {
            b.x = (rng.uniform() - 0.5) * 0.8;
            b.y = (rng.uniform() - 0.5) * 0.8;
            b.s = 0.06 + rng.uniform() * 0.08;
        }
        return render(hw, rng, noise, [&](double u, double v) {
            double acc = 0.1;
            for (const auto& b : bumps) {
                const double d2 = (u - b.x) * (u - b.x) + (v - b.y) * (v - b.y);
                acc += 0.8 * std::exp(-d2 / (2.0 * b.s * b.s));
            }
            return acc;
        });
    }
    if (concept_name == "grid") {
        const std::size_t cell = 1 + rng.uniform_index(4);
        const int parity = static_cast<int>(rng.uniform_index(2));
        return checker_image(hw, rng, noise, cell, parity);
    }
    if (concept_name == "annuli") {
        const double radius = 0.10 + rng.uniform() * 0.30;
        return ring_image(hw, rng, noise, radius);
    }
    if (concept_name == "noise") {
        return render(hw, rng, 0.0, [&](double, double) { return rng.uniform(); });
    }
    if (concept_name == "ramp") {
        const double theta = rng.uniform() * 2.0 * M_PI;
        const double slope = 0.6 + rng.uniform() * 0.6;
        const double kx = std::cos(theta), ky = std::sin(theta);
        return render(hw, rng, noise, [&](double u, double v) {
            return 0.5 + slope * (u * kx + v * ky);
        });
    }
    if (concept_name == "corner") {
        const bool left = rng.uniform_index(2) == 0;
        const bool top = rng.uniform_index(2) == 0;
        return render(hw, rng, noise, [&](double u, double v) {
            const bool in = (left ? u < 0.0 : u >= 0.0) && (top ? v < 0.0 : v >= 0.0);
            return in ? 0.85 : 0.15;
        });
    }
    if (concept_name == "cross") {
        const double cx = (rng.uniform() - 0.5) * 0.5;
        const double cy = (rng.uniform() - 0.5) * 0.5;
        const double thick = 0.5 / static_cast<double>(hw) + rng.uniform() * 0.08;
        return render(hw, rng, noise, [&](double u, double v) {
            const bool in = std::abs(u - cx) < thick || std::abs(v - cy) < thick;
            return in ? 0.85 : 0.15;
        });
    }
    throw std::invalid_argument("unknown texture concept_name: " + concept_name);
}

} // namespace toy

// The raw (unfiltered) labeled outlier corpus.
inline OutlierPool make_texture_pool(std::uint64_t seed, std::size_t per_concept,
                                     const ToyConfig& cfg = {}) {
    OutlierPool pool;
    pool.source_labels.emplace();
    for (const auto& concept_name : texture_concepts())
        for (std::size_t i = 0; i < per_concept; ++i) {
            Example ex;
            ex.class_id = concept_name;
            ex.source = "textures";
            ex.id = "textures/" + concept_name + "/" + std::to_string(i);
            Rng rng = toy::example_rng(seed, ex.id);
            ex.input = toy::texture_image(concept_name, cfg.image_hw, rng, cfg.noise);
            pool.examples.push_back(std::move(ex));
            pool.source_labels->push_back(concept_name);
        }
    return pool;
}

// Coarse-OOD sources for a given ID dataset: all other toy families.
inline std::vector<std::string> default_coarse_sources(const std::string& id_dataset) {
    std::vector<std::string> out;
    for (const auto& n : toy_dataset_names())
        if (n != id_dataset) out.push_back(n);
    return out;
}

} // namespace mixoe
