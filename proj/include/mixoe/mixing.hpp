#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixoe/errors.hpp"
#include "mixoe/rng.hpp"
#include "mixoe/tensor.hpp"

namespace mixoe {

// Virtual-outlier construction: mix an ID input with an outlier input and
// assign a soft target whose confidence decays linearly with the outlier
// fraction. Two instantiations: elementwise linear interpolation and a
// cut-paste of a rectangular region.

enum class MixMode { linear, cut };

inline std::string to_string(MixMode m) { return m == MixMode::linear ? "linear" : "cut"; }

inline MixMode mix_mode_from_string(const std::string& s) {
    if (s == "linear") return MixMode::linear;
    if (s == "cut") return MixMode::cut;
    throw std::invalid_argument("unknown mix mode: " + s);
}

struct MixCoefficient {
    double lambda = 1.0; // ID-content weight, in [0, 1]
    double alpha = 1.0;  // Beta(alpha, alpha) shape it was drawn from
};

// Probability vector over the K ID categories. When built from a one-hot ID
// label the max entry is lambda + (1 - lambda)/K.
struct SoftTarget {
    std::vector<double> probs;
    std::size_t K() const { return probs.size(); }
};

// Cut-paste rectangle in pixel coordinates, half-open [x0,x1) x [y0,y1),
// already clipped to the image bounds.
struct CutRegion {
    std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

struct MixedSample {
    Tensor input;
    SoftTarget target;
    MixCoefficient lambda;
    MixMode mode = MixMode::linear;
    std::optional<CutRegion> region; // set for cut mode
};

// One draw of the mixing coefficient, lambda ~ Beta(alpha, alpha). Drawn once
// per training batch, not per example.
inline MixCoefficient sample_lambda(double alpha, Rng& rng) {
    if (!(alpha > 0.0)) throw std::invalid_argument("sample_lambda: alpha must be > 0");
    return MixCoefficient{rng.beta(alpha, alpha), alpha};
}

// Elementwise lambda * x_in + (1 - lambda) * x_out.
inline Tensor mix_linear(const Tensor& x_in, const Tensor& x_out, double lambda) {
    if (!x_in.same_shape(x_out))
        throw std::invalid_argument("mix_linear: shape mismatch");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("mix_linear: lambda must be in [0, 1]");
    Tensor out = x_in;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.v[i] = lambda * x_in.v[i] + (1.0 - lambda) * x_out.v[i];
    return out;
}

struct CutResult {
    Tensor input;
    double lambda_adjusted = 1.0;
    CutRegion region;
};

// Cut-paste with an explicit box center (in pixels). The nominal box is
// W*sqrt(1-lambda) x H*sqrt(1-lambda) centered at (cx, cy), clipped to the
// image; lambda_adjusted = 1 - clipped_area / (H*W) is the value the soft
// target must use. Exposed separately so tests can pin the center.
inline CutResult mix_cut_at(const Tensor& x_in, const Tensor& x_out, double lambda,
                            std::size_t cx, std::size_t cy) {
    if (!x_in.same_shape(x_out))
        throw std::invalid_argument("mix_cut: shape mismatch");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("mix_cut: lambda must be in [0, 1]");
    if (!x_in.is_spatial())
        throw UnsupportedOperation("mix_cut: input has no spatial H,W axes; use mix_linear");
    const std::size_t H = x_in.height(), W = x_in.width(), C = x_in.channels();
    const double ratio = std::sqrt(1.0 - lambda);
    const double half_w = 0.5 * static_cast<double>(W) * ratio;
    const double half_h = 0.5 * static_cast<double>(H) * ratio;
    const auto clip = [](double v, std::size_t hi) -> std::size_t {
        const long r = std::lround(v);
        if (r < 0) return 0;
        if (r > static_cast<long>(hi)) return hi;
        return static_cast<std::size_t>(r);
    };
    CutRegion box;
    box.x0 = clip(static_cast<double>(cx) - half_w, W);
    box.x1 = clip(static_cast<double>(cx) + half_w, W);
    box.y0 = clip(static_cast<double>(cy) - half_h, H);
    box.y1 = clip(static_cast<double>(cy) + half_h, H);

    Tensor out = x_in;
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = c * H * W;
        for (std::size_t y = box.y0; y < box.y1; ++y)
            for (std::size_t x = box.x0; x < box.x1; ++x)
                out.v[base + y * W + x] = x_out.v[base + y * W + x];
    }
    const double adj =
        1.0 - static_cast<double>(box.area()) / static_cast<double>(H * W);
    return CutResult{std::move(out), adj, box};
}

// Cut-paste with the box center drawn uniformly over the image.
inline CutResult mix_cut(const Tensor& x_in, const Tensor& x_out, double lambda, Rng& rng) {
    if (!x_in.is_spatial())
        throw UnsupportedOperation("mix_cut: input has no spatial H,W axes; use mix_linear");
    const std::size_t cx = rng.uniform_index(x_in.width());
    const std::size_t cy = rng.uniform_index(x_in.height());
    return mix_cut_at(x_in, x_out, lambda, cx, cy);
}

namespace detail {
inline void check_one_hot(const std::vector<double>& y, const char* who) {
    if (y.empty()) throw std::invalid_argument(std::string(who) + ": empty label vector");
    std::size_t ones = 0;
    for (double p : y) {
        if (std::abs(p - 1.0) < 1e-12) ++ones;
        else if (std::abs(p) > 1e-12)
            throw std::invalid_argument(std::string(who) + ": label is not one-hot");
    }
    if (ones != 1) throw std::invalid_argument(std::string(who) + ": label is not one-hot");
}
} // namespace detail

// Soft target lambda * y_in + (1 - lambda) * Uniform(K). Max entry is
// lambda + (1 - lambda)/K; the K=1 degenerate target is (1.0) for any lambda.
inline SoftTarget make_soft_target(const std::vector<double>& y_in, double lambda) {
    detail::check_one_hot(y_in, "make_soft_target");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("make_soft_target: lambda must be in [0, 1]");
    const std::size_t K = y_in.size();
    SoftTarget t;
    t.probs.resize(K);
    const double u = (1.0 - lambda) / static_cast<double>(K);
    for (std::size_t k = 0; k < K; ++k) t.probs[k] = lambda * y_in[k] + u;
    return t;
}

inline SoftTarget one_hot(std::size_t K, std::size_t index) {
    SoftTarget t;
    t.probs.assign(K, 0.0);
    t.probs.at(index) = 1.0;
    return t;
}

// ID-ID mixing (no outlier involved): target is the interpolation of the two
// one-hot labels, lambda * y1 + (1 - lambda) * y2. Cut mode adjusts lambda to
// the realized area ratio before forming the target.
inline MixedSample make_id_mix_pair(const Tensor& x1, const std::vector<double>& y1,
                                    const Tensor& x2, const std::vector<double>& y2,
                                    double lambda, MixMode mode, Rng& rng) {
    detail::check_one_hot(y1, "make_id_mix_pair");
    detail::check_one_hot(y2, "make_id_mix_pair");
    if (y1.size() != y2.size())
        throw std::invalid_argument("make_id_mix_pair: label length mismatch");
    MixedSample s;
    s.mode = mode;
    double lam = lambda;
    if (mode == MixMode::linear) {
        s.input = mix_linear(x1, x2, lambda);
    } else {
        CutResult r = mix_cut(x1, x2, lambda, rng);
        s.input = std::move(r.input);
        s.region = r.region;
        lam = r.lambda_adjusted;
    }
    s.lambda = MixCoefficient{lam, 0.0};
    s.target.probs.resize(y1.size());
    for (std::size_t k = 0; k < y1.size(); ++k)
        s.target.probs[k] = lam * y1[k] + (1.0 - lam) * y2[k];
    return s;
}

} // namespace mixoe
