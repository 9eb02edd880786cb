#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixoe/dataset.hpp"
#include "mixoe/rng.hpp"
#include "mixoe/tensor.hpp"

namespace mixoe {

// Contract every trainable backbone fulfills: batched forward to logits,
// penultimate features, backprop from a logit gradient, and flat parameter
// get/set for checkpointing. One forward's activations are cached for the
// next backward; training code must serialize forward/backward pairs.
class Model {
public:
    virtual ~Model() = default;

    virtual std::size_t input_dim() const = 0;
    virtual std::size_t num_classes() const = 0;
    virtual std::size_t penultimate_dim() const = 0;

    // Logits [B, K]; caches activations for backward().
    virtual Matrix forward(const Batch& batch) = 0;
    // Features [B, P] before the classification head.
    virtual Matrix penultimate(const Batch& batch) = 0;

    // Accumulates parameter gradients from dL/dlogits of the last forward.
    virtual void backward(const Matrix& dlogits) = 0;

    virtual std::vector<double> parameters() const = 0;
    virtual void set_parameters(const std::vector<double>& p) = 0;
    virtual std::vector<double> gradients() const = 0;
    virtual void zero_grad() = 0;
};

// Fully-connected layer with weights [out x in] plus bias.
struct Linear {
    std::size_t in = 0, out = 0;
    std::vector<double> w, b;      // parameters
    std::vector<double> gw, gb;    // gradient accumulators

    Linear() = default;
    Linear(std::size_t in_dim, std::size_t out_dim)
        : in(in_dim), out(out_dim), w(in_dim * out_dim, 0.0), b(out_dim, 0.0),
          gw(in_dim * out_dim, 0.0), gb(out_dim, 0.0) {}

    void init_he(Rng& rng) {
        const double std = std::sqrt(2.0 / static_cast<double>(in));
        for (double& x : w) x = std * rng.normal();
        for (double& x : b) x = 0.0;
    }

    // y[r] = W x[r] + b
    Matrix apply(const Matrix& x) const {
        Matrix y(x.rows, out);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double* xr = x.row(r);
            double* yr = y.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                double acc = b[o];
                const double* wo = w.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
                yr[o] = acc;
            }
        }
        return y;
    }

    // Accumulates gw/gb from (x, dy); returns dx.
    Matrix backward(const Matrix& x, const Matrix& dy) {
        Matrix dx(x.rows, in);
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double* xr = x.row(r);
            const double* dyr = dy.row(r);
            double* dxr = dx.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                const double g = dyr[o];
                gb[o] += g;
                double* gwo = gw.data() + o * in;
                const double* wo = w.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) {
                    gwo[i] += g * xr[i];
                    dxr[i] += g * wo[i];
                }
            }
        }
        return dx;
    }
};

// Layer widths of an MLP backbone: input -> hidden... -> K logits. The last
// hidden layer is the penultimate feature space.
struct MlpSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::size_t num_classes = 0;

    bool operator==(const MlpSpec&) const = default;
};

// Small ReLU MLP. Desk-scale stand-in for a real vision backbone; the
// training pipeline only sees the Model contract.
class MlpModel : public Model {
public:
    MlpModel(MlpSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
        if (spec_.input_dim == 0 || spec_.num_classes == 0 || spec_.hidden.empty())
            throw std::invalid_argument("MlpModel: invalid spec");
        Rng rng(init_seed);
        std::size_t prev = spec_.input_dim;
        for (std::size_t h : spec_.hidden) {
            layers_.emplace_back(prev, h);
            layers_.back().init_he(rng);
            prev = h;
        }
        head_ = Linear(prev, spec_.num_classes);
        head_.init_he(rng);
    }

    const MlpSpec& spec() const { return spec_; }
    std::size_t input_dim() const override { return spec_.input_dim; }
    std::size_t num_classes() const override { return spec_.num_classes; }
    std::size_t penultimate_dim() const override { return spec_.hidden.back(); }

    Matrix forward(const Batch& batch) override {
        acts_.clear();
        acts_.push_back(flatten(batch));
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Matrix z = layers_[l].apply(acts_.back());
            relu_inplace(z);
            acts_.push_back(std::move(z));
        }
        return head_.apply(acts_.back());
    }

    Matrix penultimate(const Batch& batch) override {
        forward(batch);
        return acts_.back();
    }

    void backward(const Matrix& dlogits) override {
        if (acts_.empty()) throw std::logic_error("backward before forward");
        Matrix d = head_.backward(acts_.back(), dlogits);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            // ReLU gate: activation > 0 iff pre-activation > 0
            const Matrix& a = acts_[l + 1];
            for (std::size_t i = 0; i < d.a.size(); ++i)
                if (a.a[i] <= 0.0) d.a[i] = 0.0;
            d = layers_[l].backward(acts_[l], d);
        }
    }

    std::vector<double> parameters() const override {
        std::vector<double> p;
        for (const Linear& l : layers_) {
            p.insert(p.end(), l.w.begin(), l.w.end());
            p.insert(p.end(), l.b.begin(), l.b.end());
        }
        p.insert(p.end(), head_.w.begin(), head_.w.end());
        p.insert(p.end(), head_.b.begin(), head_.b.end());
        return p;
    }

    void set_parameters(const std::vector<double>& p) override {
        std::size_t off = 0;
        const auto take = [&](std::vector<double>& dst) {
            if (off + dst.size() > p.size())
                throw std::invalid_argument("set_parameters: size mismatch");
            std::copy(p.begin() + off, p.begin() + off + dst.size(), dst.begin());
            off += dst.size();
        };
        for (Linear& l : layers_) {
            take(l.w);
            take(l.b);
        }
        take(head_.w);
        take(head_.b);
        if (off != p.size()) throw std::invalid_argument("set_parameters: size mismatch");
    }

    std::vector<double> gradients() const override {
        std::vector<double> g;
        for (const Linear& l : layers_) {
            g.insert(g.end(), l.gw.begin(), l.gw.end());
            g.insert(g.end(), l.gb.begin(), l.gb.end());
        }
        g.insert(g.end(), head_.gw.begin(), head_.gw.end());
        g.insert(g.end(), head_.gb.begin(), head_.gb.end());
        return g;
    }

    void zero_grad() override {
        for (Linear& l : layers_) {
            std::fill(l.gw.begin(), l.gw.end(), 0.0);
            std::fill(l.gb.begin(), l.gb.end(), 0.0);
        }
        std::fill(head_.gw.begin(), head_.gw.end(), 0.0);
        std::fill(head_.gb.begin(), head_.gb.end(), 0.0);
    }

private:
    Matrix flatten(const Batch& batch) const {
        if (batch.size() == 0) throw std::invalid_argument("forward: empty batch");
        Matrix x(batch.size(), spec_.input_dim);
        for (std::size_t r = 0; r < batch.size(); ++r) {
            const Tensor& t = batch.inputs[r];
            if (t.size() != spec_.input_dim)
                throw std::invalid_argument("forward: input size mismatch");
            std::copy(t.v.begin(), t.v.end(), x.row(r));
        }
        return x;
    }

    static void relu_inplace(Matrix& m) {
        for (double& v : m.a)
            if (v < 0.0) v = 0.0;
    }

    MlpSpec spec_;
    std::vector<Linear> layers_;
    Linear head_;
    std::vector<Matrix> acts_; // input + post-ReLU activations of last forward
};

// FNV-1a over the parameter bytes; used to assert a frozen backbone stayed
// frozen and to fingerprint checkpoints.
inline std::uint64_t parameter_hash(const std::vector<double>& params) {
    std::uint64_t h = 1469598103934665603ULL;
    for (double d : params) {
        std::uint64_t bits;
        static_assert(sizeof bits == sizeof d);
        std::memcpy(&bits, &d, sizeof bits);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffULL;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

} // namespace mixoe
