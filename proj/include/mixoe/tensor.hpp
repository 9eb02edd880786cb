#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mixoe {

// Dense row-major tensor of doubles. Inputs here are desk-scale images
// (typically {H, W} or {C, H, W}); the last two axes are spatial.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> data)
        : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != element_count(shape))
            throw std::invalid_argument("Tensor: data size does not match shape");
    }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        const std::size_t n = element_count(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    std::size_t size() const { return v.size(); }
    std::size_t rank() const { return shape.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool is_spatial() const { return rank() >= 2; }
    std::size_t height() const { return shape[rank() - 2]; }
    std::size_t width() const { return shape[rank() - 1]; }
    // Product of all axes before the spatial pair (1 for plain {H, W}).
    std::size_t channels() const {
        std::size_t c = 1;
        for (std::size_t i = 0; i + 2 < rank(); ++i) c *= shape[i];
        return c;
    }

    double& at(std::size_t flat) { return v[flat]; }
    double at(std::size_t flat) const { return v[flat]; }
};

// Row-major matrix used for batched activations and parameters.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return a[r * cols + c]; }
    double* row(std::size_t r) { return a.data() + r * cols; }
    const double* row(std::size_t r) const { return a.data() + r * cols; }
};

} // namespace mixoe
