#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lcomp/errors.hpp"
#include "lcomp/rng.hpp"

namespace lcomp {

// Dense row-major float32 tensor. All public operations keep entries finite.
struct Tensor {
    std::vector<size_t> shape;
    std::vector<float> data;

    Tensor() = default;

    Tensor(std::vector<size_t> shape_, std::vector<float> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        if (data.size() != numel())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape product " + std::to_string(numel()));
    }

    static Tensor zeros(std::vector<size_t> shape_) {
        size_t n = 1;
        for (size_t s : shape_) n *= s;
        return Tensor(std::move(shape_), std::vector<float>(n, 0.0f));
    }

    static Tensor identity(size_t n) {
        Tensor t = zeros({n, n});
        for (size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0f;
        return t;
    }

    static Tensor gaussian(std::vector<size_t> shape_, Rng& rng, float scale = 1.0f) {
        size_t n = 1;
        for (size_t s : shape_) n *= s;
        std::vector<float> d(n);
        for (auto& v : d) v = scale * static_cast<float>(rng.next_gaussian());
        return Tensor(std::move(shape_), std::move(d));
    }

    size_t numel() const {
        size_t n = 1;
        for (size_t s : shape) n *= s;
        return n;
    }

    size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    float& at(size_t i, size_t j) { return data[i * cols() + j]; }
    float at(size_t i, size_t j) const { return data[i * cols() + j]; }

    bool is_matrix() const { return shape.size() == 2; }

    bool finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (size_t i = 0; i < t.shape.size(); ++i)
        s += (i ? "x" : "") + std::to_string(t.shape[i]);
    return s + "]";
}

// Standard matrix product with a fixed summation order (row-major,
// left-to-right over the inner index) so repeated calls are bit-identical.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (!a.is_matrix() || !b.is_matrix())
        throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a) + " and " + shape_str(b));
    if (a.cols() != b.rows())
        throw ShapeError("matmul inner dimensions disagree: " + shape_str(a) + " vs " + shape_str(b));
    const size_t n = a.rows(), p = a.cols(), m = b.cols();
    Tensor out = Tensor::zeros({n, m});
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < m; ++j) {
            float acc = 0.0f;
            for (size_t k = 0; k < p; ++k)
                acc += a.data[i * p + k] * b.data[k * m + j];
            out.data[i * m + j] = acc;
        }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("add shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Tensor scale(const Tensor& a, float s) {
    Tensor out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

}  // namespace lcomp
