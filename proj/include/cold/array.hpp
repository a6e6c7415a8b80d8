#pragma once

// Dense row-major double arrays used throughout the library. Rank 1 and 2
// cover everything the models need; no strides, no views.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cold {

struct Array {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Array() = default;

    explicit Array(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    Array(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel_of(shape))
            throw std::invalid_argument("Array: shape/data size mismatch");
    }

    static Array scalar(double v) { return Array({1}, {v}); }

    static Array full(std::vector<std::size_t> s, double v) {
        Array a(std::move(s));
        std::fill(a.data.begin(), a.data.end(), v);
        return a;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return data.size() == 1; }

    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Array& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << shape[i] << (i + 1 < shape.size() ? "x" : "");
        os << ')';
        return os.str();
    }
};

inline Array row_major(std::size_t r, std::size_t c, std::vector<double> d) {
    return Array({r, c}, std::move(d));
}

}  // namespace cold
