#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "patentscape/detail/rng.hpp"
#include "patentscape/error.hpp"

namespace patentscape::nn {

// Dense row-major tensor of doubles. The network only ever needs matrices;
// vectors are [1 x n] and scalars [1 x 1].
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor(r, c, 0.0); }

    static Tensor row_vector(std::initializer_list<double> values) {
        Tensor t(1, values.size());
        std::size_t i = 0;
        for (double v : values) t.data[i++] = v;
        return t;
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows_init) {
        Tensor t(rows_init.size(), rows_init.begin()->size());
        std::size_t i = 0;
        for (const auto& row : rows_init) {
            if (row.size() != t.cols) throw InternalError("ragged tensor initializer");
            for (double v : row) t.data[i++] = v;
        }
        return t;
    }

    static Tensor uniform(std::size_t r, std::size_t c, double lo, double hi, detail::Rng& rng) {
        Tensor t(r, c);
        for (auto& x : t.data) x = rng.range(lo, hi);
        return t;
    }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row_ptr(std::size_t r) { return data.data() + r * cols; }
    const double* row_ptr(std::size_t r) const { return data.data() + r * cols; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
    }
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw InternalError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

}  // namespace patentscape::nn
