#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvprefill/errors.hpp"

namespace kvprefill {

/// Dense row-major matrix over float or double.
template <typename T>
struct Matrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<T> values;

    Matrix() = default;
    Matrix(int64_t r, int64_t c) : rows(r), cols(c), values(static_cast<size_t>(r * c), T(0)) {
        if (r < 0 || c < 0) throw DimensionError("matrix dimensions must be non-negative");
    }

    T& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * cols + c)]; }
    const T& at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * cols + c)]; }

    std::span<T> row(int64_t r) { return {values.data() + r * cols, static_cast<size_t>(cols)}; }
    std::span<const T> row(int64_t r) const {
        return {values.data() + r * cols, static_cast<size_t>(cols)};
    }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
    }

    /// Rows [begin, end) as a copy.
    Matrix slice_rows(int64_t begin, int64_t end) const {
        if (begin < 0 || end > rows || begin > end)
            throw DimensionError("row slice out of range");
        Matrix out(end - begin, cols);
        std::copy(values.begin() + begin * cols, values.begin() + end * cols,
                  out.values.begin());
        return out;
    }

    /// Row-concatenates `other` below this matrix.
    Matrix vcat(const Matrix& other) const {
        if (cols != other.cols) throw DimensionError("vcat requires equal column counts");
        Matrix out(rows + other.rows, cols);
        std::copy(values.begin(), values.end(), out.values.begin());
        std::copy(other.values.begin(), other.values.end(), out.values.begin() + rows * cols);
        return out;
    }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && values == o.values;
    }
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

template <typename To, typename From>
Matrix<To> matrix_cast(const Matrix<From>& m) {
    Matrix<To> out(m.rows, m.cols);
    for (size_t i = 0; i < m.values.size(); ++i)
        out.values[i] = static_cast<To>(m.values[i]);
    return out;
}

/// a(r,k) * b(k,c); accumulates row-wise in k-major order.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.rows)
        throw DimensionError("matmul shape mismatch: " + std::to_string(a.cols) + " vs " +
                             std::to_string(b.rows));
    Matrix<T> out(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        T* orow = out.values.data() + i * out.cols;
        for (int64_t k = 0; k < a.cols; ++k) {
            const T aik = a.at(i, k);
            const T* brow = b.values.data() + k * b.cols;
            for (int64_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

template <typename T>
Matrix<T> add(const Matrix<T>& a, const Matrix<T>& b) {
    if (!a.same_shape(b)) throw DimensionError("add shape mismatch");
    Matrix<T> out(a.rows, a.cols);
    for (size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] + b.values[i];
    return out;
}

/// Largest per-element deviation of `a` from reference `b`, relative with a
/// unit floor: max_i |a_i - b_i| / max(1, |b_i|).
template <typename A, typename B>
double max_rel_dev(const Matrix<A>& a, const Matrix<B>& b) {
    if (a.rows != b.rows || a.cols != b.cols)
        throw DimensionError("deviation requires equal shapes");
    double worst = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const double ref = static_cast<double>(b.values[i]);
        const double d = std::abs(static_cast<double>(a.values[i]) - ref) /
                         std::max(1.0, std::abs(ref));
        worst = std::max(worst, d);
    }
    return worst;
}

}  // namespace kvprefill
