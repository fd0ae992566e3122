#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace bsel {

// Dense row-major matrix of doubles. Zero-sized dimensions are allowed so
// that empty factor sets (rank 0) stay representable.
class Matrix {
public:
    Matrix() : rows_(0), cols_(0) {}

    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) {
            throw std::invalid_argument("Matrix: data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str());
        }
        for (double x : data_) {
            if (!std::isfinite(x)) {
                throw std::invalid_argument("Matrix: non-finite entry in " + shape_str() + " matrix");
            }
        }
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix of(std::initializer_list<std::initializer_list<double>> rows) {
        std::size_t r = rows.size();
        std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<double> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw std::invalid_argument("Matrix::of: ragged rows");
            data.insert(data.end(), row.begin(), row.end());
        }
        return Matrix(r, c, std::move(data));
    }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
    const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

private:
    std::size_t rows_, cols_;
    std::vector<double> data_;
};

inline void require_shape(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

// c = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require_shape(a.cols() == b.rows(),
                  "matmul: shape mismatch " + a.shape_str() + " * " + b.shape_str());
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c.row_ptr(i);
        for (std::size_t l = 0; l < k; ++l) {
            const double av = a(i, l);
            if (av == 0.0) continue;
            const double* bl = b.row_ptr(l);
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
        }
    }
    return c;
}

// c = a^T * b, with a: k x n, b: k x m
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    require_shape(a.rows() == b.rows(),
                  "matmul_at_b: shape mismatch " + a.shape_str() + "^T * " + b.shape_str());
    Matrix c(a.cols(), b.cols());
    const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
    for (std::size_t l = 0; l < k; ++l) {
        const double* al = a.row_ptr(l);
        const double* bl = b.row_ptr(l);
        for (std::size_t i = 0; i < n; ++i) {
            const double av = al[i];
            if (av == 0.0) continue;
            double* ci = c.row_ptr(i);
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
        }
    }
    return c;
}

// c = a * b^T, with a: n x k, b: m x k
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    require_shape(a.cols() == b.cols(),
                  "matmul_a_bt: shape mismatch " + a.shape_str() + " * " + b.shape_str() + "^T");
    Matrix c(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.row_ptr(i);
        double* ci = c.row_ptr(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.row_ptr(j);
            double acc = 0.0;
            for (std::size_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
            ci[j] = acc;
        }
    }
    return c;
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

// tr(a^T b)
inline double frobenius_inner(const Matrix& a, const Matrix& b) {
    require_shape(a.same_shape(b),
                  "frobenius_inner: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double acc = 0.0;
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) acc += pa[i] * pb[i];
    return acc;
}

inline double frobenius_norm(const Matrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * a.data()[i];
    return std::sqrt(acc);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_shape(a.same_shape(b),
                  "max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

inline Matrix select_columns(const Matrix& a, const std::vector<std::size_t>& keep) {
    Matrix out(a.rows(), keep.size());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < keep.size(); ++j) out(i, j) = a(i, keep[j]);
    return out;
}

}  // namespace bsel
