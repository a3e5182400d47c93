#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "lcfm/errors.hpp"

namespace lcfm {

// Dense row-major matrix of doubles. Rows usually index batch elements.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
        std::size_t i = 0;
        for (const auto& r : rows) {
            if (r.size() != m.cols_) throw ContractError("from_rows: ragged rows");
            std::size_t j = 0;
            for (double v : r) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator[](std::size_t k) { return data_[k]; }
    double operator[](std::size_t k) const { return data_[k]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    Matrix row(std::size_t i) const {
        Matrix r(1, cols_);
        std::copy(data_.begin() + i * cols_, data_.begin() + (i + 1) * cols_, r.data_.begin());
        return r;
    }

    void set_row(std::size_t i, const Matrix& r) {
        if (r.cols_ != cols_ || r.rows_ != 1) throw ContractError("set_row: shape mismatch");
        std::copy(r.data_.begin(), r.data_.end(), data_.begin() + i * cols_);
    }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    std::string shape_str() const {
        return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// C = A * B (ikj loop order for cache-friendly row-major access).
inline void matmul_into(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols() != b.rows()) {
        throw ContractError("matmul: inner dims " + a.shape_str() + " vs " + b.shape_str());
    }
    c = Matrix(a.rows(), b.cols());
    const std::size_t n = a.rows(), k_dim = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a.data() + i * k_dim;
        double* cr = c.data() + i * m;
        for (std::size_t k = 0; k < k_dim; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            const double* br = b.data() + k * m;
            for (std::size_t j = 0; j < m; ++j) cr[j] += aik * br[j];
        }
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix c;
    matmul_into(a, b, c);
    return c;
}

// C += A^T * B, used by backward passes (A: [n x p], B: [n x q], C: [p x q]).
inline void add_at_b(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols()) {
        throw ContractError("add_at_b: shape mismatch");
    }
    const std::size_t n = a.rows(), p = a.cols(), q = b.cols();
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a.data() + i * p;
        const double* br = b.data() + i * q;
        for (std::size_t k = 0; k < p; ++k) {
            const double aik = ar[k];
            if (aik == 0.0) continue;
            double* cr = c.data() + k * q;
            for (std::size_t j = 0; j < q; ++j) cr[j] += aik * br[j];
        }
    }
}

// C += A * B^T (A: [n x q], B: [p x q], C: [n x p]).
inline void add_a_bt(const Matrix& a, const Matrix& b, Matrix& c) {
    if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows()) {
        throw ContractError("add_a_bt: shape mismatch");
    }
    const std::size_t n = a.rows(), q = a.cols(), p = b.rows();
    for (std::size_t i = 0; i < n; ++i) {
        const double* ar = a.data() + i * q;
        double* cr = c.data() + i * p;
        for (std::size_t k = 0; k < p; ++k) {
            const double* br = b.data() + k * q;
            double s = 0.0;
            for (std::size_t j = 0; j < q; ++j) s += ar[j] * br[j];
            cr[k] += s;
        }
    }
}

}  // namespace lcfm
