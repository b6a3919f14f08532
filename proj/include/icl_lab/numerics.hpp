#pragma once

// Dense kernels shared by the whole lab. Everything is double precision and
// row-major; the sizes involved (tens to a few hundred) never justify BLAS.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "icl_lab/errors.hpp"

namespace icl {

using Vec = std::vector<double>;

class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw InvalidArgument("Mat: entry count does not match rows*cols");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    double operator()(std::size_t r, std::size_t c) const noexcept {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Mat& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    friend bool operator==(const Mat&, const Mat&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> u, std::span<const double> v) {
    assert(u.size() == v.size());
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Stable softmax via max subtraction.
inline Vec softmax(std::span<const double> logits) {
    if (logits.empty()) throw InvalidArgument("softmax: empty input");
    const double mx = *std::max_element(logits.begin(), logits.end());
    Vec out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        z += out[i];
    }
    for (double& o : out) o /= z;
    return out;
}

inline Vec relu(std::span<const double> v) {
    Vec out(v.begin(), v.end());
    for (double& x : out) x = std::max(0.0, x);
    return out;
}

inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) throw InvalidArgument("cosine: length mismatch");
    const double nu = norm(u);
    const double nv = norm(v);
    if (nu == 0.0 || nv == 0.0) throw DegenerateInput("cosine: zero-norm input");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
/// Throws RankDeficiency when a column's residual drops below 1e-8 relative
/// to its original norm.
inline std::vector<Vec> orthonormalize(const std::vector<Vec>& columns) {
    constexpr double kResidualFloor = 1e-8;
    std::vector<Vec> out;
    out.reserve(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        Vec v = columns[c];
        if (!out.empty() && v.size() != out.front().size())
            throw InvalidArgument("orthonormalize: columns differ in length");
        const double orig = norm(v);
        if (orig == 0.0)
            throw RankDeficiency("orthonormalize: zero column " + std::to_string(c));
        for (int pass = 0; pass < 2; ++pass) {
            for (const Vec& q : out) {
                const double proj = dot(q, v);
                for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * q[i];
            }
        }
        const double res = norm(v);
        if (res < kResidualFloor * std::max(1.0, orig))
            throw RankDeficiency("orthonormalize: column " + std::to_string(c) +
                                 " is linearly dependent on earlier columns");
        for (double& x : v) x /= res;
        out.push_back(std::move(v));
    }
    return out;
}

// y = A x
inline void matvec(const Mat& a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == a.cols() && y.size() == a.rows());
    for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
}

inline Vec matvec(const Mat& a, std::span<const double> x) {
    Vec y(a.rows());
    matvec(a, x, y);
    return y;
}

// y = A^T x
inline void matTvec(const Mat& a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == a.rows() && y.size() == a.cols());
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double xr = x[r];
        if (xr == 0.0) continue;
        const auto ar = a.row(r);
        for (std::size_t c = 0; c < a.cols(); ++c) y[c] += xr * ar[c];
    }
}

inline Vec matTvec(const Mat& a, std::span<const double> x) {
    Vec y(a.cols());
    matTvec(a, x, y);
    return y;
}

// A += scale * u v^T
inline void add_outer(Mat& a, double scale, std::span<const double> u, std::span<const double> v) {
    assert(u.size() == a.rows() && v.size() == a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double ur = scale * u[r];
        if (ur == 0.0) continue;
        auto ar = a.row(r);
        for (std::size_t c = 0; c < a.cols(); ++c) ar[c] += ur * v[c];
    }
}

// C = A B
inline Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) throw InvalidArgument("matmul: inner dimension mismatch");
    Mat c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ci = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto bk = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
        }
    }
    return c;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace icl
