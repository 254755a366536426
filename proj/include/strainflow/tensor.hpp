#pragma once

// Small dense linear algebra: vectors, row-major matrices, the
// strain/vorticity split and the logarithmic norm.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace strainflow {

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Raised when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Vec {
public:
    Vec() = default;
    explicit Vec(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
    Vec(std::initializer_list<double> values) : data_(values) {}
    explicit Vec(std::vector<double> values) : data_(std::move(values)) {}

    static Vec basis(std::size_t dim, std::size_t axis) {
        Vec e(dim);
        e[axis] = 1.0;
        return e;
    }

    std::size_t size() const noexcept { return data_.size(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    std::span<double> span() noexcept { return data_; }
    std::span<const double> span() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }
    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    Vec& operator+=(const Vec& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Vec& operator-=(const Vec& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Vec& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Vec operator+(Vec a, const Vec& b) { return a += b; }
    friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
    friend Vec operator*(Vec a, double s) { return a *= s; }
    friend Vec operator*(double s, Vec a) { return a *= s; }
    friend Vec operator-(Vec a) { return a *= -1.0; }
    friend bool operator==(const Vec&, const Vec&) = default;

    bool is_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    void check_same(const Vec& o) const {
        if (o.size() != size()) throw DimensionError("vector size mismatch");
    }
    std::vector<double> data_;
};

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

/// Row-major dense matrix.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Mat(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw DimensionError("ragged matrix literal");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static Mat identity(std::size_t d) {
        Mat m(d, d);
        for (std::size_t i = 0; i < d; ++i) m(i, i) = 1.0;
        return m;
    }
    static Mat diagonal(const Vec& diag) {
        Mat m(diag.size(), diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool is_square() const noexcept { return rows_ == cols_; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    std::span<const double> span() const noexcept { return data_; }
    std::span<double> span() noexcept { return data_; }

    Mat transpose() const {
        Mat t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    Mat& operator+=(const Mat& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Mat& operator-=(const Mat& o) {
        check_same(o);
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Mat& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }

    friend Mat operator+(Mat a, const Mat& b) { return a += b; }
    friend Mat operator-(Mat a, const Mat& b) { return a -= b; }
    friend Mat operator*(Mat a, double s) { return a *= s; }
    friend Mat operator*(double s, Mat a) { return a *= s; }
    friend bool operator==(const Mat&, const Mat&) = default;

    friend Mat operator*(const Mat& a, const Mat& b) {
        if (a.cols_ != b.rows_) throw DimensionError("matmul: inner dimension mismatch");
        Mat c(a.rows_, b.cols_);
        for (std::size_t i = 0; i < a.rows_; ++i)
            for (std::size_t k = 0; k < a.cols_; ++k) {
                const double aik = a(i, k);
                for (std::size_t j = 0; j < b.cols_; ++j) c(i, j) += aik * b(k, j);
            }
        return c;
    }

    friend Vec operator*(const Mat& a, const Vec& x) {
        if (a.cols_ != x.size()) throw DimensionError("matvec: dimension mismatch");
        Vec y(a.rows_);
        for (std::size_t i = 0; i < a.rows_; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < a.cols_; ++j) s += a(i, j) * x[j];
            y[i] = s;
        }
        return y;
    }

    bool is_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

private:
    void check_same(const Mat& o) const {
        if (o.rows_ != rows_ || o.cols_ != cols_) throw DimensionError("matrix shape mismatch");
    }
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Symmetric (strain-rate) and antisymmetric (vorticity) parts of a square matrix.
struct JacobianSplit {
    Mat strain;
    Mat vorticity;
};

inline void require_square(const Mat& a, const char* what) {
    if (!a.is_square()) throw DimensionError(std::string(what) + ": matrix must be square");
}

inline JacobianSplit split_jacobian(const Mat& a) {
    require_square(a, "split_jacobian");
    const std::size_t d = a.rows();
    JacobianSplit out{Mat(d, d), Mat(d, d)};
    for (std::size_t i = 0; i < d; ++i) {
        out.strain(i, i) = a(i, i);
        for (std::size_t j = i + 1; j < d; ++j) {
            const double s = 0.5 * (a(i, j) + a(j, i));
            const double w = 0.5 * (a(i, j) - a(j, i));
            out.strain(i, j) = s;
            out.strain(j, i) = s;
            out.vorticity(i, j) = w;
            out.vorticity(j, i) = -w;
        }
    }
    return out;
}

inline double frobenius_sq(const Mat& m) {
    double s = 0.0;
    for (double v : m.span()) s += v * v;
    return s;
}

inline double frobenius(const Mat& m) { return std::sqrt(frobenius_sq(m)); }

inline double max_asymmetry(const Mat& a) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - a(j, i)));
    return worst;
}

struct SymmetricEigen {
    Vec values;    // ascending
    Mat vectors;   // column k is the eigenvector for values[k]
};

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. The input is
/// symmetrized first; sweeps stop once the off-diagonal Frobenius mass drops
/// below 1e-14 relative to the matrix norm.
inline SymmetricEigen symmetric_eigen(const Mat& input) {
    require_square(input, "symmetric_eigen");
    const std::size_t d = input.rows();
    Mat a = split_jacobian(input).strain;
    Mat v = Mat::identity(d);
    const double scale = std::max(frobenius(a), 1e-300);

    auto off_diagonal = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                if (i != j) s += a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    constexpr int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps && off_diagonal() > 1e-14 * scale; ++sweep) {
        for (std::size_t p = 0; p + 1 < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < d; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
    SymmetricEigen out{Vec(d), Mat(d, d)};
    for (std::size_t k = 0; k < d; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < d; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

/// Largest eigenvalue of a symmetric matrix (symmetric to 1e-12 per entry).
inline double symmetric_eig_max(const Mat& s) {
    require_square(s, "symmetric_eig_max");
    if (max_asymmetry(s) > 1e-12) throw ContractViolation("symmetric_eig_max: input is not symmetric");
    if (s.rows() == 0) throw DimensionError("symmetric_eig_max: empty matrix");
    const SymmetricEigen eig = symmetric_eigen(s);
    return eig.values[eig.values.size() - 1];
}

/// Logarithmic 2-norm: largest eigenvalue of the symmetric part.
inline double log_norm(const Mat& a) {
    require_square(a, "log_norm");
    return symmetric_eig_max(split_jacobian(a).strain);
}

/// Spectral norm via the largest eigenvalue of A^T A.
inline double operator_norm(const Mat& a) {
    const double lmax = symmetric_eig_max(split_jacobian(a.transpose() * a).strain);
    return std::sqrt(std::max(lmax, 0.0));
}

/// Q diag(f(lambda)) Q^T for a symmetric eigen-decomposition.
template <typename F>
Mat spectral_apply(const SymmetricEigen& eig, F&& f) {
    const std::size_t d = eig.values.size();
    Vec fv(d);
    for (std::size_t k = 0; k < d; ++k) fv[k] = f(eig.values[k]);
    Mat out(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += eig.vectors(i, k) * fv[k] * eig.vectors(j, k);
            out(i, j) = s;
        }
    return out;
}

/// Symmetric square root of a symmetric positive-definite matrix.
inline Mat sym_sqrt(const Mat& p) {
    require_square(p, "sym_sqrt");
    if (max_asymmetry(p) > 1e-12 * std::max(1.0, frobenius(p)))
        throw DomainError("sym_sqrt: input is not symmetric");
    const SymmetricEigen eig = symmetric_eigen(p);
    if (eig.values.size() == 0 || eig.values[0] <= 1e-12) throw DomainError("sym_sqrt: input is not positive definite");
    Mat r = spectral_apply(eig, [](double l) { return std::sqrt(l); });
    return split_jacobian(r).strain;
}

}  // namespace strainflow
