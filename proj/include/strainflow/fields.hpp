#pragma once

// Analytic velocity fields: Gaussian and quartic optimal-transport
// displacement interpolations, rotational non-OT controls, and simple
// linear/closure fields used as test subjects.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strainflow/rng.hpp"
#include "strainflow/tensor.hpp"

namespace strainflow {

/// Velocity, spatial Jacobian and time partial at one point.
struct PointDerivatives {
    Vec v;
    Mat jac;
    Vec dt;
};

/// v(t, x) on [0,1] x R^d together with its spatial Jacobian and time partial.
class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual std::size_t dimension() const = 0;
    virtual Vec eval(double t, const Vec& x) const = 0;
    virtual Mat jacobian(double t, const Vec& x) const = 0;
    virtual Vec time_partial(double t, const Vec& x) const = 0;

    /// Evaluates many points at a shared time. Network-backed fields
    /// override this to batch the work.
    virtual std::vector<Vec> eval_batch(double t, std::span<const Vec> xs) const {
        std::vector<Vec> out;
        out.reserve(xs.size());
        for (const Vec& x : xs) out.push_back(eval(t, x));
        return out;
    }

    virtual std::vector<PointDerivatives> derivatives_batch(double t, std::span<const Vec> xs) const {
        std::vector<PointDerivatives> out;
        out.reserve(xs.size());
        for (const Vec& x : xs) out.push_back({eval(t, x), jacobian(t, x), time_partial(t, x)});
        return out;
    }

protected:
    void check_dim(const Vec& x) const {
        if (x.size() != dimension()) throw DimensionError("field evaluated with wrong dimension");
    }
};

using FieldPtr = std::shared_ptr<const VelocityField>;

/// Fields that are the Eulerian velocity of an exact displacement
/// interpolation phi_t(x) = (1-t) x + t T(x).
class OTVelocityField : public VelocityField {
public:
    virtual Vec transport_map(const Vec& x) const = 0;
    Vec displacement(double t, const Vec& x) const { return (1.0 - t) * x + t * transport_map(x); }
};

/// Dv/Dt = d_t v + (grad v) v.
inline Vec material_derivative(const VelocityField& field, double t, const Vec& x) {
    return field.time_partial(t, x) + field.jacobian(t, x) * field.eval(t, x);
}

/// Central difference in t with step eta, falling back to a second-order
/// one-sided stencil within eta of the endpoints.
inline Vec fd_time_partial(const std::function<Vec(double)>& f, double t, double eta = 1e-5) {
    if (t - eta >= 0.0 && t + eta <= 1.0) return (f(t + eta) - f(t - eta)) * (0.5 / eta);
    if (t - eta < 0.0) return (-3.0 * f(t) + 4.0 * f(t + eta) - f(t + 2.0 * eta)) * (0.5 / eta);
    return (3.0 * f(t) - 4.0 * f(t - eta) + f(t - 2.0 * eta)) * (0.5 / eta);
}

/// Fourth-order central difference in t with step eta; second-order stencils
/// within 2 eta of the endpoints.
inline Vec fd_time_partial4(const std::function<Vec(double)>& f, double t, double eta = 1e-5) {
    if (t - 2.0 * eta < 0.0 || t + 2.0 * eta > 1.0) return fd_time_partial(f, t, eta);
    return (8.0 * (f(t + eta) - f(t - eta)) - (f(t + 2.0 * eta) - f(t - 2.0 * eta))) * (1.0 / (12.0 * eta));
}

// ---------------------------------------------------------------------------
// Gaussian OT: N(0, I) -> N(mu1, Sigma1), map T(x) = A x + mu1, A = Sigma1^{1/2}.

struct GaussianOTSpec {
    Vec mu1;
    Mat sigma1;
    Mat sqrt_sigma;        // A
    SymmetricEigen eig_a;  // eigen-decomposition of A, values are the sigma_i
};

inline GaussianOTSpec make_gaussian_ot_spec(Vec mu1, Mat sigma1) {
    require_square(sigma1, "gaussian_ot");
    if (mu1.size() != sigma1.rows()) throw DimensionError("gaussian_ot: mean/covariance dimension mismatch");
    GaussianOTSpec spec{std::move(mu1), std::move(sigma1), Mat{}, SymmetricEigen{}};
    spec.sqrt_sigma = sym_sqrt(spec.sigma1);
    spec.eig_a = symmetric_eigen(spec.sqrt_sigma);
    return spec;
}

/// Haar-ish orthogonal matrix: Gram-Schmidt on a Gaussian matrix drawn from
/// (seed, stream).
inline Mat random_orthogonal(std::size_t d, std::uint64_t seed, rng::Stream stream = rng::Stream::eval) {
    const rng::CounterRng rng(seed, stream);
    std::vector<Vec> cols;
    for (std::size_t j = 0; cols.size() < d; ++j) {
        Vec c(d);
        for (std::size_t i = 0; i < d; ++i) c[i] = rng.normal(j, i);
        for (int pass = 0; pass < 2; ++pass)
            for (const Vec& q : cols) c -= dot(q, c) * q;
        const double n = norm(c);
        if (n > 1e-8) cols.push_back((1.0 / n) * c);
    }
    Mat q(d, d);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < d; ++i) q(i, j) = cols[j][i];
    return q;
}

/// Q diag(lambda) Q^T with eigenvalues uniform in [lo, hi].
inline Mat random_spd(std::size_t d, std::uint64_t seed, double lo = 0.25, double hi = 4.0) {
    if (!(lo > 0.0) || hi < lo) throw ContractViolation("random_spd: need 0 < lo <= hi");
    const Mat q = random_orthogonal(d, seed, rng::Stream::eval);
    const rng::CounterRng rng(seed, rng::Stream::check);
    Mat out(d, d);
    for (std::size_t k = 0; k < d; ++k) {
        const double lam = lo + (hi - lo) * rng.uniform(k);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) out(i, j) += lam * q(i, k) * q(j, k);
    }
    return split_jacobian(out).strain;
}

/// Gaussian OT problem with a random SPD target covariance and N(0, I) mean.
inline GaussianOTSpec random_gaussian_ot_spec(std::size_t d, std::uint64_t seed) {
    const rng::CounterRng rng(seed, rng::Stream::time);
    Vec mu(d);
    for (std::size_t i = 0; i < d; ++i) mu[i] = rng.normal(i);
    return make_gaussian_ot_spec(std::move(mu), random_spd(d, seed));
}

class GaussianOTField final : public OTVelocityField {
public:
    explicit GaussianOTField(GaussianOTSpec spec) : spec_(std::move(spec)), d_(spec_.mu1.size()) {}

    std::size_t dimension() const override { return d_; }
    const GaussianOTSpec& spec() const noexcept { return spec_; }

    Vec eval(double t, const Vec& y) const override {
        check_dim(y);
        return a_minus_i() * preimage(t, y) + spec_.mu1;
    }

    Mat jacobian(double t, const Vec& y) const override {
        check_dim(y);
        return a_minus_i() * interp_inverse(t);
    }

    Vec time_partial(double t, const Vec& y) const override {
        check_dim(y);
        // d/dt M(t)^{-1} = -M^{-1} (A - I) M^{-1}, with M(t) = (1-t) I + t A.
        const Mat minv = interp_inverse(t);
        const Vec shifted = y - t * spec_.mu1;
        const Vec dx = -1.0 * (minv * (a_minus_i() * (minv * shifted))) - minv * spec_.mu1;
        return a_minus_i() * dx;
    }

    Vec transport_map(const Vec& x) const override {
        check_dim(x);
        return spec_.sqrt_sigma * x + spec_.mu1;
    }

    /// ((1-t) I + t A)^{-1} via the cached eigen-decomposition of A.
    Mat interp_inverse(double t) const {
        return spectral_apply(spec_.eig_a, [t](double s) {
            const double denom = (1.0 - t) + t * s;
            if (!(std::abs(denom) > 0.0)) throw NumericError("gaussian_ot: singular interpolation matrix");
            return 1.0 / denom;
        });
    }

    Vec preimage(double t, const Vec& y) const { return interp_inverse(t) * (y - t * spec_.mu1); }

private:
    Mat a_minus_i() const { return spec_.sqrt_sigma - Mat::identity(d_); }

    GaussianOTSpec spec_;
    std::size_t d_;
};

inline std::shared_ptr<GaussianOTField> gaussian_ot_field(GaussianOTSpec spec) {
    return std::make_shared<GaussianOTField>(std::move(spec));
}

/// Closed-form ||S^OT(t)||_F^2 = sum_i ((sigma_i - 1) / ((1-t) + t sigma_i))^2.
inline double gaussian_strain_norm_sq(const GaussianOTSpec& spec, double t) {
    double s = 0.0;
    for (double sigma : spec.eig_a.values) {
        const double lam = (sigma - 1.0) / ((1.0 - t) + t * sigma);
        s += lam * lam;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Quartic OT: Psi(x) = |x|^2/2 + (eps/4) sum x_i^4, T(x) = x + eps x^3.

struct QuarticOTSpec {
    double eps = 0.3;
    std::size_t dim = 2;
};

/// Solves x + t*eps*x^3 = y by Newton's method from x0 = y.
inline double invert_displacement(double t, double y, double eps) {
    if (t < 0.0 || t > 1.0 || eps < 0.0) throw ContractViolation("invert_displacement: need t in [0,1], eps >= 0");
    const double c = t * eps;
    if (c == 0.0) return y;
    const double tol = 1e-13 * std::max(1.0, std::abs(y));
    double x = y;
    for (int it = 0; it < 100; ++it) {
        const double residual = x + c * x * x * x - y;
        const double step = residual / (1.0 + 3.0 * c * x * x);
        x -= step;
        if (std::abs(residual) <= tol && std::abs(step) <= 1e-15 * std::max(1.0, std::abs(x))) return x;
    }
    if (std::abs(x + c * x * x * x - y) <= tol) return x;
    throw NumericError("invert_displacement: Newton iteration did not converge");
}

class QuarticOTField final : public OTVelocityField {
public:
    explicit QuarticOTField(QuarticOTSpec spec) : spec_(spec) {
        if (spec_.eps < 0.0 || spec_.eps > 1.0) throw DomainError("quartic_ot: eps must lie in [0, 1]");
        if (spec_.dim == 0) throw DimensionError("quartic_ot: dimension must be positive");
    }

    std::size_t dimension() const override { return spec_.dim; }
    const QuarticOTSpec& spec() const noexcept { return spec_; }

    Vec eval(double t, const Vec& y) const override {
        check_dim(y);
        Vec v(spec_.dim);
        for (std::size_t i = 0; i < spec_.dim; ++i) {
            const double x = invert_displacement(t, y[i], spec_.eps);
            v[i] = spec_.eps * x * x * x;
        }
        return v;
    }

    /// (H - I)[(1-t) I + t H]^{-1} with H = I + 3 eps diag(x^2); diagonal here.
    Mat jacobian(double t, const Vec& y) const override {
        check_dim(y);
        Mat j(spec_.dim, spec_.dim);
        for (std::size_t i = 0; i < spec_.dim; ++i) {
            const double x = invert_displacement(t, y[i], spec_.eps);
            const double h = 1.0 + 3.0 * spec_.eps * x * x;
            j(i, i) = (h - 1.0) / ((1.0 - t) + t * h);
        }
        return j;
    }

    Vec time_partial(double t, const Vec& y) const override {
        check_dim(y);
        return fd_time_partial4([&](double s) { return eval(s, y); }, t);
    }

    Vec transport_map(const Vec& x) const override {
        check_dim(x);
        Vec out(x);
        for (std::size_t i = 0; i < x.size(); ++i) out[i] += spec_.eps * x[i] * x[i] * x[i];
        return out;
    }

private:
    QuarticOTSpec spec_;
};

inline std::shared_ptr<QuarticOTField> quartic_ot_field(QuarticOTSpec spec) {
    return std::make_shared<QuarticOTField>(spec);
}

// ---------------------------------------------------------------------------
// Non-OT control: base + gamma sin(2 pi t) J x, J rotating pairs (0,1), (2,3), ...

/// Block rotation generator; a trailing odd coordinate is left untouched.
inline Mat rotation_blocks(std::size_t d) {
    Mat j(d, d);
    for (std::size_t i = 0; i + 1 < d; i += 2) {
        j(i, i + 1) = -1.0;
        j(i + 1, i) = 1.0;
    }
    return j;
}

struct PerturbSpec {
    double gamma = 0.5;
    FieldPtr base;
};

class PerturbedField final : public VelocityField {
public:
    explicit PerturbedField(PerturbSpec spec) : spec_(std::move(spec)) {
        if (!spec_.base) throw ContractViolation("perturbed_field: missing base field");
        if (spec_.base->dimension() < 2) throw DimensionError("perturbed_field: needs dimension >= 2");
        if (!std::isfinite(spec_.gamma)) throw DomainError("perturbed_field: gamma must be finite");
        rot_ = rotation_blocks(spec_.base->dimension());
    }

    std::size_t dimension() const override { return spec_.base->dimension(); }
    const PerturbSpec& spec() const noexcept { return spec_; }

    Vec eval(double t, const Vec& x) const override { return spec_.base->eval(t, x) + omega(t) * (rot_ * x); }

    std::vector<Vec> eval_batch(double t, std::span<const Vec> xs) const override {
        std::vector<Vec> out = spec_.base->eval_batch(t, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] += omega(t) * (rot_ * xs[i]);
        return out;
    }

    Mat jacobian(double t, const Vec& x) const override { return spec_.base->jacobian(t, x) + omega(t) * rot_; }

    Vec time_partial(double t, const Vec& x) const override {
        const double domega = spec_.gamma * 2.0 * std::numbers::pi * std::cos(2.0 * std::numbers::pi * t);
        return spec_.base->time_partial(t, x) + domega * (rot_ * x);
    }

private:
    double omega(double t) const { return spec_.gamma * std::sin(2.0 * std::numbers::pi * t); }

    PerturbSpec spec_;
    Mat rot_;
};

inline std::shared_ptr<PerturbedField> perturbed_field(PerturbSpec spec) {
    return std::make_shared<PerturbedField>(std::move(spec));
}

// ---------------------------------------------------------------------------

/// v(t, x) = A x + c.
class LinearField final : public VelocityField {
public:
    LinearField(Mat a, Vec c) : a_(std::move(a)), c_(std::move(c)) {
        require_square(a_, "linear_field");
        if (c_.size() != a_.rows()) throw DimensionError("linear_field: offset dimension mismatch");
    }
    explicit LinearField(Mat a) : LinearField(a, Vec(a.rows())) {}

    std::size_t dimension() const override { return a_.rows(); }
    const Mat& matrix() const noexcept { return a_; }
    Vec eval(double, const Vec& x) const override { return a_ * x + c_; }
    Mat jacobian(double, const Vec&) const override { return a_; }
    Vec time_partial(double, const Vec&) const override { return Vec(dimension()); }

private:
    Mat a_;
    Vec c_;
};

/// Field assembled from closures; the Jacobian and time partial fall back to
/// central differences when not supplied.
class LambdaField final : public VelocityField {
public:
    using EvalFn = std::function<Vec(double, const Vec&)>;
    using JacFn = std::function<Mat(double, const Vec&)>;

    LambdaField(std::size_t dim, EvalFn f, JacFn jac = {}, EvalFn dt = {})
        : dim_(dim), f_(std::move(f)), jac_(std::move(jac)), dt_(std::move(dt)) {}

    std::size_t dimension() const override { return dim_; }
    Vec eval(double t, const Vec& x) const override { return f_(t, x); }

    Mat jacobian(double t, const Vec& x) const override {
        if (jac_) return jac_(t, x);
        constexpr double h = 1e-6;
        Mat j(dim_, dim_);
        for (std::size_t k = 0; k < dim_; ++k) {
            Vec xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            const Vec col = (f_(t, xp) - f_(t, xm)) * (0.5 / h);
            for (std::size_t i = 0; i < dim_; ++i) j(i, k) = col[i];
        }
        return j;
    }

    Vec time_partial(double t, const Vec& x) const override {
        if (dt_) return dt_(t, x);
        return fd_time_partial([&](double s) { return f_(s, x); }, t);
    }

private:
    std::size_t dim_;
    EvalFn f_;
    JacFn jac_;
    EvalFn dt_;
};

}  // namespace strainflow
