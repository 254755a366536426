#pragma once

// Fixed-step integration of velocity fields on t in [0, 1], reference
// endpoints and log-log convergence fits.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "strainflow/fields.hpp"
#include "strainflow/tensor.hpp"

namespace strainflow {

class IntegrationError : public NumericError {
public:
    IntegrationError(std::size_t step, const std::string& what)
        : NumericError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;

    std::size_t steps() const noexcept { return times.empty() ? 0 : times.size() - 1; }
    const Vec& start() const { return states.front(); }
    const Vec& endpoint() const { return states.back(); }
};

/// Grid time t_n = n / N, so the last node is exactly 1.
inline double grid_time(std::size_t n, std::size_t N) { return static_cast<double>(n) / static_cast<double>(N); }

namespace detail {

inline void require_steps(std::size_t N, const char* what) {
    if (N < 1) throw ContractViolation(std::string(what) + ": N must be >= 1");
}

inline void check_finite_states(std::span<const Vec> xs, std::size_t step) {
    for (const Vec& x : xs)
        if (!x.is_finite()) throw IntegrationError(step, "non-finite state");
}

}  // namespace detail

/// Euler on a batch of initial conditions; `visit(n, states)` sees every
/// grid node including n = 0 and n = N.
inline std::vector<Vec> euler_batch(const VelocityField& field, std::span<const Vec> x0s, std::size_t N,
                                    const std::function<void(std::size_t, std::span<const Vec>)>& visit = {}) {
    detail::require_steps(N, "euler");
    std::vector<Vec> xs(x0s.begin(), x0s.end());
    for (const Vec& x : xs)
        if (x.size() != field.dimension()) throw DimensionError("euler: initial condition has wrong dimension");
    const double h = 1.0 / static_cast<double>(N);
    if (visit) visit(0, xs);
    for (std::size_t n = 0; n < N; ++n) {
        const std::vector<Vec> v = field.eval_batch(grid_time(n, N), xs);
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += h * v[i];
        detail::check_finite_states(xs, n + 1);
        if (visit) visit(n + 1, xs);
    }
    return xs;
}

inline std::vector<Trajectory> euler_trajectories(const VelocityField& field, std::span<const Vec> x0s, std::size_t N) {
    std::vector<Trajectory> out(x0s.size());
    for (Trajectory& tr : out) {
        tr.times.reserve(N + 1);
        tr.states.reserve(N + 1);
    }
    euler_batch(field, x0s, N, [&](std::size_t n, std::span<const Vec> xs) {
        for (std::size_t i = 0; i < xs.size(); ++i) {
            out[i].times.push_back(grid_time(n, N));
            out[i].states.push_back(xs[i]);
        }
    });
    return out;
}

inline Trajectory euler_integrate(const VelocityField& field, const Vec& x0, std::size_t N) {
    const Vec xs[] = {x0};
    return std::move(euler_trajectories(field, xs, N)[0]);
}

/// Classical four-stage Runge-Kutta endpoints.
inline std::vector<Vec> rk4_batch(const VelocityField& field, std::span<const Vec> x0s, std::size_t N) {
    detail::require_steps(N, "rk4");
    std::vector<Vec> xs(x0s.begin(), x0s.end());
    const double h = 1.0 / static_cast<double>(N);
    std::vector<Vec> stage(xs.size());
    for (std::size_t n = 0; n < N; ++n) {
        const double t = grid_time(n, N);
        const std::vector<Vec> k1 = field.eval_batch(t, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) stage[i] = xs[i] + (0.5 * h) * k1[i];
        const std::vector<Vec> k2 = field.eval_batch(t + 0.5 * h, stage);
        for (std::size_t i = 0; i < xs.size(); ++i) stage[i] = xs[i] + (0.5 * h) * k2[i];
        const std::vector<Vec> k3 = field.eval_batch(t + 0.5 * h, stage);
        for (std::size_t i = 0; i < xs.size(); ++i) stage[i] = xs[i] + h * k3[i];
        const std::vector<Vec> k4 = field.eval_batch(grid_time(n + 1, N), stage);
        for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        detail::check_finite_states(xs, n + 1);
    }
    return xs;
}

inline constexpr std::size_t kReferenceSteps = 500;
inline constexpr std::size_t kReferenceRk4Steps = 200;

struct ReferenceEndpoints {
    std::vector<Vec> endpoints;      // Euler at kReferenceSteps
    double rk4_mean_discrepancy = 0.0;
    double rk4_max_discrepancy = 0.0;
};

/// Euler at N = 500, cross-checked against RK4 at N = 200.
inline ReferenceEndpoints reference_endpoints(const VelocityField& field, std::span<const Vec> x0s, bool cross_check = true) {
    ReferenceEndpoints ref{euler_batch(field, x0s, kReferenceSteps), 0.0, 0.0};
    if (cross_check && !x0s.empty()) {
        const std::vector<Vec> rk = rk4_batch(field, x0s, kReferenceRk4Steps);
        for (std::size_t i = 0; i < rk.size(); ++i) {
            const double e = norm(rk[i] - ref.endpoints[i]);
            ref.rk4_mean_discrepancy += e;
            ref.rk4_max_discrepancy = std::max(ref.rk4_max_discrepancy, e);
        }
        ref.rk4_mean_discrepancy /= static_cast<double>(rk.size());
    }
    return ref;
}

inline Vec reference_endpoint(const VelocityField& field, const Vec& x0) {
    const Vec xs[] = {x0};
    return reference_endpoints(field, xs, false).endpoints[0];
}

/// phi_1(x0) = T(x0) for fields with a known transport map.
inline Vec exact_ot_endpoint(const VelocityField& field, const Vec& x0) {
    const auto* ot = dynamic_cast<const OTVelocityField*>(&field);
    if (!ot) throw ContractViolation("exact_ot_endpoint: field has no known transport map");
    return ot->transport_map(x0);
}

struct EndpointError {
    double mean = 0.0;
    double max = 0.0;
};

/// Mean and max Euclidean distance between paired endpoints.
inline EndpointError endpoint_error(std::span<const Vec> a, std::span<const Vec> b) {
    if (a.size() != b.size() || a.empty()) throw DimensionError("endpoint_error: need equal, non-empty sample sets");
    EndpointError e;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = norm(a[i] - b[i]);
        e.mean += d;
        e.max = std::max(e.max, d);
    }
    e.mean /= static_cast<double>(a.size());
    return e;
}

// ---------------------------------------------------------------------------

inline constexpr double kErrorFloor = 1e-12;

struct ConvergenceSeries {
    std::vector<std::size_t> N;
    std::vector<double> h;
    std::vector<double> mean_error;
    std::vector<double> max_error;
    double slope = 0.0;
    double intercept = 0.0;
    std::size_t points_fitted = 0;
    bool exact = false;  // fewer than three points above the floor
};

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Ordinary least squares y = slope * x + intercept.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractViolation("fit_line: need >= 2 paired points");
    const auto n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw ContractViolation("fit_line: x values are all equal");
    return {sxy / sxx, my - (sxy / sxx) * mx};
}

using EndpointOracle = std::function<std::vector<Vec>(std::span<const Vec>)>;

inline EndpointOracle exact_ot_oracle(const VelocityField& field) {
    return [&field](std::span<const Vec> x0s) {
        std::vector<Vec> out;
        out.reserve(x0s.size());
        for (const Vec& x : x0s) out.push_back(exact_ot_endpoint(field, x));
        return out;
    };
}

inline EndpointOracle reference_oracle(const VelocityField& field) {
    return [&field](std::span<const Vec> x0s) { return reference_endpoints(field, x0s, false).endpoints; };
}

/// High-resolution RK4 endpoints, for fields without a closed-form flow.
inline EndpointOracle rk4_oracle(const VelocityField& field, std::size_t steps = 1000) {
    return [&field, steps](std::span<const Vec> x0s) { return rk4_batch(field, x0s, steps); };
}

/// Euler endpoint error against `oracle` for each N, with a log10-log10 fit
/// of error against h over the points above kErrorFloor.
inline ConvergenceSeries convergence_study(const VelocityField& field, std::span<const Vec> x0s,
                                           std::span<const std::size_t> N_list, const EndpointOracle& oracle) {
    if (N_list.size() < 3) throw ContractViolation("convergence_study: need >= 3 step sizes");
    for (std::size_t i = 0; i < N_list.size(); ++i) {
        if (N_list[i] < 1) throw ContractViolation("convergence_study: N must be >= 1");
        if (i > 0 && N_list[i] <= N_list[i - 1]) throw ContractViolation("convergence_study: N list must be strictly increasing");
    }
    const std::vector<Vec> truth = oracle(x0s);
    ConvergenceSeries s;
    std::vector<double> lx, ly;
    for (std::size_t N : N_list) {
        const std::vector<Vec> ends = euler_batch(field, x0s, N);
        const EndpointError e = endpoint_error(ends, truth);
        s.N.push_back(N);
        s.h.push_back(1.0 / static_cast<double>(N));
        s.mean_error.push_back(e.mean);
        s.max_error.push_back(e.max);
        if (e.mean >= kErrorFloor) {
            lx.push_back(std::log10(s.h.back()));
            ly.push_back(std::log10(e.mean));
        }
    }
    s.points_fitted = lx.size();
    if (lx.size() < 3) {
        s.exact = true;
        return s;
    }
    const LineFit fit = fit_line(lx, ly);
    s.slope = fit.slope;
    s.intercept = fit.intercept;
    return s;
}

}  // namespace strainflow
