#pragma once

// Sample quality and trajectory geometry: L2@k against the NFE=500
// reference, sliced Wasserstein, straightness and strain profiles.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "strainflow/fields.hpp"
#include "strainflow/integrate.hpp"
#include "strainflow/rng.hpp"
#include "strainflow/tensor.hpp"

namespace strainflow {

/// Mean endpoint distance between Euler at k steps and the given reference.
inline double l2_at_k(const VelocityField& field, std::span<const Vec> x0s, std::size_t k, std::span<const Vec> reference) {
    if (k < 1) throw ContractViolation("l2_at_k: k must be >= 1");
    return endpoint_error(euler_batch(field, x0s, k), reference).mean;
}

inline double l2_at_k(const VelocityField& field, std::span<const Vec> x0s, std::size_t k) {
    const std::vector<Vec> ref = euler_batch(field, x0s, kReferenceSteps);
    return l2_at_k(field, x0s, k, ref);
}

inline constexpr std::size_t kDefaultProjections = 128;

/// Unit direction p drawn uniformly from the sphere in R^d.
inline Vec projection_direction(std::size_t d, std::size_t p, std::uint64_t seed) {
    const rng::CounterRng rng(seed, rng::Stream::projections);
    for (std::uint64_t attempt = 0;; ++attempt) {
        Vec u(d);
        for (std::size_t k = 0; k < d; ++k) u[k] = rng.normal(p, attempt * d + k);
        const double n = norm(u);
        if (n > 1e-12) return (1.0 / n) * u;
    }
}

/// 1D 2-Wasserstein distance between equal-size samples by sorted matching.
inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
    if (a.size() != b.size() || a.empty()) throw DimensionError("wasserstein_1d: need equal, non-empty samples");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s / static_cast<double>(a.size()));
}

/// Mean over n_proj random directions of the projected 1D W2 distance.
inline double sliced_wasserstein(std::span<const Vec> X, std::span<const Vec> Y, std::size_t n_proj = kDefaultProjections,
                                 std::uint64_t seed = 0) {
    if (X.size() != Y.size()) throw DimensionError("sliced_wasserstein: sample counts differ; resample to equal size");
    if (X.empty()) throw DimensionError("sliced_wasserstein: empty samples");
    if (n_proj < 1) throw ContractViolation("sliced_wasserstein: n_proj must be >= 1");
    const std::size_t d = X[0].size();
    std::vector<double> px(X.size()), py(Y.size());
    double total = 0.0;
    for (std::size_t p = 0; p < n_proj; ++p) {
        const Vec u = projection_direction(d, p, seed);
        for (std::size_t i = 0; i < X.size(); ++i) {
            px[i] = dot(u, X[i]);
            py[i] = dot(u, Y[i]);
        }
        total += wasserstein_1d(px, py);
    }
    return total / static_cast<double>(n_proj);
}

/// Chord length over path length, averaged over trajectories. Paths of zero
/// length count as straight.
inline double straightness(std::span<const Trajectory> trajectories) {
    if (trajectories.empty()) throw ContractViolation("straightness: no trajectories");
    double total = 0.0;
    for (const Trajectory& tr : trajectories) {
        if (tr.states.size() < 2) throw ContractViolation("straightness: trajectory needs >= 2 points");
        double path = 0.0;
        for (std::size_t n = 0; n + 1 < tr.states.size(); ++n) path += norm(tr.states[n + 1] - tr.states[n]);
        const double chord = norm(tr.endpoint() - tr.start());
        total += path > 0.0 ? std::min(1.0, chord / path) : 1.0;
    }
    return total / static_cast<double>(trajectories.size());
}

struct StrainProfile {
    std::vector<double> t_grid;
    std::vector<double> mean_strain_frob;
    std::vector<double> mean_vort_frob;
};

/// Batch-mean |S|_F and |Omega|_F at each node of Euler trajectories.
inline StrainProfile strain_profile(const VelocityField& field, std::span<const Vec> x0s, std::size_t grid_N) {
    if (grid_N < 8) throw ContractViolation("strain_profile: grid_N must be >= 8");
    if (x0s.empty()) throw ContractViolation("strain_profile: no initial conditions");
    StrainProfile prof;
    euler_batch(field, x0s, grid_N, [&](std::size_t n, std::span<const Vec> xs) {
        const double t = grid_time(n, grid_N);
        double s = 0.0, w = 0.0;
        for (const PointDerivatives& p : field.derivatives_batch(t, xs)) {
            const JacobianSplit sp = split_jacobian(p.jac);
            s += frobenius(sp.strain);
            w += frobenius(sp.vorticity);
        }
        prof.t_grid.push_back(t);
        prof.mean_strain_frob.push_back(s / static_cast<double>(xs.size()));
        prof.mean_vort_frob.push_back(w / static_cast<double>(xs.size()));
    });
    return prof;
}

struct MetricRow {
    std::size_t nfe = 0;
    double l2 = 0.0;
    double sw = 0.0;
    double straightness = 0.0;
};

/// One row per NFE: L2 against `reference` endpoints, SW of the Euler
/// samples against `target` samples, straightness of the Euler paths.
inline std::vector<MetricRow> metric_rows(const VelocityField& field, std::span<const Vec> x0s, std::span<const std::size_t> nfes,
                                          std::span<const Vec> reference, std::span<const Vec> target,
                                          std::size_t n_proj = kDefaultProjections, std::uint64_t seed = 0) {
    std::vector<MetricRow> rows;
    for (std::size_t k : nfes) {
        const std::vector<Trajectory> trs = euler_trajectories(field, x0s, k);
        std::vector<Vec> ends;
        ends.reserve(trs.size());
        for (const Trajectory& tr : trs) ends.push_back(tr.endpoint());
        rows.push_back({k, endpoint_error(ends, reference).mean, sliced_wasserstein(ends, target, n_proj, seed), straightness(trs)});
    }
    return rows;
}

}  // namespace strainflow
