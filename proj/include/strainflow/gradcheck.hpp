#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "strainflow/rng.hpp"
#include "strainflow/tensor.hpp"

namespace strainflow {

/// Loss evaluated at a flat parameter vector. When `grad` is non-null the
/// callee also fills the reverse-mode gradient.
using LossFn = std::function<double(std::span<const double> params, std::vector<double>* grad)>;

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Compares the reverse-mode gradient against central differences on a random
/// subsample of coordinates. Step for coordinate i is step * max(1, |p_i|);
/// the relative error uses max(|analytic|, |numeric|, 1e-6) as denominator.
inline GradcheckReport gradcheck(std::span<const double> params, const LossFn& loss, double tol, std::uint64_t seed = 0,
                                 std::size_t coords = 64, double step = 1e-4) {
    std::vector<double> grad;
    loss(params, &grad);
    if (grad.size() != params.size()) throw ContractViolation("gradcheck: gradient length differs from parameter count");

    std::vector<std::size_t> idx(params.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (coords < idx.size()) {
        rng::Sequence draw(seed, rng::Stream::check);
        for (std::size_t i = 0; i < coords; ++i) std::swap(idx[i], idx[i + draw.below(idx.size() - i)]);
        idx.resize(coords);
    }

    GradcheckReport report;
    report.tolerance = tol;
    std::vector<double> probe(params.begin(), params.end());
    for (std::size_t i : idx) {
        const double h = step * std::max(1.0, std::abs(params[i]));
        probe[i] = params[i] + h;
        const double up = loss(probe, nullptr);
        probe[i] = params[i] - h;
        const double down = loss(probe, nullptr);
        probe[i] = params[i];
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(grad[i]), std::abs(numeric), 1e-6});
        const double rel = std::abs(grad[i] - numeric) / denom;
        if (rel > report.max_rel_error || report.checked == 0) {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.worst_analytic = grad[i];
            report.worst_numeric = numeric;
        }
        ++report.checked;
    }
    report.passed = report.max_rel_error <= tol;
    return report;
}

}  // namespace strainflow
