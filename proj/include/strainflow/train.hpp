#pragma once

// Flow-matching training on the pinwheel benchmark with the weighted
// strain/vorticity Jacobian penalty (exact or Hutchinson), optimized by Adam.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "strainflow/autodiff.hpp"
#include "strainflow/network.hpp"
#include "strainflow/rng.hpp"
#include "strainflow/tensor.hpp"

namespace strainflow {

enum class RegMode { exact, hutchinson };

inline std::string to_string(RegMode m) { return m == RegMode::exact ? "exact" : "hutchinson"; }

inline RegMode parse_reg_mode(const std::string& s) {
    if (s == "exact") return RegMode::exact;
    if (s == "hutchinson") return RegMode::hutchinson;
    throw std::invalid_argument("unknown reg_mode '" + s + "'");
}

struct TrainConfig {
    double alpha = 0.0;   // strain weight
    double beta = 0.0;    // vorticity weight
    double lr = 1e-3;
    std::size_t batch = 512;
    std::size_t epochs = 2000;
    std::uint64_t seed = 0;
    double sigma_min = 0.0;
    RegMode reg_mode = RegMode::exact;
    std::size_t probes = 1;
    ModelKind model_kind = ModelKind::mlp;
    std::size_t log_every = 100;
    std::size_t hidden = 256;
    std::size_t depth = 5;
    double fd_step = 1e-4;
    std::size_t eval_samples = 4096;

    void validate() const {
        auto finite = [](double v) { return std::isfinite(v); };
        if (!finite(alpha) || !finite(beta) || !finite(lr) || !finite(sigma_min) || !finite(fd_step))
            throw std::invalid_argument("train config: numeric fields must be finite");
        if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("train config: alpha and beta must be >= 0");
        if (batch < 1 || probes < 1 || log_every < 1 || eval_samples < 1)
            throw std::invalid_argument("train config: batch, probes, log_every and eval_samples must be >= 1");
        if (sigma_min < 0.0 || sigma_min >= 1.0) throw std::invalid_argument("train config: sigma_min must lie in [0, 1)");
        if (depth < 2 || hidden < 1) throw std::invalid_argument("train config: need depth >= 2 and hidden >= 1");
    }
};

/// alpha * d, comparable across dimensions.
inline double normalized_weight(double alpha, std::size_t d) {
    if (d < 1) throw ContractViolation("normalized_weight: d must be >= 1");
    return alpha * static_cast<double>(d);
}

// ---------------------------------------------------------------------------
// Pinwheel data: five arms with a radial twist, standardized per axis.

inline constexpr int kPinwheelArms = 5;
inline constexpr double kPinwheelTwist = 0.25;
inline constexpr double kPinwheelRadialStd = 0.3;
inline constexpr double kPinwheelAngularStd = 0.05;
inline constexpr double kPinwheelScale = 2.0;
// Population statistics of the raw construction: mean 0 by the five-fold
// symmetry, per-axis variance E[r^2]/2 = scale^2 (1 + radial_std^2) / 2.
inline constexpr double kPinwheelMean = 0.0;
inline const double kPinwheelStd =
    std::sqrt(kPinwheelScale * kPinwheelScale * (1.0 + kPinwheelRadialStd * kPinwheelRadialStd) / 2.0);

namespace lanes {
inline constexpr std::uint64_t source = 0;   // + coordinate
inline constexpr std::uint64_t arm = 64;
inline constexpr std::uint64_t radial = 65;
inline constexpr std::uint64_t jitter = 66;
inline constexpr std::uint64_t time = 67;
inline constexpr std::uint64_t probe = 128;  // + probe * d + coordinate
}  // namespace lanes

/// One pinwheel point per column, drawn from sample indices [first, first+n).
inline Matrix pinwheel_matrix(std::size_t n, const rng::CounterRng& rng, std::uint64_t first = 0) {
    Matrix pts(2, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t idx = first + i;
        const auto arm = static_cast<double>(rng.below(idx, kPinwheelArms, lanes::arm));
        const double r = kPinwheelScale * std::abs(1.0 + kPinwheelRadialStd * rng.normal(idx, lanes::radial));
        const double theta = 2.0 * std::numbers::pi * arm / kPinwheelArms + kPinwheelTwist * r +
                             kPinwheelAngularStd * rng.normal(idx, lanes::jitter);
        pts(0, static_cast<Eigen::Index>(i)) = (r * std::cos(theta) - kPinwheelMean) / kPinwheelStd;
        pts(1, static_cast<Eigen::Index>(i)) = (r * std::sin(theta) - kPinwheelMean) / kPinwheelStd;
    }
    return pts;
}

inline std::vector<Vec> sample_pinwheel(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ContractViolation("sample_pinwheel: n must be >= 1");
    return unpack_points(pinwheel_matrix(n, rng::CounterRng(seed, rng::Stream::data)));
}

inline Matrix gaussian_matrix(std::size_t d, std::size_t n, const rng::CounterRng& rng, std::uint64_t lane0 = lanes::source) {
    Matrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = rng.normal(i, lane0 + k);
    return m;
}

inline std::vector<Vec> sample_gaussian(std::size_t d, std::size_t n, std::uint64_t seed, rng::Stream stream = rng::Stream::eval) {
    return unpack_points(gaussian_matrix(d, n, rng::CounterRng(seed, stream)));
}

// ---------------------------------------------------------------------------

/// Conditional OT path: x_t = (1 - (1 - sigma_min) t) x0 + t x1, target
/// u_t = x1 - (1 - sigma_min) x0.
inline std::pair<Vec, Vec> interpolate(const Vec& x0, const Vec& x1, double t, double sigma_min) {
    if (x0.size() != x1.size()) throw DimensionError("interpolate: dimension mismatch");
    Vec xt = (1.0 - (1.0 - sigma_min) * t) * x0 + t * x1;
    Vec ut = x1 - (1.0 - sigma_min) * x0;
    return {std::move(xt), std::move(ut)};
}

/// Columns are samples: source x0, target x1, times t.
struct Batch {
    Matrix x0;
    Matrix x1;
    Eigen::RowVectorXd t;

    Eigen::Index size() const { return x0.cols(); }
    Matrix xt(double sigma_min) const {
        Matrix out = x0;
        for (Eigen::Index i = 0; i < size(); ++i) out.col(i) = (1.0 - (1.0 - sigma_min) * t(i)) * x0.col(i) + t(i) * x1.col(i);
        return out;
    }
    Matrix target(double sigma_min) const { return x1 - (1.0 - sigma_min) * x0; }
};

/// Batch for a given (seed, stream, epoch): x0 ~ N(0, I), x1 ~ pinwheel, t ~ U[0,1].
inline Batch sample_batch(std::size_t n, std::uint64_t seed, std::uint64_t epoch, rng::Stream stream = rng::Stream::data) {
    const rng::CounterRng rng(seed, stream, epoch);
    Batch b{gaussian_matrix(2, n, rng), pinwheel_matrix(n, rng), Eigen::RowVectorXd(static_cast<Eigen::Index>(n))};
    for (std::size_t i = 0; i < n; ++i) b.t(static_cast<Eigen::Index>(i)) = rng.uniform(i, lanes::time);
    return b;
}

// ---------------------------------------------------------------------------
// Loss terms on the tape.

/// Batch means of ||S||_F^2 and ||Omega||_F^2 (and their sum) built from
/// the per-entry Jacobian rows of a velocity graph.
struct PenaltyVars {
    ad::Var strain_sq;
    ad::Var vort_sq;
    ad::Var jac_sq;
};

inline PenaltyVars penalty_exact(const VelocityGraph& g) {
    using namespace ad;
    const std::size_t d = g.jac.size();
    if (d == 0) throw ContractViolation("penalty_exact: velocity graph has no Jacobian");
    Tape& tape = *g.velocity.tape;
    const double inv_n = 1.0 / static_cast<double>(g.velocity.cols());
    std::vector<Var> strain_terms, vort_terms, full_terms;
    for (std::size_t i = 0; i < d; ++i) {
        strain_terms.push_back(sum_squares(g.jac[i][i]));
        for (std::size_t k = 0; k < d; ++k) full_terms.push_back(sum_squares(g.jac[i][k]));
        for (std::size_t k = i + 1; k < d; ++k) {
            // 2 * ((a + b) / 2)^2 = (a + b)^2 / 2, likewise for the vorticity.
            strain_terms.push_back(scale(sum_squares(add(g.jac[i][k], g.jac[k][i])), 0.5));
            vort_terms.push_back(scale(sum_squares(sub(g.jac[i][k], g.jac[k][i])), 0.5));
        }
    }
    auto total = [&](const std::vector<Var>& parts) {
        if (parts.empty()) return tape.constant(Matrix::Zero(1, 1));
        Var acc = parts[0];
        for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
        return scale(acc, inv_n);
    };
    return PenaltyVars{total(strain_terms), total(vort_terms), total(full_terms)};
}

/// Hutchinson estimates from Rademacher probes z: ||J||_F^2 ~ |J^T z|^2 and
/// tr(J^2) ~ <J^T z, J z>, with J^T z a reverse-mode product recorded on the
/// tape and J z a central finite difference of the network along z.
/// Returns batch means averaged over probes.
struct HutchinsonVars {
    ad::Var strain_sq;
    ad::Var vort_sq;
    ad::Var jac_sq;
};

inline Matrix rademacher_matrix(std::size_t d, std::size_t n, const rng::CounterRng& rng, std::size_t probe) {
    Matrix z(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k)
            z(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = rng.rademacher(i, lanes::probe + probe * d + k);
    return z;
}

inline HutchinsonVars penalty_hutchinson(ad::Tape& tape, const NetworkVars& net, ModelKind kind, const Matrix& x,
                                         const Eigen::RowVectorXd& t, std::size_t probes, double fd_step,
                                         const rng::CounterRng& probe_rng, bool need_trace,
                                         const VelocityGraph* primal = nullptr) {
    using namespace ad;
    if (probes < 1) throw ContractViolation("penalty_hutchinson: probes must be >= 1");
    const std::size_t d = static_cast<std::size_t>(x.rows());
    const Eigen::Index n = x.cols();
    const double inv = 1.0 / (static_cast<double>(n) * static_cast<double>(probes));
    std::vector<Var> frob_terms, trace_terms;

    if (kind == ModelKind::potential) {
        // J is the Hessian of phi, so J^T z = J z = mixed second derivative along (e_i, z).
        const Var input = tape.constant(pack_input(x, t));
        std::vector<Var> dirs;
        for (std::size_t k = 0; k < d; ++k) dirs.push_back(tape.constant(basis_direction(d + 1, k, n)));
        std::vector<DirectionPair> pairs;
        for (std::size_t p = 0; p < probes; ++p) {
            Matrix zin = Matrix::Zero(static_cast<Eigen::Index>(d + 1), n);
            zin.topRows(static_cast<Eigen::Index>(d)) = rademacher_matrix(d, static_cast<std::size_t>(n), probe_rng, p);
            dirs.push_back(tape.constant(std::move(zin)));
            for (std::size_t i = 0; i < d; ++i) pairs.push_back({i, d + p});
        }
        const GraphJet jet = forward_jet(tape, net, input, dirs, pairs);
        for (std::size_t p = 0; p < probes; ++p) {
            std::vector<Var> rows_hz(jet.second.begin() + static_cast<std::ptrdiff_t>(p * d),
                                     jet.second.begin() + static_cast<std::ptrdiff_t>((p + 1) * d));
            const Var hz = concat_rows(rows_hz);
            frob_terms.push_back(sum_squares(hz));
            trace_terms.push_back(sum_squares(hz));
        }
    } else {
        std::optional<VelocityGraph> own;
        if (!primal) own = velocity_graph(tape, net, kind, d, x, t, false);
        const VelocityGraph& g = primal ? *primal : *own;
        const double eta = fd_step / std::sqrt(static_cast<double>(d));
        for (std::size_t p = 0; p < probes; ++p) {
            const Matrix z = rademacher_matrix(d, static_cast<std::size_t>(n), probe_rng, p);
            const Var jtz = rows(input_vjp(net, g.jet, tape.constant(z)), 0, static_cast<Eigen::Index>(d));
            frob_terms.push_back(sum_squares(jtz));
            if (need_trace) {
                const Var up = forward_jet(tape, net, tape.constant(pack_input(x + eta * z, t)), {}).value;
                const Var down = forward_jet(tape, net, tape.constant(pack_input(x - eta * z, t)), {}).value;
                const Var jz = scale(sub(up, down), 0.5 / eta);
                trace_terms.push_back(dot_sum(jtz, jz));
            }
        }
    }

    auto mean_of = [&](const std::vector<Var>& parts) {
        Var acc = parts[0];
        for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
        return scale(acc, inv);
    };
    const Var frob = mean_of(frob_terms);
    if (!need_trace && kind != ModelKind::potential) return HutchinsonVars{frob, frob, frob};
    const Var trace = mean_of(trace_terms);
    return HutchinsonVars{scale(add(frob, trace), 0.5), scale(sub(frob, trace), 0.5), frob};
}

/// fm + alpha * strain + beta * vorticity on one batch.
struct ObjectiveVars {
    ad::Var fm;
    ad::Var reg;
    ad::Var total;
    std::optional<ad::Var> strain_sq;
    std::optional<ad::Var> vort_sq;
};

inline ObjectiveVars build_objective(ad::Tape& tape, const NetworkVars& net, const TrainConfig& cfg, const Batch& batch,
                                     std::uint64_t epoch) {
    using namespace ad;
    const std::size_t d = static_cast<std::size_t>(batch.x0.rows());
    const Matrix xt = batch.xt(cfg.sigma_min);
    const bool regularized = cfg.alpha > 0.0 || cfg.beta > 0.0;
    const bool exact_jac = regularized && cfg.reg_mode == RegMode::exact;
    const VelocityGraph g = velocity_graph(tape, net, cfg.model_kind, d, xt, batch.t, exact_jac);
    const Var target = tape.constant(batch.target(cfg.sigma_min));
    const Var fm = scale(sum_squares(sub(g.velocity, target)), 1.0 / static_cast<double>(batch.size()));

    ObjectiveVars out{fm, tape.constant(Matrix::Zero(1, 1)), fm, std::nullopt, std::nullopt};
    if (!regularized) return out;

    const bool tie = cfg.alpha == cfg.beta;
    if (exact_jac) {
        const PenaltyVars pen = penalty_exact(g);
        out.strain_sq = pen.strain_sq;
        out.vort_sq = pen.vort_sq;
        out.reg = tie ? scale(pen.jac_sq, cfg.alpha)
                      : add(scale(pen.strain_sq, cfg.alpha), scale(pen.vort_sq, cfg.beta));
    } else {
        const rng::CounterRng probe_rng(cfg.seed, rng::Stream::probes, epoch);
        const HutchinsonVars est = penalty_hutchinson(tape, net, cfg.model_kind, xt, batch.t, cfg.probes, cfg.fd_step,
                                                      probe_rng, !tie, &g);
        out.strain_sq = est.strain_sq;
        out.vort_sq = est.vort_sq;
        out.reg = tie ? scale(est.jac_sq, cfg.alpha)
                      : add(scale(est.strain_sq, cfg.alpha), scale(est.vort_sq, cfg.beta));
    }
    out.total = add(fm, out.reg);
    return out;
}

// ---------------------------------------------------------------------------
// Plain numeric evaluation of the losses (no parameter gradient).

struct PenaltyValues {
    double strain_sq = 0.0;
    double vort_sq = 0.0;
};

inline double fm_loss(const Model& model, const Batch& batch, double sigma_min) {
    if (batch.size() == 0) throw ContractViolation("fm_loss: empty batch");
    const Matrix v = model_velocity(model, batch.xt(sigma_min), batch.t);
    return (v - batch.target(sigma_min)).squaredNorm() / static_cast<double>(batch.size());
}

/// Exact penalty at the points (x, t) from forward-mode Jacobians.
inline PenaltyValues penalty_exact(const Model& model, const Matrix& x, const Eigen::RowVectorXd& t) {
    const ModelDerivatives md = model_derivatives(model, x, t, true, false);
    const std::size_t d = model.dim();
    PenaltyValues out;
    for (std::size_t i = 0; i < d; ++i) {
        out.strain_sq += md.jac[i][i].squaredNorm();
        for (std::size_t k = i + 1; k < d; ++k) {
            out.strain_sq += 0.5 * (md.jac[i][k] + md.jac[k][i]).squaredNorm();
            out.vort_sq += 0.5 * (md.jac[i][k] - md.jac[k][i]).squaredNorm();
        }
    }
    const auto n = static_cast<double>(x.cols());
    out.strain_sq /= n;
    out.vort_sq /= n;
    return out;
}

inline PenaltyValues penalty_hutchinson(const Model& model, const Matrix& x, const Eigen::RowVectorXd& t, std::size_t probes,
                                        double fd_step, std::uint64_t seed) {
    ad::Tape tape;
    const NetworkVars net = bind_parameters(tape, model.params, false);
    const rng::CounterRng probe_rng(seed, rng::Stream::probes);
    const HutchinsonVars est = penalty_hutchinson(tape, net, model.kind, x, t, probes, fd_step, probe_rng, true);
    return PenaltyValues{est.strain_sq.scalar(), est.vort_sq.scalar()};
}

// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

inline void adam_step(std::vector<double>& params, std::span<const double> grads, AdamState& state, double lr) {
    if (grads.size() != params.size()) throw DimensionError("adam_step: gradient length mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) throw DimensionError("adam_step: optimizer state shape mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * grads[i];
        state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
}

// ---------------------------------------------------------------------------

struct LogRecord {
    std::size_t epoch = 0;
    double fm_loss = 0.0;
    double strain_sq = 0.0;
    double vort_sq = 0.0;
    double reg_value = 0.0;
};

struct TrainLog {
    std::vector<LogRecord> records;
    std::optional<std::string> failure;
};

/// Metrics on the fixed evaluation batch after training.
struct FinalMetrics {
    double fm_loss = 0.0;
    double strain_sq = 0.0;
    double vort_sq = 0.0;
};

struct TrainResult {
    Model model;
    TrainLog log;
    FinalMetrics final;
    bool ok() const { return !log.failure.has_value(); }
};

inline Batch evaluation_batch(std::uint64_t seed, std::size_t n) { return sample_batch(n, seed, 0, rng::Stream::eval); }

inline FinalMetrics evaluate_model(const Model& model, const Batch& batch, double sigma_min) {
    const PenaltyValues pen = penalty_exact(model, batch.xt(sigma_min), batch.t);
    return FinalMetrics{fm_loss(model, batch, sigma_min), pen.strain_sq, pen.vort_sq};
}

/// Loss and flat parameter gradient for one batch.
inline double objective_and_gradient(const Model& model, const TrainConfig& cfg, const Batch& batch, std::uint64_t epoch,
                                     std::vector<double>* grad, ObjectiveVars* terms_out = nullptr, ad::Tape* keep = nullptr) {
    ad::Tape local;
    ad::Tape& tape = keep ? *keep : local;
    const NetworkVars net = bind_parameters(tape, model.params, grad != nullptr);
    const ObjectiveVars terms = build_objective(tape, net, cfg, batch, epoch);
    const double value = terms.total.scalar();
    if (grad) {
        tape.backward(terms.total);
        *grad = collect_gradient(tape, net, model.params);
    }
    if (terms_out) *terms_out = terms;
    return value;
}

using TrainObserver = std::function<void(const LogRecord&)>;

/// One Adam step per epoch on a freshly sampled batch.
inline TrainResult train(const TrainConfig& cfg, const TrainObserver& observer = {}) {
    cfg.validate();
    constexpr std::size_t d = 2;
    TrainResult result{make_model(cfg.model_kind, cfg.seed, d, cfg.hidden, cfg.depth), {}, {}};
    AdamState adam;
    std::vector<double> grad;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const Batch batch = sample_batch(cfg.batch, cfg.seed, epoch);
        ad::Tape tape;
        ObjectiveVars terms;
        const double total = objective_and_gradient(result.model, cfg, batch, epoch, &grad, &terms, &tape);
        const bool log_now = epoch == 0 || (epoch + 1) % cfg.log_every == 0 || epoch + 1 == cfg.epochs;
        if (!std::isfinite(total)) {
            result.log.failure = "non-finite loss at epoch " + std::to_string(epoch + 1);
            break;
        }
        if (log_now) {
            const PenaltyValues pen = penalty_exact(result.model, batch.xt(cfg.sigma_min), batch.t);
            LogRecord rec{epoch + 1, terms.fm.scalar(), pen.strain_sq, pen.vort_sq, terms.reg.scalar()};
            result.log.records.push_back(rec);
            if (observer) observer(rec);
        }
        adam_step(result.model.params.values, grad, adam, cfg.lr);
    }
    if (result.ok())
        result.final = evaluate_model(result.model, evaluation_batch(cfg.seed, cfg.eval_samples), cfg.sigma_min);
    return result;
}

}  // namespace strainflow
