#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "strainflow/gradcheck.hpp"
#include "strainflow/network.hpp"
#include "strainflow/train.hpp"

using namespace strainflow;

namespace {

// Straightforward re-implementation: loops over scalars, no Eigen, no jets.
Vec naive_mlp(const MLPParams& p, double t, const Vec& x) {
    std::vector<double> h(x.begin(), x.end());
    h.push_back(t);
    for (std::size_t l = 0; l < p.arch.depth; ++l) {
        const std::size_t in = p.arch.layer_in(l), out = p.arch.layer_out(l);
        std::vector<double> z(out, 0.0);
        for (std::size_t i = 0; i < out; ++i) {
            double acc = p.values[p.bias_offset(l) + i];
            for (std::size_t j = 0; j < in; ++j) acc += p.values[p.weight_offset(l) + i * in + j] * h[j];
            z[i] = acc;
        }
        if (l + 1 < p.arch.depth)
            for (double& v : z) v = v / (1.0 + std::exp(-v));
        h = std::move(z);
    }
    Vec out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i];
    return out;
}

Vec random_point(std::size_t d, rng::Sequence& draw, double scale = 1.0) {
    Vec v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = scale * draw.normal();
    return v;
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-5) {
    const Vec f0 = f(x);
    Mat j(f0.size(), x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        Vec up = x, down = x;
        up[k] += h;
        down[k] -= h;
        const Vec df = (1.0 / (2 * h)) * (f(up) - f(down));
        for (std::size_t i = 0; i < f0.size(); ++i) j(i, k) = df[i];
    }
    return j;
}

void expect_rel_close(const Mat& a, const Mat& b, double rel) {
    const double scale = std::max(1.0, frobenius(b));
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) EXPECT_NEAR(a(i, k), b(i, k), rel * scale) << i << "," << k;
}

Model small_model(ModelKind kind, std::uint64_t seed = 3, std::size_t d = 2) { return make_model(kind, seed, d, 16, 4); }

}  // namespace

TEST(MlpInit, Deterministic) {
    const MLPParams a = mlp_init(7, 2, 32, 5, 2);
    const MLPParams b = mlp_init(7, 2, 32, 5, 2);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.values, mlp_init(8, 2, 32, 5, 2).values);
}

TEST(MlpInit, ParameterCountForDefaultArchitecture) {
    const MLPParams p = mlp_init(0, 2, 256, 5, 2);
    const std::size_t expected = (3 * 256 + 256) + 3 * (256 * 256 + 256) + (256 * 2 + 2);
    EXPECT_EQ(p.values.size(), expected);
    EXPECT_EQ(p.arch.parameter_count(), expected);
}

TEST(MlpInit, WeightsWithinGlorotBoundAndZeroBiases) {
    const MLPParams p = mlp_init(1, 3, 20, 4, 3);
    for (std::size_t l = 0; l < p.arch.depth; ++l) {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.arch.layer_in(l)));
        EXPECT_LE(p.weight(l).cwiseAbs().maxCoeff(), bound);
        EXPECT_EQ(p.bias(l).cwiseAbs().maxCoeff(), 0.0);
    }
}

TEST(MlpInit, RejectsBadShapes) {
    EXPECT_THROW(mlp_init(0, 2, 16, 1, 2), ContractViolation);
    EXPECT_THROW(mlp_init(0, 2, 0, 3, 2), ContractViolation);
}

TEST(MlpEval, ZeroWeightsGiveZero) {
    MLPParams p = mlp_init(0, 2, 8, 3, 2);
    std::fill(p.values.begin(), p.values.end(), 0.0);
    const Vec v = mlp_eval(p, 0.4, Vec{1.0, -2.0});
    EXPECT_EQ(v[0], 0.0);
    EXPECT_EQ(v[1], 0.0);
    const Mat j = mlp_jacobian(p, 0.4, Vec{1.0, -2.0});
    EXPECT_EQ(frobenius(j), 0.0);
}

TEST(MlpEval, MatchesNaiveImplementation) {
    const MLPParams p = mlp_init(5, 2, 256, 5, 2);
    rng::Sequence draw(21, rng::Stream::check);
    for (int i = 0; i < 10; ++i) {
        const Vec x = random_point(2, draw, 2.0);
        const double t = draw.uniform();
        const Vec a = mlp_eval(p, t, x), b = naive_mlp(p, t, x);
        for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(a[k], b[k], 1e-12 * std::max(1.0, std::abs(b[k])));
    }
}

TEST(MlpEval, FiniteOnBoundedInputs) {
    const MLPParams p = mlp_init(6, 2, 64, 5, 2);
    rng::Sequence draw(22, rng::Stream::check);
    for (int i = 0; i < 200; ++i) {
        Vec x = random_point(2, draw);
        x = (10.0 * draw.uniform() / norm(x)) * x;
        EXPECT_TRUE(mlp_eval(p, draw.uniform(), x).is_finite());
    }
}

TEST(MlpEval, DimensionMismatchRejected) {
    const MLPParams p = mlp_init(0, 2, 8, 3, 2);
    EXPECT_THROW(mlp_eval(p, 0.0, Vec{1.0, 2.0, 3.0}), DimensionError);
    EXPECT_THROW(mlp_jacobian(p, 0.0, Vec{1.0}), DimensionError);
}

TEST(MlpJacobian, MatchesFiniteDifferences) {
    const MLPParams p = mlp_init(9, 3, 64, 5, 3);
    rng::Sequence draw(23, rng::Stream::check);
    for (int i = 0; i < 10; ++i) {
        const Vec x = random_point(3, draw);
        const double t = draw.uniform();
        const Mat fd = fd_jacobian([&](const Vec& y) { return mlp_eval(p, t, y); }, x);
        expect_rel_close(mlp_jacobian(p, t, x), fd, 1e-5);
    }
}

TEST(MlpJacobian, SingleAffineLayerIsExactlyW) {
    MLPParams p;
    p.arch = Architecture{2, 1, 1, 2};
    // W is 2x3 over (x, t), then b = (0.7, -0.1).
    p.values = {1.5, -2.0, 0.25, 0.5, 3.0, 4.0, 0.7, -0.1};
    ASSERT_EQ(p.values.size(), p.arch.parameter_count());
    const Mat j = mlp_jacobian(p, 0.3, Vec{0.2, -1.0});
    EXPECT_EQ(j(0, 0), 1.5);
    EXPECT_EQ(j(0, 1), -2.0);
    EXPECT_EQ(j(1, 0), 0.5);
    EXPECT_EQ(j(1, 1), 3.0);
}

TEST(Potential, VelocityIsGradientOfOutput) {
    const Model m = small_model(ModelKind::potential, 11, 3);
    rng::Sequence draw(24, rng::Stream::check);
    for (int i = 0; i < 5; ++i) {
        const Vec x = random_point(3, draw);
        const double t = draw.uniform();
        const Mat fd = fd_jacobian([&](const Vec& y) { return mlp_eval(m.params, t, y); }, x);
        const Vec v = potential_velocity(m.params, t, x);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(v[k], fd(0, k), 1e-5 * std::max(1.0, std::abs(fd(0, k))));
    }
}

TEST(Potential, JacobianIsSymmetricHessian) {
    const NetworkField field(small_model(ModelKind::potential, 12, 3));
    rng::Sequence draw(25, rng::Stream::check);
    for (int i = 0; i < 20; ++i) {
        const Vec x = random_point(3, draw, 2.0);
        const double t = draw.uniform();
        const JacobianSplit sp = split_jacobian(field.jacobian(t, x));
        EXPECT_LE(frobenius(sp.vorticity), 1e-8 * (1.0 + frobenius(sp.strain)));
        const Mat fd = fd_jacobian([&](const Vec& y) { return field.eval(t, y); }, x);
        expect_rel_close(field.jacobian(t, x), fd, 1e-5);
    }
}

TEST(Potential, ScalarOutputRequired) {
    const MLPParams p = mlp_init(0, 2, 8, 3, 2);
    EXPECT_THROW(potential_velocity(p, 0.0, Vec{0.0, 0.0}), ContractViolation);
}

TEST(NetworkField, TimePartialMatchesFiniteDifferences) {
    for (ModelKind kind : {ModelKind::mlp, ModelKind::potential}) {
        const NetworkField field(small_model(kind, 13));
        const Vec x{0.3, -0.8};
        const double t = 0.45, h = 1e-5;
        const Vec fd = (1.0 / (2 * h)) * (field.eval(t + h, x) - field.eval(t - h, x));
        const Vec dt = field.time_partial(t, x);
        for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(dt[k], fd[k], 1e-7);
    }
}

TEST(NetworkField, BatchDerivativesMatchPointwise) {
    for (ModelKind kind : {ModelKind::mlp, ModelKind::potential}) {
        const NetworkField field(small_model(kind, 14));
        rng::Sequence draw(26, rng::Stream::check);
        std::vector<Vec> xs;
        for (int i = 0; i < 6; ++i) xs.push_back(random_point(2, draw));
        const auto batch = field.derivatives_batch(0.7, xs);
        ASSERT_EQ(batch.size(), xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const Vec v = field.eval(0.7, xs[i]);
            const Mat j = field.jacobian(0.7, xs[i]);
            const Vec dt = field.time_partial(0.7, xs[i]);
            for (std::size_t k = 0; k < 2; ++k) {
                EXPECT_NEAR(batch[i].v[k], v[k], 1e-13);
                EXPECT_NEAR(batch[i].dt[k], dt[k], 1e-13);
                for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(batch[i].jac(k, c), j(k, c), 1e-13);
            }
        }
    }
}

TEST(TapeJet, AgreesWithNumericJet) {
    for (ModelKind kind : {ModelKind::mlp, ModelKind::potential}) {
        const Model m = small_model(kind, 15);
        rng::Sequence draw(27, rng::Stream::check);
        Matrix x(2, 5);
        for (Eigen::Index c = 0; c < 5; ++c) x.col(c) << draw.normal(), draw.normal();
        Eigen::RowVectorXd t(5);
        for (Eigen::Index c = 0; c < 5; ++c) t(c) = draw.uniform();
        ad::Tape tape;
        const NetworkVars net = bind_parameters(tape, m.params);
        const VelocityGraph g = velocity_graph(tape, net, kind, 2, x, t, true);
        const ModelDerivatives md = model_derivatives(m, x, t, true, false);
        EXPECT_LE((g.velocity.value() - md.velocity).cwiseAbs().maxCoeff(), 1e-13);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t k = 0; k < 2; ++k) EXPECT_LE((g.jac[i][k].value() - md.jac[i][k]).cwiseAbs().maxCoeff(), 1e-13);
    }
}

TEST(TapeJet, InputVjpIsTransposedJacobian) {
    const Model m = small_model(ModelKind::mlp, 16);
    const Matrix x{{0.4}, {-1.1}};
    const Eigen::RowVectorXd t = Eigen::RowVectorXd::Constant(1, 0.2);
    ad::Tape tape;
    const NetworkVars net = bind_parameters(tape, m.params);
    const VelocityGraph g = velocity_graph(tape, net, ModelKind::mlp, 2, x, t, false);
    const Matrix cot{{0.3}, {-2.0}};
    const Matrix vjp = input_vjp(net, g.jet, tape.constant(cot)).value();
    const Mat j = mlp_jacobian(m.params, 0.2, Vec{0.4, -1.1});
    for (std::size_t k = 0; k < 2; ++k)
        EXPECT_NEAR(vjp(static_cast<Eigen::Index>(k), 0), j(0, k) * 0.3 + j(1, k) * -2.0, 1e-13);
}

TEST(GradParams, LinearReadoutMatchesFiniteDifferences) {
    const Model m = small_model(ModelKind::mlp, 17);
    const Matrix x{{0.1, -0.5, 1.2}, {0.9, 0.3, -0.7}};
    const Eigen::RowVectorXd t{{0.1, 0.5, 0.9}};
    const Matrix c{{1.0, -2.0, 0.5}, {0.25, 1.5, -1.0}};
    const LossFn loss = [&](std::span<const double> vals, std::vector<double>* grad) {
        MLPParams p = m.params;
        p.values.assign(vals.begin(), vals.end());
        ad::Tape tape;
        const NetworkVars net = bind_parameters(tape, p, grad != nullptr);
        const VelocityGraph g = velocity_graph(tape, net, ModelKind::mlp, 2, x, t, false);
        const ad::Var out = ad::dot_sum(g.velocity, tape.constant(c));
        if (grad) {
            tape.backward(out);
            *grad = collect_gradient(tape, net, p);
        }
        return out.scalar();
    };
    const GradcheckReport r = gradcheck(m.params.values, loss, 1e-4, 1, 10000);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
    std::vector<double> g;
    loss(m.params.values, &g);
    EXPECT_EQ(g.size(), m.params.arch.parameter_count());
}

TEST(Gradcheck, QuadraticToyLoss) {
    const std::vector<double> p{1.0, -2.0, 0.5, 3.0};
    const LossFn loss = [](std::span<const double> v, std::vector<double>* grad) {
        double s = 0.0;
        if (grad) grad->assign(v.size(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) {
            s += 0.5 * (i + 1.0) * v[i] * v[i];
            if (grad) (*grad)[i] = (i + 1.0) * v[i];
        }
        return s;
    };
    const GradcheckReport r = gradcheck(p, loss, 1e-7);
    EXPECT_TRUE(r.passed);
    EXPECT_LE(r.max_rel_error, 1e-7);
    EXPECT_EQ(r.checked, 4u);
}

TEST(Gradcheck, DetectsWrongGradient) {
    const std::vector<double> p{1.0, -2.0, 0.5};
    const LossFn loss = [](std::span<const double> v, std::vector<double>* grad) {
        if (grad) *grad = {2 * v[0], 2 * v[1], 3 * v[2]};  // last entry is wrong
        return v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    };
    const GradcheckReport r = gradcheck(p, loss, 1e-3);
    EXPECT_FALSE(r.passed);
    EXPECT_EQ(r.worst_index, 2u);
}

TEST(Gradcheck, StrainPenaltyIsDifferentiable) {
    // Parameter gradient of sum_ij (grad_x v)_ij^2 against finite differences.
    for (ModelKind kind : {ModelKind::mlp, ModelKind::potential}) {
        const Model m = small_model(kind, 18);
        const Batch batch = sample_batch(8, 4, 0);
        const Matrix xt = batch.xt(0.0);
        const LossFn loss = [&](std::span<const double> vals, std::vector<double>* grad) {
            MLPParams p = m.params;
            p.values.assign(vals.begin(), vals.end());
            ad::Tape tape;
            const NetworkVars net = bind_parameters(tape, p, grad != nullptr);
            const VelocityGraph g = velocity_graph(tape, net, kind, 2, xt, batch.t, true);
            const PenaltyVars pen = penalty_exact(g);
            if (grad) {
                tape.backward(pen.jac_sq);
                *grad = collect_gradient(tape, net, p);
            }
            return pen.jac_sq.scalar();
        };
        const GradcheckReport r = gradcheck(m.params.values, loss, 1e-3, 2);
        EXPECT_TRUE(r.passed) << to_string(kind) << " " << r.max_rel_error;
    }
}

TEST(Gradcheck, PotentialFmLoss) {
    const Model m = small_model(ModelKind::potential, 19);
    TrainConfig cfg;
    cfg.model_kind = ModelKind::potential;
    const Batch batch = sample_batch(16, 5, 0);
    const LossFn loss = [&](std::span<const double> vals, std::vector<double>* grad) {
        Model local = m;
        local.params.values.assign(vals.begin(), vals.end());
        return objective_and_gradient(local, cfg, batch, 0, grad);
    };
    const GradcheckReport r = gradcheck(m.params.values, loss, 1e-5, 3);
    EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto dir = std::filesystem::temp_directory_path() / "strainflow_test_network";
    std::filesystem::create_directories(dir);
    for (ModelKind kind : {ModelKind::mlp, ModelKind::potential}) {
        Model m = small_model(kind, 20);
        m.params.values[3] = -0.0;
        m.params.values[4] = 1e-310;
        const auto path = dir / ("model_" + to_string(kind) + ".ckpt");
        save_checkpoint(m, path);
        const Model back = load_checkpoint(path);
        EXPECT_EQ(back.kind, m.kind);
        EXPECT_EQ(back.params.arch, m.params.arch);
        EXPECT_EQ(back.params.seed, m.params.seed);
        ASSERT_EQ(back.params.values.size(), m.params.values.size());
        for (std::size_t i = 0; i < m.params.values.size(); ++i)
            EXPECT_EQ(std::bit_cast<std::uint64_t>(back.params.values[i]), std::bit_cast<std::uint64_t>(m.params.values[i]));
        EXPECT_EQ(checkpoint_bytes(back), checkpoint_bytes(m));
    }
}

TEST(Checkpoint, HeaderLayout) {
    const Model m = make_model(ModelKind::mlp, 42, 2, 4, 2);
    const std::string bytes = checkpoint_bytes(m);
    const std::string header = "strainflow-checkpoint v1 kind=mlp dim=2 hidden=4 depth=2 out=2 seed=42 count=26\n";
    ASSERT_EQ(bytes.substr(0, header.size()), header);
    EXPECT_EQ(bytes.size(), header.size() + 8 * 26);
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto dir = std::filesystem::temp_directory_path() / "strainflow_test_network";
    std::filesystem::create_directories(dir);
    const Model m = small_model(ModelKind::mlp, 21);
    const std::string bytes = checkpoint_bytes(m);

    const auto truncated = dir / "truncated.ckpt";
    std::ofstream(truncated, std::ios::binary) << bytes.substr(0, bytes.size() - 5);
    EXPECT_THROW(load_checkpoint(truncated), std::runtime_error);

    const auto trailing = dir / "trailing.ckpt";
    std::ofstream(trailing, std::ios::binary) << bytes << 'x';
    EXPECT_THROW(load_checkpoint(trailing), std::runtime_error);

    const auto bad_magic = dir / "bad_magic.ckpt";
    std::ofstream(bad_magic, std::ios::binary) << "not-a-checkpoint v1\n";
    EXPECT_THROW(load_checkpoint(bad_magic), std::runtime_error);

    const auto bad_count = dir / "bad_count.ckpt";
    std::ofstream(bad_count, std::ios::binary) << "strainflow-checkpoint v1 kind=mlp dim=2 hidden=4 depth=2 out=2 seed=0 count=7\n";
    EXPECT_THROW(load_checkpoint(bad_count), std::runtime_error);

    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), std::runtime_error);
}
