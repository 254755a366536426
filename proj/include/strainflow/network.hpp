#pragma once

// Time-conditioned MLP velocity networks (direct and gradient-of-potential),
// their exact input Jacobians via forward-mode tangents, and checkpoint I/O.

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "strainflow/autodiff.hpp"
#include "strainflow/fields.hpp"
#include "strainflow/rng.hpp"
#include "strainflow/tensor.hpp"

namespace strainflow {

using ad::Matrix;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ModelKind { mlp, potential };

inline std::string to_string(ModelKind k) { return k == ModelKind::mlp ? "mlp" : "potential"; }

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "mlp") return ModelKind::mlp;
    if (s == "potential") return ModelKind::potential;
    throw std::invalid_argument("unknown model kind '" + s + "'");
}

/// Layer shapes. `depth` counts affine layers; the input is (x, t).
struct Architecture {
    std::size_t dim = 2;
    std::size_t hidden = 256;
    std::size_t depth = 5;
    std::size_t out_dim = 2;

    std::size_t input_dim() const noexcept { return dim + 1; }
    std::size_t layer_in(std::size_t l) const noexcept { return l == 0 ? input_dim() : hidden; }
    std::size_t layer_out(std::size_t l) const noexcept { return l + 1 == depth ? out_dim : hidden; }

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (std::size_t l = 0; l < depth; ++l) n += layer_out(l) * layer_in(l) + layer_out(l);
        return n;
    }

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Flat parameter vector; per layer the weight matrix (row-major, out x in)
/// followed by the bias.
struct MLPParams {
    Architecture arch;
    std::uint64_t seed = 0;
    std::vector<double> values;

    std::size_t weight_offset(std::size_t l) const {
        std::size_t off = 0;
        for (std::size_t k = 0; k < l; ++k) off += arch.layer_out(k) * arch.layer_in(k) + arch.layer_out(k);
        return off;
    }
    std::size_t bias_offset(std::size_t l) const {
        return weight_offset(l) + arch.layer_out(l) * arch.layer_in(l);
    }

    Eigen::Map<const RowMajorMatrix> weight(std::size_t l) const {
        return {values.data() + weight_offset(l), static_cast<Eigen::Index>(arch.layer_out(l)),
                static_cast<Eigen::Index>(arch.layer_in(l))};
    }
    Eigen::Map<RowMajorMatrix> weight(std::size_t l) {
        return {values.data() + weight_offset(l), static_cast<Eigen::Index>(arch.layer_out(l)),
                static_cast<Eigen::Index>(arch.layer_in(l))};
    }
    Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const {
        return {values.data() + bias_offset(l), static_cast<Eigen::Index>(arch.layer_out(l))};
    }
    Eigen::Map<Eigen::VectorXd> bias(std::size_t l) {
        return {values.data() + bias_offset(l), static_cast<Eigen::Index>(arch.layer_out(l))};
    }
};

/// Glorot-style uniform init in +-sqrt(6 / fan_in), zero biases.
inline MLPParams mlp_init(std::uint64_t seed, std::size_t d, std::size_t hidden, std::size_t depth, std::size_t out_dim) {
    if (depth < 2) throw ContractViolation("mlp_init: depth must be >= 2");
    if (hidden < 1 || d < 1 || out_dim < 1) throw ContractViolation("mlp_init: layer widths must be positive");
    MLPParams p{Architecture{d, hidden, depth, out_dim}, seed, {}};
    p.values.assign(p.arch.parameter_count(), 0.0);
    rng::Sequence draw(seed, rng::Stream::init);
    for (std::size_t l = 0; l < depth; ++l) {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.arch.layer_in(l)));
        auto w = p.weight(l);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = draw.uniform(-bound, bound);
    }
    return p;
}

struct Model {
    ModelKind kind = ModelKind::mlp;
    MLPParams params;

    std::size_t dim() const noexcept { return params.arch.dim; }
};

inline Model make_model(ModelKind kind, std::uint64_t seed, std::size_t d, std::size_t hidden = 256, std::size_t depth = 5) {
    return Model{kind, mlp_init(seed, d, hidden, depth, kind == ModelKind::mlp ? d : 1)};
}

/// (x; t) stacked column-wise: rows 0..d-1 hold x, row d holds t.
inline Matrix pack_input(const Matrix& x, const Eigen::RowVectorXd& t) {
    Matrix in(x.rows() + 1, x.cols());
    in.topRows(x.rows()) = x;
    in.row(x.rows()) = t;
    return in;
}

inline Matrix pack_points(std::span<const Vec> xs, std::size_t d) {
    Matrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(xs.size()));
    for (std::size_t c = 0; c < xs.size(); ++c) {
        if (xs[c].size() != d) throw DimensionError("pack_points: dimension mismatch");
        for (std::size_t r = 0; r < d; ++r) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = xs[c][r];
    }
    return m;
}

inline std::vector<Vec> unpack_points(const Matrix& m) {
    std::vector<Vec> out(static_cast<std::size_t>(m.cols()), Vec(static_cast<std::size_t>(m.rows())));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] = m(r, c);
    return out;
}

struct DirectionPair {
    std::size_t first;
    std::size_t second;
};

// ---------------------------------------------------------------------------
// Plain numeric evaluation (inference path).

/// Network output and its directional derivatives: `first[k]` along
/// direction k, `second[p]` the mixed second derivative for pairs[p].
struct NumericJet {
    Matrix value;
    std::vector<Matrix> first;
    std::vector<Matrix> second;
};

inline NumericJet evaluate_jet(const MLPParams& p, const Matrix& input, std::span<const Matrix> directions,
                               std::span<const DirectionPair> pairs = {}) {
    if (static_cast<std::size_t>(input.rows()) != p.arch.input_dim()) throw DimensionError("network input has wrong dimension");
    const std::size_t m = directions.size();
    const std::size_t np = pairs.size();
    Matrix h = input;
    std::vector<Matrix> dh(directions.begin(), directions.end());
    std::vector<std::optional<Matrix>> d2h(np);

    for (std::size_t l = 0; l < p.arch.depth; ++l) {
        const Matrix w = p.weight(l);
        Matrix z = w * h;
        z.colwise() += p.bias(l);
        std::vector<Matrix> dz(m);
        for (std::size_t k = 0; k < m; ++k) dz[k] = w * dh[k];
        std::vector<std::optional<Matrix>> d2z(np);
        for (std::size_t q = 0; q < np; ++q)
            if (d2h[q]) d2z[q] = w * *d2h[q];

        if (l + 1 == p.arch.depth) {
            NumericJet out{std::move(z), std::move(dz), {}};
            out.second.reserve(np);
            for (std::size_t q = 0; q < np; ++q)
                out.second.push_back(d2z[q] ? std::move(*d2z[q]) : Matrix::Zero(out.value.rows(), out.value.cols()));
            return out;
        }

        const Matrix s1 = (m > 0 || np > 0) ? ad::silu_derivative(z, 1) : Matrix{};
        const Matrix s2 = np > 0 ? ad::silu_derivative(z, 2) : Matrix{};
        for (std::size_t q = 0; q < np; ++q) {
            const auto [i, j] = pairs[q];
            Matrix next = s2.cwiseProduct(dz[i]).cwiseProduct(dz[j]);
            if (d2z[q]) next += s1.cwiseProduct(*d2z[q]);
            d2h[q] = std::move(next);
        }
        for (std::size_t k = 0; k < m; ++k) dh[k] = s1.cwiseProduct(dz[k]);
        h = ad::silu_derivative(z, 0);
    }
    throw ContractViolation("evaluate_jet: network has no layers");
}

inline Matrix network_forward(const MLPParams& p, const Matrix& input) { return evaluate_jet(p, input, {}).value; }

/// Constant direction e_axis replicated over n columns.
inline Matrix basis_direction(std::size_t rows, std::size_t axis, Eigen::Index n) {
    Matrix d = Matrix::Zero(static_cast<Eigen::Index>(rows), n);
    d.row(static_cast<Eigen::Index>(axis)).setOnes();
    return d;
}

inline Vec mlp_eval(const MLPParams& p, double t, const Vec& x) {
    if (x.size() != p.arch.dim) throw DimensionError("mlp_eval: dimension mismatch");
    const Vec xs[] = {x};
    const Matrix out = network_forward(p, pack_input(pack_points(xs, p.arch.dim), Eigen::RowVectorXd::Constant(1, t)));
    return unpack_points(out)[0];
}

/// Exact spatial Jacobian of a direct MLP velocity: one tangent per axis.
inline Mat mlp_jacobian(const MLPParams& p, double t, const Vec& x) {
    const std::size_t d = p.arch.dim;
    if (x.size() != d) throw DimensionError("mlp_jacobian: dimension mismatch");
    const Vec xs[] = {x};
    const Matrix in = pack_input(pack_points(xs, d), Eigen::RowVectorXd::Constant(1, t));
    std::vector<Matrix> dirs;
    for (std::size_t k = 0; k < d; ++k) dirs.push_back(basis_direction(d + 1, k, 1));
    const NumericJet jet = evaluate_jet(p, in, dirs);
    Mat j(p.arch.out_dim, d);
    for (std::size_t k = 0; k < d; ++k)
        for (std::size_t i = 0; i < p.arch.out_dim; ++i) j(i, k) = jet.first[k](static_cast<Eigen::Index>(i), 0);
    return j;
}

/// Velocity of a gradient-field model: v = grad_x phi.
inline Vec potential_velocity(const MLPParams& p, double t, const Vec& x) {
    if (p.arch.out_dim != 1) throw ContractViolation("potential_velocity: network must have scalar output");
    const Mat g = mlp_jacobian(p, t, x);
    Vec v(p.arch.dim);
    for (std::size_t k = 0; k < p.arch.dim; ++k) v[k] = g(0, k);
    return v;
}

struct ModelDerivatives {
    Matrix velocity;                        // d x n
    std::vector<std::vector<Matrix>> jac;   // jac[i][k] = d v_i / d x_k, 1 x n rows
    Matrix time_partial;                    // d x n, empty unless requested
};

/// Velocity, spatial Jacobian and optional time partial at a batch of points.
inline ModelDerivatives model_derivatives(const Model& model, const Matrix& x, const Eigen::RowVectorXd& t,
                                          bool with_jacobian, bool with_time_partial) {
    const std::size_t d = model.dim();
    const Matrix in = pack_input(x, t);
    const Eigen::Index n = x.cols();
    ModelDerivatives out;
    std::vector<Matrix> dirs;
    const std::size_t naxes = d + (with_time_partial ? 1 : 0);

    if (model.kind == ModelKind::mlp) {
        if (with_jacobian || with_time_partial)
            for (std::size_t k = 0; k < naxes; ++k) dirs.push_back(basis_direction(d + 1, k, n));
        NumericJet jet = evaluate_jet(model.params, in, dirs);
        out.velocity = std::move(jet.value);
        if (with_jacobian) {
            out.jac.assign(d, std::vector<Matrix>(d));
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t k = 0; k < d; ++k) out.jac[i][k] = jet.first[k].row(static_cast<Eigen::Index>(i));
        }
        if (with_time_partial) out.time_partial = jet.first[d];
        return out;
    }

    for (std::size_t k = 0; k < naxes; ++k) dirs.push_back(basis_direction(d + 1, k, n));
    std::vector<DirectionPair> pairs;
    if (with_jacobian)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t k = i; k < d; ++k) pairs.push_back({i, k});
    const std::size_t time_pairs_at = pairs.size();
    if (with_time_partial)
        for (std::size_t i = 0; i < d; ++i) pairs.push_back({i, d});
    const NumericJet jet = evaluate_jet(model.params, in, dirs, pairs);
    out.velocity.resize(static_cast<Eigen::Index>(d), n);
    for (std::size_t k = 0; k < d; ++k) out.velocity.row(static_cast<Eigen::Index>(k)) = jet.first[k].row(0);
    if (with_jacobian) {
        out.jac.assign(d, std::vector<Matrix>(d));
        std::size_t q = 0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t k = i; k < d; ++k, ++q) {
                out.jac[i][k] = jet.second[q];
                out.jac[k][i] = jet.second[q];
            }
    }
    if (with_time_partial) {
        out.time_partial.resize(static_cast<Eigen::Index>(d), n);
        for (std::size_t i = 0; i < d; ++i)
            out.time_partial.row(static_cast<Eigen::Index>(i)) = jet.second[time_pairs_at + i].row(0);
    }
    return out;
}

inline Matrix model_velocity(const Model& model, const Matrix& x, const Eigen::RowVectorXd& t) {
    return model_derivatives(model, x, t, false, false).velocity;
}

/// VelocityField adapter over a trained model.
class NetworkField final : public VelocityField {
public:
    explicit NetworkField(Model model) : model_(std::move(model)) {}

    std::size_t dimension() const override { return model_.dim(); }
    const Model& model() const noexcept { return model_; }

    Vec eval(double t, const Vec& x) const override {
        check_dim(x);
        const Vec xs[] = {x};
        return eval_batch(t, xs)[0];
    }

    std::vector<Vec> eval_batch(double t, std::span<const Vec> xs) const override {
        const Matrix x = pack_points(xs, dimension());
        return unpack_points(model_velocity(model_, x, Eigen::RowVectorXd::Constant(x.cols(), t)));
    }

    Mat jacobian(double t, const Vec& x) const override {
        const ModelDerivatives md = at(t, x, true, false);
        const std::size_t d = dimension();
        Mat j(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t k = 0; k < d; ++k) j(i, k) = md.jac[i][k](0, 0);
        return j;
    }

    Vec time_partial(double t, const Vec& x) const override {
        return unpack_points(at(t, x, false, true).time_partial)[0];
    }

    std::vector<PointDerivatives> derivatives_batch(double t, std::span<const Vec> xs) const override {
        const std::size_t d = dimension();
        const Matrix x = pack_points(xs, d);
        const ModelDerivatives md = model_derivatives(model_, x, Eigen::RowVectorXd::Constant(x.cols(), t), true, true);
        std::vector<PointDerivatives> out(xs.size());
        for (Eigen::Index n = 0; n < x.cols(); ++n) {
            PointDerivatives& p = out[static_cast<std::size_t>(n)];
            p.v = Vec(d);
            p.dt = Vec(d);
            p.jac = Mat(d, d);
            for (std::size_t i = 0; i < d; ++i) {
                const auto row = static_cast<Eigen::Index>(i);
                p.v[i] = md.velocity(row, n);
                p.dt[i] = md.time_partial(row, n);
                for (std::size_t k = 0; k < d; ++k) p.jac(i, k) = md.jac[i][k](0, n);
            }
        }
        return out;
    }

private:
    ModelDerivatives at(double t, const Vec& x, bool jac, bool dt) const {
        check_dim(x);
        const Vec xs[] = {x};
        return model_derivatives(model_, pack_points(xs, dimension()), Eigen::RowVectorXd::Constant(1, t), jac, dt);
    }

    Model model_;
};

// ---------------------------------------------------------------------------
// Tape-side evaluation (training path).

struct NetworkVars {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
};

inline NetworkVars bind_parameters(ad::Tape& tape, const MLPParams& p, bool trainable = true) {
    NetworkVars vars;
    for (std::size_t l = 0; l < p.arch.depth; ++l) {
        Matrix w = p.weight(l);
        Matrix b = p.bias(l);
        vars.weights.push_back(trainable ? tape.parameter(std::move(w)) : tape.constant(std::move(w)));
        vars.biases.push_back(trainable ? tape.parameter(std::move(b)) : tape.constant(std::move(b)));
    }
    return vars;
}

/// Flat gradient in the same layout as MLPParams::values.
inline std::vector<double> collect_gradient(const ad::Tape& tape, const NetworkVars& vars, const MLPParams& p) {
    std::vector<double> g(p.values.size(), 0.0);
    for (std::size_t l = 0; l < p.arch.depth; ++l) {
        const Matrix gw = tape.gradient(vars.weights[l]);
        Eigen::Map<RowMajorMatrix>(g.data() + p.weight_offset(l), gw.rows(), gw.cols()) = gw;
        const Matrix gb = tape.gradient(vars.biases[l]);
        Eigen::Map<Eigen::VectorXd>(g.data() + p.bias_offset(l), gb.rows()) = gb.col(0);
    }
    return g;
}

struct GraphJet {
    ad::Var value;
    std::vector<ad::Var> first;
    std::vector<ad::Var> second;
    std::vector<ad::Var> pre_activations;  // z_l for the hidden layers
};

/// Forward pass on the tape with forward-mode tangents recorded as ordinary
/// nodes, so every derivative stays differentiable in the parameters.
inline GraphJet forward_jet(ad::Tape& tape, const NetworkVars& net, ad::Var input, std::span<const ad::Var> directions,
                            std::span<const DirectionPair> pairs = {}) {
    using namespace ad;
    const std::size_t depth = net.weights.size();
    const std::size_t m = directions.size();
    const std::size_t np = pairs.size();
    Var h = input;
    std::vector<Var> dh(directions.begin(), directions.end());
    std::vector<std::optional<Var>> d2h(np);
    GraphJet out{};

    for (std::size_t l = 0; l < depth; ++l) {
        const Var w = net.weights[l];
        const Var z = add_bias(matmul(w, h), net.biases[l]);
        std::vector<Var> dz;
        dz.reserve(m);
        for (std::size_t k = 0; k < m; ++k) dz.push_back(matmul(w, dh[k]));
        std::vector<std::optional<Var>> d2z(np);
        for (std::size_t q = 0; q < np; ++q)
            if (d2h[q]) d2z[q] = matmul(w, *d2h[q]);

        if (l + 1 == depth) {
            out.value = z;
            out.first = std::move(dz);
            for (std::size_t q = 0; q < np; ++q)
                out.second.push_back(d2z[q] ? *d2z[q] : tape.constant(Matrix::Zero(z.rows(), z.cols())));
            return out;
        }

        out.pre_activations.push_back(z);
        const Var s1 = (m > 0) ? silu(z, 1) : Var{};
        const Var s2 = (np > 0) ? silu(z, 2) : Var{};
        for (std::size_t q = 0; q < np; ++q) {
            const auto [i, j] = pairs[q];
            Var next = hadamard(hadamard(s2, dz[i]), dz[j]);
            if (d2z[q]) next = add(next, hadamard(s1, *d2z[q]));
            d2h[q] = next;
        }
        for (std::size_t k = 0; k < m; ++k) dh[k] = hadamard(s1, dz[k]);
        h = silu(z, 0);
    }
    throw ContractViolation("forward_jet: network has no layers");
}

/// Reverse-mode input cotangent J_in^T g recorded on the tape (a
/// differentiable vector-Jacobian product). Returns (d+1) x n.
inline ad::Var input_vjp(const NetworkVars& net, const GraphJet& jet, ad::Var cotangent) {
    using namespace ad;
    const std::size_t depth = net.weights.size();
    Var g = matmul_tn(net.weights[depth - 1], cotangent);
    for (std::size_t l = depth - 1; l-- > 0;) {
        const Var gz = hadamard(g, silu(jet.pre_activations[l], 1));
        g = matmul_tn(net.weights[l], gz);
    }
    return g;
}

/// Batched model velocity on the tape with optional Jacobian entries.
struct VelocityGraph {
    ad::Var velocity;                          // d x n
    std::vector<std::vector<ad::Var>> jac;     // jac[i][k], 1 x n
    GraphJet jet;
};

inline VelocityGraph velocity_graph(ad::Tape& tape, const NetworkVars& net, ModelKind kind, std::size_t d, const Matrix& x,
                                    const Eigen::RowVectorXd& t, bool with_jacobian) {
    using namespace ad;
    const Eigen::Index n = x.cols();
    const Var input = tape.constant(pack_input(x, t));
    VelocityGraph out{};
    if (kind == ModelKind::mlp) {
        std::vector<Var> dirs;
        if (with_jacobian)
            for (std::size_t k = 0; k < d; ++k) dirs.push_back(tape.constant(basis_direction(d + 1, k, n)));
        out.jet = forward_jet(tape, net, input, dirs);
        out.velocity = out.jet.value;
        if (with_jacobian) {
            out.jac.assign(d, std::vector<Var>(d));
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t k = 0; k < d; ++k) out.jac[i][k] = rows(out.jet.first[k], static_cast<Eigen::Index>(i), 1);
        }
        return out;
    }

    std::vector<Var> dirs;
    for (std::size_t k = 0; k < d; ++k) dirs.push_back(tape.constant(basis_direction(d + 1, k, n)));
    std::vector<DirectionPair> pairs;
    if (with_jacobian)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t k = i; k < d; ++k) pairs.push_back({i, k});
    out.jet = forward_jet(tape, net, input, dirs, pairs);
    out.velocity = concat_rows(out.jet.first);
    if (with_jacobian) {
        out.jac.assign(d, std::vector<Var>(d));
        std::size_t q = 0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t k = i; k < d; ++k, ++q) {
                out.jac[i][k] = out.jet.second[q];
                out.jac[k][i] = out.jet.second[q];
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: one ASCII header line, then `count` little-endian float64.
//
//   strainflow-checkpoint v1 kind=<mlp|potential> dim=D hidden=H depth=L out=O seed=S count=N\n

inline void write_checkpoint(const Model& model, std::ostream& os) {
    const auto& a = model.params.arch;
    os << "strainflow-checkpoint v1 kind=" << to_string(model.kind) << " dim=" << a.dim << " hidden=" << a.hidden
       << " depth=" << a.depth << " out=" << a.out_dim << " seed=" << model.params.seed
       << " count=" << model.params.values.size() << '\n';
    for (double v : model.params.values) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
        char bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xffU);
        os.write(bytes, 8);
    }
}

inline std::string checkpoint_bytes(const Model& model) {
    std::ostringstream os(std::ios::binary);
    write_checkpoint(model, os);
    return std::move(os).str();
}

inline void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    write_checkpoint(model, os);
    if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

inline Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::string header;
    std::getline(is, header);
    std::istringstream hs(header);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != "strainflow-checkpoint" || version != "v1") throw std::runtime_error("not a strainflow checkpoint: " + path.string());
    Model model;
    std::size_t count = 0;
    std::string field;
    while (hs >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed checkpoint header field: " + field);
        const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "kind") model.kind = parse_model_kind(val);
        else if (key == "dim") model.params.arch.dim = std::stoul(val);
        else if (key == "hidden") model.params.arch.hidden = std::stoul(val);
        else if (key == "depth") model.params.arch.depth = std::stoul(val);
        else if (key == "out") model.params.arch.out_dim = std::stoul(val);
        else if (key == "seed") model.params.seed = std::stoull(val);
        else if (key == "count") count = std::stoul(val);
        else throw std::runtime_error("unknown checkpoint header key: " + key);
    }
    if (count != model.params.arch.parameter_count()) throw std::runtime_error("checkpoint parameter count does not match architecture");
    model.params.values.resize(count);
    for (double& v : model.params.values) {
        unsigned char bytes[8];
        is.read(reinterpret_cast<char*>(bytes), 8);
        if (!is) throw std::runtime_error("truncated checkpoint: " + path.string());
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
        v = std::bit_cast<double>(bits);
    }
    if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("trailing bytes in checkpoint: " + path.string());
    return model;
}

}  // namespace strainflow
