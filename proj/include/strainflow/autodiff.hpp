#pragma once

// Reverse-mode tape over dense matrices.
//
// Nodes are appended in evaluation order, so the node index is already a
// topological order and the backward pass is a single reverse sweep. Each
// node that depends on a parameter stores a closure that pushes its adjoint
// into its parents. Forward-mode tangents (used for exact input Jacobians)
// are built from the same primitives, which is what makes the Jacobian
// penalty differentiable with respect to the parameters.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strainflow/tensor.hpp"

namespace strainflow::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(std::move(value), false, {}); }
    Var parameter(Matrix value) { return push(std::move(value), true, {}); }

    /// Records a custom primitive. `backward` runs only if some parent needs a
    /// gradient; it reads adjoint(self) and calls accumulate() on parents.
    Var record(Matrix value, std::span<const Var> parents, Backward backward) {
        bool needs = false;
        for (const Var& p : parents) needs = needs || nodes_.at(p.id).requires_grad;
        return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
    }

    const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    const Matrix& adjoint(std::size_t id) const { return nodes_.at(id).adjoint; }

    void accumulate(std::size_t id, const Matrix& g) {
        Node& n = nodes_.at(id);
        if (!n.requires_grad) return;
        if (n.adjoint.size() == 0)
            n.adjoint = g;
        else
            n.adjoint += g;
    }

    /// Reverse sweep from a scalar (1x1) node; each node is visited once.
    void backward(Var loss) {
        if (loss.tape != this) throw ContractViolation("backward: loss belongs to another tape");
        const Matrix& lv = value(loss.id);
        if (lv.rows() != 1 || lv.cols() != 1) throw ContractViolation("backward: loss must be a scalar node");
        for (Node& n : nodes_) n.adjoint.resize(0, 0);
        if (!nodes_[loss.id].requires_grad) return;
        nodes_[loss.id].adjoint = Matrix::Ones(1, 1);
        visited_ = 0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.adjoint.size() == 0) continue;
            n.backward(*this, i);
            ++visited_;
        }
    }

    /// Gradient of the last backward() with respect to a node; zeros if the
    /// node was unreachable.
    Matrix gradient(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (n.adjoint.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
        return n.adjoint;
    }

    std::size_t nodes_visited() const noexcept { return visited_; }

private:
    struct Node {
        Matrix value;
        Matrix adjoint;
        Backward backward;
        bool requires_grad = false;
    };

    Var push(Matrix value, bool requires_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Matrix{}, std::move(backward), requires_grad});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    std::size_t visited_ = 0;
};

inline const Matrix& Var::value() const { return tape->value(id); }

namespace detail {
inline void same_tape(const Var& a, const Var& b) {
    if (a.tape != b.tape) throw ContractViolation("operands live on different tapes");
}
inline void same_shape(const Var& a, const Var& b, const char* op) {
    same_tape(a, b);
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError(std::string(op) + ": shape mismatch");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(Var a, Var b) {
    detail::same_tape(a, b);
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimension mismatch");
    Matrix out = a.value() * b.value();
    const Var parents[] = {a, b};
    return a.tape->record(std::move(out), parents, [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        if (t.requires_grad(a.id)) t.accumulate(a.id, g * t.value(b.id).transpose());
        if (t.requires_grad(b.id)) t.accumulate(b.id, t.value(a.id).transpose() * g);
    });
}

/// a^T b
inline Var matmul_tn(Var a, Var b) {
    detail::same_tape(a, b);
    if (a.rows() != b.rows()) throw DimensionError("matmul_tn: inner dimension mismatch");
    Matrix out = a.value().transpose() * b.value();
    const Var parents[] = {a, b};
    return a.tape->record(std::move(out), parents, [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        if (t.requires_grad(a.id)) t.accumulate(a.id, t.value(b.id) * g.transpose());
        if (t.requires_grad(b.id)) t.accumulate(b.id, t.value(a.id) * g);
    });
}

inline Var add(Var a, Var b) {
    detail::same_shape(a, b, "add");
    const Var parents[] = {a, b};
    return a.tape->record(a.value() + b.value(), parents, [a, b](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.adjoint(self));
        t.accumulate(b.id, t.adjoint(self));
    });
}

inline Var sub(Var a, Var b) {
    detail::same_shape(a, b, "sub");
    const Var parents[] = {a, b};
    return a.tape->record(a.value() - b.value(), parents, [a, b](Tape& t, std::size_t self) {
        t.accumulate(a.id, t.adjoint(self));
        if (t.requires_grad(b.id)) t.accumulate(b.id, -t.adjoint(self));
    });
}

inline Var scale(Var a, double c) {
    const Var parents[] = {a};
    return a.tape->record(c * a.value(), parents,
                          [a, c](Tape& t, std::size_t self) { t.accumulate(a.id, c * t.adjoint(self)); });
}

inline Var hadamard(Var a, Var b) {
    detail::same_shape(a, b, "hadamard");
    const Var parents[] = {a, b};
    return a.tape->record(a.value().cwiseProduct(b.value()), parents, [a, b](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        if (t.requires_grad(a.id)) t.accumulate(a.id, g.cwiseProduct(t.value(b.id)));
        if (t.requires_grad(b.id)) t.accumulate(b.id, g.cwiseProduct(t.value(a.id)));
    });
}

/// x + b broadcast over columns; b is rows x 1.
inline Var add_bias(Var x, Var b) {
    detail::same_tape(x, b);
    if (b.cols() != 1 || b.rows() != x.rows()) throw DimensionError("add_bias: bias must be a column matching rows");
    Matrix out = x.value().colwise() + b.value().col(0);
    const Var parents[] = {x, b};
    return x.tape->record(std::move(out), parents, [x, b](Tape& t, std::size_t self) {
        const Matrix& g = t.adjoint(self);
        t.accumulate(x.id, g);
        if (t.requires_grad(b.id)) t.accumulate(b.id, g.rowwise().sum());
    });
}

inline Var rows(Var x, Eigen::Index start, Eigen::Index count) {
    if (start < 0 || count < 0 || start + count > x.rows()) throw DimensionError("rows: slice out of range");
    const Var parents[] = {x};
    return x.tape->record(x.value().middleRows(start, count), parents,
                          [x, start, count](Tape& t, std::size_t self) {
                              Matrix g = Matrix::Zero(t.value(x.id).rows(), t.value(x.id).cols());
                              g.middleRows(start, count) = t.adjoint(self);
                              t.accumulate(x.id, g);
                          });
}

inline Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no inputs");
    Eigen::Index total = 0;
    const Eigen::Index cols = parts[0].cols();
    for (const Var& p : parts) {
        detail::same_tape(parts[0], p);
        if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
        total += p.rows();
    }
    Matrix out(total, cols);
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    std::vector<Var> keep(parts.begin(), parts.end());
    return parts[0].tape->record(std::move(out), parts, [keep](Tape& t, std::size_t self) {
        Eigen::Index off = 0;
        for (const Var& p : keep) {
            const Eigen::Index r = t.value(p.id).rows();
            if (t.requires_grad(p.id)) t.accumulate(p.id, t.adjoint(self).middleRows(off, r));
            off += r;
        }
    });
}

inline Var sum(Var x) {
    Matrix out(1, 1);
    out(0, 0) = x.value().sum();
    const Var parents[] = {x};
    return x.tape->record(std::move(out), parents, [x](Tape& t, std::size_t self) {
        const double g = t.adjoint(self)(0, 0);
        t.accumulate(x.id, Matrix::Constant(t.value(x.id).rows(), t.value(x.id).cols(), g));
    });
}

inline Var sum_squares(Var x) {
    Matrix out(1, 1);
    out(0, 0) = x.value().squaredNorm();
    const Var parents[] = {x};
    return x.tape->record(std::move(out), parents, [x](Tape& t, std::size_t self) {
        const double g = t.adjoint(self)(0, 0);
        t.accumulate(x.id, (2.0 * g) * t.value(x.id));
    });
}

/// sum_ij a_ij b_ij as a 1x1 node.
inline Var dot_sum(Var a, Var b) {
    detail::same_shape(a, b, "dot_sum");
    Matrix out(1, 1);
    out(0, 0) = a.value().cwiseProduct(b.value()).sum();
    const Var parents[] = {a, b};
    return a.tape->record(std::move(out), parents, [a, b](Tape& t, std::size_t self) {
        const double g = t.adjoint(self)(0, 0);
        if (t.requires_grad(a.id)) t.accumulate(a.id, g * t.value(b.id));
        if (t.requires_grad(b.id)) t.accumulate(b.id, g * t.value(a.id));
    });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// SiLU and its derivatives, x * sigmoid(x). Backward of order k uses order
// k+1, so the tape supports differentiating through silu''.

inline constexpr int kMaxSiluOrder = 4;

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// d^k/dx^k [x sigmoid(x)] for k = 0..4.
inline double silu_derivative(double x, int order) {
    const double s = sigmoid(x);
    const double ds = s * (1.0 - s);
    switch (order) {
        case 0: return x * s;
        case 1: return s + x * ds;
        case 2: return ds * (2.0 + x * (1.0 - 2.0 * s));
        case 3: return ds * (3.0 * (1.0 - 2.0 * s) + x * (1.0 - 6.0 * s + 6.0 * s * s));
        case 4:
            return ds * (4.0 * (1.0 - 6.0 * s + 6.0 * s * s) +
                         x * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s));
        default: throw ContractViolation("silu_derivative: order out of range");
    }
}

/// Vectorized form of silu_derivative over a whole matrix.
inline Matrix silu_derivative(const Matrix& x, int order) {
    const auto xa = x.array();
    const Eigen::ArrayXXd s = (1.0 + (-xa).exp()).inverse();
    const Eigen::ArrayXXd ds = s * (1.0 - s);
    switch (order) {
        case 0: return (xa * s).matrix();
        case 1: return (s + xa * ds).matrix();
        case 2: return (ds * (2.0 + xa * (1.0 - 2.0 * s))).matrix();
        case 3: return (ds * (3.0 * (1.0 - 2.0 * s) + xa * (1.0 - 6.0 * s + 6.0 * s * s))).matrix();
        case 4:
            return (ds * (4.0 * (1.0 - 6.0 * s + 6.0 * s * s) +
                          xa * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s * s)))
                .matrix();
        default: throw ContractViolation("silu_derivative: order out of range");
    }
}

inline Var silu(Var x, int order = 0) {
    if (order < 0 || order >= kMaxSiluOrder) throw ContractViolation("silu: order out of range on the tape");
    const Var parents[] = {x};
    return x.tape->record(silu_derivative(x.value(), order), parents, [x, order](Tape& t, std::size_t self) {
        t.accumulate(x.id, t.adjoint(self).cwiseProduct(silu_derivative(t.value(x.id), order + 1)));
    });
}

}  // namespace strainflow::ad
