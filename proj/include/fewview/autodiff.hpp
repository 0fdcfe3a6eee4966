#pragma once

// Reverse-mode automatic differentiation over small dense matrices.
//
// A Tape records every primitive evaluated through it. Each node owns its
// forward value, its adjoint and a closure that pushes the adjoint to its
// parents. Nodes are appended in evaluation order, so reverse creation order
// is a valid topological order for the backward sweep. Scalars are 1x1
// matrices. Binary elementwise primitives broadcast a 1x1, Rx1 or 1xC operand
// against the other operand's shape.

#include <cmath>
#include <deque>
#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fewview/error.hpp"

namespace fewview::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

enum class OpTag {
    leaf,
    constant,
    add,
    sub,
    mul,
    div,
    neg,
    exp,
    log,
    sin,
    cos,
    relu,
    softplus,
    sigmoid,
    power,
    sum,
    mean,
    row_sum,
    clamp_min,
    matmul,
    reshape,
    slice_cols,
    concat_cols,
    exclusive_cumsum,
    row_normalize,
};

/// True when every entry is finite.
inline bool all_finite(const Matrix& m) {
    // x * 0 is NaN exactly for non-finite x.
    return (m.array() * 0.0).sum() == 0.0;
}

/// A named trainable tensor. The shape is fixed at construction.
class Parameter {
public:
    Parameter(std::string name, Index rows, Index cols)
        : name_(std::move(name)), value_(Matrix::Zero(rows, cols)), grad_(Matrix::Zero(rows, cols)) {}

    const std::string& name() const noexcept { return name_; }
    Index rows() const noexcept { return value_.rows(); }
    Index cols() const noexcept { return value_.cols(); }
    Index size() const noexcept { return value_.size(); }

    Matrix& value() noexcept { return value_; }
    const Matrix& value() const noexcept { return value_; }
    Matrix& grad() noexcept { return grad_; }
    const Matrix& grad() const noexcept { return grad_; }

    void zero_grad() { grad_.setZero(); }

private:
    std::string name_;
    Matrix value_;
    Matrix grad_;
};

/// Ordered collection of parameters. Parameters live in stable storage so
/// tapes may hold pointers to them while the store is not resized.
class ParameterStore {
public:
    Parameter& add(std::string name, Index rows, Index cols) {
        if (find(name) != nullptr) {
            throw ConfigError("duplicate parameter name '" + name + "'");
        }
        params_.emplace_back(std::move(name), rows, cols);
        return params_.back();
    }

    Parameter* find(const std::string& name) {
        for (auto& p : params_) {
            if (p.name() == name) return &p;
        }
        return nullptr;
    }

    std::size_t count() const noexcept { return params_.size(); }
    Index scalar_count() const noexcept {
        Index n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }

    Parameter& operator[](std::size_t i) { return params_[i]; }
    const Parameter& operator[](std::size_t i) const { return params_[i]; }

private:
    std::deque<Parameter> params_;  // stable addresses across add()
};

class Tape;

/// Handle to a node on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

    const Matrix& value() const;
    const Matrix& grad() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
    OpTag op() const;

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backprop = std::function<void(Tape&, std::size_t)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Matrix value) { return push(OpTag::constant, std::move(value), {}); }

    Var scalar(double v) {
        Matrix m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m));
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    Var param(Parameter& p) {
        if (auto it = leaves_.find(&p); it != leaves_.end()) return Var(this, it->second);
        Var v = push(OpTag::leaf, p.value(), {});
        nodes_[v.id()].param = &p;
        leaves_.emplace(&p, v.id());
        return v;
    }

    Var push(OpTag tag, Matrix value, Backprop backprop) {
        nodes_.push_back(Node{tag, std::move(value), Matrix(), false, nullptr, std::move(backprop)});
        return Var(this, nodes_.size() - 1);
    }

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }
    OpTag op(std::size_t id) const { return nodes_[id].tag; }
    std::size_t size() const noexcept { return nodes_.size(); }

    void accumulate(std::size_t id, Matrix&& g) {
        Node& n = nodes_[id];
        if (n.tag == OpTag::constant) return;
        if (!n.has_grad) {
            n.grad = std::move(g);
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    /// Adds `g` into the adjoint of node `id`.
    template <typename Derived>
    void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
        Node& n = nodes_[id];
        if (n.tag == OpTag::constant) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
        } else {
            n.grad += g;
        }
    }

    /// Reverse sweep from a scalar root. Gradients of parameters reachable
    /// from the root are written (not accumulated) into Parameter::grad;
    /// parameters with a leaf on this tape that the root does not depend on
    /// receive zero.
    void backward(Var root) {
        if (root.tape() != this) throw ConfigError("backward: root belongs to another tape");
        if (value(root.id()).size() != 1) throw ConfigError("backward: root must be scalar");
        for (auto& n : nodes_) {
            n.has_grad = false;
            n.grad.resize(0, 0);
        }
        for (auto& [param, id] : leaves_) param->grad().setZero();
        accumulate(root.id(), Matrix::Ones(1, 1));
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad) continue;
            if (n.param != nullptr) {
                n.param->grad() += n.grad;
            } else if (n.backprop) {
                n.backprop(*this, i);
            }
        }
    }

private:
    struct Node {
        OpTag tag;
        Matrix value;
        Matrix grad;
        bool has_grad;
        Parameter* param;
        Backprop backprop;
    };

    std::vector<Node> nodes_;
    std::unordered_map<Parameter*, std::size_t> leaves_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }
inline OpTag Var::op() const { return tape_->op(id_); }

namespace detail {

inline void check_same_tape(const Var& a, const Var& b) {
    if (a.tape() != b.tape() || a.tape() == nullptr) {
        throw ConfigError("operands recorded on different tapes");
    }
}

inline bool broadcastable(Index from, Index to) { return from == to || from == 1; }

inline Matrix broadcast(const Matrix& m, Index rows, Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == 1) return Matrix::Constant(rows, cols, m(0, 0));
    if (m.cols() == 1) return m.replicate(1, cols);
    return m.replicate(rows, 1);
}

/// Sums `g` down to the (broadcast) source shape.
inline Matrix reduce_to(Matrix g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) {
        Matrix s(1, 1);
        s(0, 0) = g.sum();
        return s;
    }
    if (cols == 1) return g.rowwise().sum();
    return g.colwise().sum();
}

inline std::pair<Index, Index> broadcast_shape(const Matrix& a, const Matrix& b) {
    const Index rows = std::max(a.rows(), b.rows());
    const Index cols = std::max(a.cols(), b.cols());
    if (!broadcastable(a.rows(), rows) || !broadcastable(b.rows(), rows) ||
        !broadcastable(a.cols(), cols) || !broadcastable(b.cols(), cols)) {
        throw ConfigError("shape mismatch: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                          " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    return {rows, cols};
}

template <typename Forward, typename LocalA, typename LocalB>
Var binary(OpTag tag, const Var& a, const Var& b, Forward forward, LocalA da, LocalB db) {
    check_same_tape(a, b);
    Tape& tape = *a.tape();
    const auto [rows, cols] = broadcast_shape(a.value(), b.value());
    Matrix av = broadcast(a.value(), rows, cols);
    Matrix bv = broadcast(b.value(), rows, cols);
    Matrix out = forward(av.array(), bv.array()).matrix();
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape.push(tag, std::move(out), [ia, ib, da, db](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& out_v = t.value(self);
        const Index r = g.rows();
        const Index c = g.cols();
        Matrix a_b = broadcast(t.value(ia), r, c);
        Matrix b_b = broadcast(t.value(ib), r, c);
        if (t.op(ia) != OpTag::constant) {
            Matrix ga = (g.array() * da(a_b.array(), b_b.array(), out_v.array())).matrix();
            t.accumulate(ia, reduce_to(std::move(ga), t.value(ia).rows(), t.value(ia).cols()));
        }
        if (t.op(ib) != OpTag::constant) {
            Matrix gb = (g.array() * db(a_b.array(), b_b.array(), out_v.array())).matrix();
            t.accumulate(ib, reduce_to(std::move(gb), t.value(ib).rows(), t.value(ib).cols()));
        }
    });
}

/// Elementwise unary primitive; `local` maps (input, output) to d out / d in.
template <typename Local>
Var unary(OpTag tag, const Var& a, Matrix out, Local local) {
    Tape& tape = *a.tape();
    const std::size_t ia = a.id();
    return tape.push(tag, std::move(out), [ia, local](Tape& t, std::size_t self) {
        Matrix g = (t.grad(self).array() * local(t.value(ia).array(), t.value(self).array())).matrix();
        t.accumulate(ia, std::move(g));
    });
}

inline double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

namespace detail {

/// Shared body of add/sub: the local partials are +1 and `sign_b`.
inline Var add_like(OpTag tag, const Var& a, const Var& b, double sign_b) {
    check_same_tape(a, b);
    Tape& tape = *a.tape();
    const auto [rows, cols] = broadcast_shape(a.value(), b.value());
    Matrix out = broadcast(a.value(), rows, cols);
    const Matrix& bv = b.value();
    if (bv.rows() == rows && bv.cols() == cols) {
        out += sign_b * bv;
    } else if (bv.rows() == 1 && bv.cols() == cols) {
        out.rowwise() += sign_b * bv.row(0);
    } else {
        out += sign_b * broadcast(bv, rows, cols);
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return tape.push(tag, std::move(out), [ia, ib, sign_b](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.op(ia) != OpTag::constant) t.accumulate(ia, reduce_to(g, t.value(ia).rows(), t.value(ia).cols()));
        if (t.op(ib) != OpTag::constant) {
            t.accumulate(ib, sign_b * reduce_to(g, t.value(ib).rows(), t.value(ib).cols()));
        }
    });
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::add_like(OpTag::add, a, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::add_like(OpTag::sub, a, b, -1.0); }

inline Var operator*(const Var& a, const Var& b) {
    return detail::binary(
        OpTag::mul, a, b, [](const auto& x, const auto& y) { return x * y; },
        [](const auto&, const auto& y, const auto&) { return y; },
        [](const auto& x, const auto&, const auto&) { return x; });
}

inline Var operator/(const Var& a, const Var& b) {
    const Matrix& bv = b.value();
    for (Index i = 0; i < bv.size(); ++i) {
        if (bv.data()[i] == 0.0) throw DomainError("div", bv.data()[i]);
    }
    return detail::binary(
        OpTag::div, a, b, [](const auto& x, const auto& y) { return x / y; },
        [](const auto&, const auto& y, const auto&) { return y.inverse(); },
        [](const auto&, const auto& y, const auto& out) { return -out / y; });
}

inline Var operator-(const Var& a) {
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::neg, -a.value(),
                          [ia](Tape& t, std::size_t self) { t.accumulate(ia, -t.grad(self)); });
}

inline Var operator+(const Var& a, double s) { return a + a.tape()->scalar(s); }
inline Var operator+(double s, const Var& a) { return a.tape()->scalar(s) + a; }
inline Var operator-(const Var& a, double s) { return a - a.tape()->scalar(s); }
inline Var operator-(double s, const Var& a) { return a.tape()->scalar(s) - a; }
inline Var operator*(const Var& a, double s) { return a * a.tape()->scalar(s); }
inline Var operator*(double s, const Var& a) { return a.tape()->scalar(s) * a; }
inline Var operator/(const Var& a, double s) { return a / a.tape()->scalar(s); }
inline Var operator/(double s, const Var& a) { return a.tape()->scalar(s) / a; }

// ---------------------------------------------------------------------------
// Elementwise functions

inline Var exp(const Var& a) {
    Matrix out = a.value().array().exp().matrix();
    return detail::unary(OpTag::exp, a, std::move(out), [](const auto&, const auto& y) { return y; });
}

inline Var log(const Var& a) {
    const Matrix& v = a.value();
    for (Index i = 0; i < v.size(); ++i) {
        if (!(v.data()[i] > 0.0)) throw DomainError("log", v.data()[i]);
    }
    Matrix out = v.array().log().matrix();
    return detail::unary(OpTag::log, a, std::move(out), [](const auto& x, const auto&) { return x.inverse(); });
}

inline Var sin(const Var& a) {
    Matrix out = a.value().array().sin().matrix();
    return detail::unary(OpTag::sin, a, std::move(out), [](const auto& x, const auto&) { return x.cos(); });
}

inline Var cos(const Var& a) {
    Matrix out = a.value().array().cos().matrix();
    return detail::unary(OpTag::cos, a, std::move(out), [](const auto& x, const auto&) { return -x.sin(); });
}

inline Var relu(const Var& a) {
    Matrix out = a.value().cwiseMax(0.0);
    return detail::unary(OpTag::relu, a, std::move(out),
                         [](const auto& x, const auto&) { return (x > 0.0).template cast<double>(); });
}

/// log(1 + e^x), evaluated without overflow for large |x|.
inline Var softplus(const Var& a) {
    Matrix out = a.value().unaryExpr([](double x) { return detail::softplus_scalar(x); });
    return detail::unary(OpTag::softplus, a, std::move(out), [](const auto& x, const auto&) {
        return x.unaryExpr([](double v) { return detail::sigmoid_scalar(v); });
    });
}

inline Var sigmoid(const Var& a) {
    Matrix out = a.value().unaryExpr([](double x) { return detail::sigmoid_scalar(x); });
    return detail::unary(OpTag::sigmoid, a, std::move(out), [](const auto&, const auto& y) { return y * (1.0 - y); });
}

inline Var pow(const Var& a, double p) {
    Matrix out = a.value().array().pow(p).matrix();
    return detail::unary(OpTag::power, a, std::move(out),
                         [p](const auto& x, const auto&) { return p * x.pow(p - 1.0); });
}

inline Var square(const Var& a) { return a * a; }

/// max(a, lo); the gradient passes only where a > lo.
inline Var clamp_min(const Var& a, double lo) {
    Matrix out = a.value().cwiseMax(lo);
    return detail::unary(OpTag::clamp_min, a, std::move(out),
                         [lo](const auto& x, const auto&) { return (x > lo).template cast<double>(); });
}

// ---------------------------------------------------------------------------
// Reductions and structural ops

inline Var sum(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::sum, std::move(out), [ia](Tape& t, std::size_t self) {
        const Matrix& v = t.value(ia);
        t.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), t.grad(self)(0, 0)));
    });
}

inline Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    Matrix out(1, 1);
    out(0, 0) = a.value().sum() / n;
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::mean, std::move(out), [ia, n](Tape& t, std::size_t self) {
        const Matrix& v = t.value(ia);
        t.accumulate(ia, Matrix::Constant(v.rows(), v.cols(), t.grad(self)(0, 0) / n));
    });
}

/// Sum along each row: RxC -> Rx1.
inline Var row_sum(const Var& a) {
    Matrix out = a.value().rowwise().sum();
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::row_sum, std::move(out), [ia](Tape& t, std::size_t self) {
        t.accumulate(ia, t.grad(self).replicate(1, t.value(ia).cols()));
    });
}

inline Var matmul(const Var& a, const Var& b) {
    detail::check_same_tape(a, b);
    if (a.cols() != b.rows()) {
        throw ConfigError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                          std::to_string(b.rows()) + " differ");
    }
    Matrix out;
    out.noalias() = a.value() * b.value();
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return a.tape()->push(OpTag::matmul, std::move(out), [ia, ib](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.op(ia) != OpTag::constant) {
            Matrix ga;
            ga.noalias() = g * t.value(ib).transpose();
            t.accumulate(ia, std::move(ga));
        }
        if (t.op(ib) != OpTag::constant) {
            Matrix gb;
            gb.noalias() = t.value(ia).transpose() * g;
            t.accumulate(ib, std::move(gb));
        }
    });
}

/// Row-major reinterpretation to rows x cols.
inline Var reshape(const Var& a, Index rows, Index cols) {
    if (rows * cols != a.value().size()) throw ConfigError("reshape: element count mismatch");
    Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::reshape, std::move(out), [ia](Tape& t, std::size_t self) {
        const Matrix& v = t.value(ia);
        t.accumulate(ia, Eigen::Map<const Matrix>(t.grad(self).data(), v.rows(), v.cols()));
    });
}

inline Var slice_cols(const Var& a, Index start, Index count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols: out of range");
    Matrix out = a.value().middleCols(start, count);
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::slice_cols, std::move(out), [ia, start, count](Tape& t, std::size_t self) {
        const Matrix& v = t.value(ia);
        Matrix g = Matrix::Zero(v.rows(), v.cols());
        g.middleCols(start, count) = t.grad(self);
        t.accumulate(ia, std::move(g));
    });
}

inline Var concat_cols(const Var& a, const Var& b) {
    detail::check_same_tape(a, b);
    if (a.rows() != b.rows()) throw ConfigError("concat_cols: row counts differ");
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a.value(), b.value();
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    const Index ca = a.cols();
    const Index cb = b.cols();
    return a.tape()->push(OpTag::concat_cols, std::move(out), [ia, ib, ca, cb](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        if (t.op(ia) != OpTag::constant) t.accumulate(ia, g.leftCols(ca));
        if (t.op(ib) != OpTag::constant) t.accumulate(ib, g.rightCols(cb));
    });
}

/// out(r, j) = sum_{k < j} a(r, k).
inline Var exclusive_cumsum(const Var& a) {
    const Matrix& v = a.value();
    Matrix out(v.rows(), v.cols());
    for (Index r = 0; r < v.rows(); ++r) {
        double acc = 0.0;
        for (Index j = 0; j < v.cols(); ++j) {
            out(r, j) = acc;
            acc += v(r, j);
        }
    }
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::exclusive_cumsum, std::move(out), [ia](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        Matrix gi(g.rows(), g.cols());
        for (Index r = 0; r < g.rows(); ++r) {
            double acc = 0.0;
            for (Index k = g.cols(); k-- > 0;) {
                gi(r, k) = acc;
                acc += g(r, k);
            }
        }
        t.accumulate(ia, std::move(gi));
    });
}

/// Divides each row by its sum. Rows summing to exactly zero become the
/// uniform distribution and pass no gradient.
inline Var row_normalize(const Var& a) {
    const Matrix& v = a.value();
    const Index n = v.cols();
    Matrix out(v.rows(), n);
    Eigen::VectorXd sums = v.rowwise().sum();
    for (Index r = 0; r < v.rows(); ++r) {
        if (sums(r) == 0.0) {
            out.row(r).setConstant(1.0 / static_cast<double>(n));
        } else {
            out.row(r) = v.row(r) / sums(r);
        }
    }
    const std::size_t ia = a.id();
    return a.tape()->push(OpTag::row_normalize, std::move(out), [ia, sums](Tape& t, std::size_t self) {
        const Matrix& g = t.grad(self);
        const Matrix& p = t.value(self);
        Matrix gi = Matrix::Zero(g.rows(), g.cols());
        for (Index r = 0; r < g.rows(); ++r) {
            if (sums(r) == 0.0) continue;
            const double dot = g.row(r).dot(p.row(r));
            gi.row(r) = (g.row(r).array() - dot).matrix() / sums(r);
        }
        t.accumulate(ia, std::move(gi));
    });
}

}  // namespace fewview::ad
