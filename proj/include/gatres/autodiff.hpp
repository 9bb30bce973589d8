// Minimal reverse-mode automatic differentiation over dense 2-D tensors.
//
// A Tape records every operation executed on its Vars in insertion order.
// Each recorded node owns (or borrows) its forward value and a closure that
// scatters the node's upstream gradient into its inputs. backward() walks
// the tape once in reverse insertion order; since inputs are always
// recorded before their consumers, this is a valid topological order.
// Gradients of a tensor used several times accumulate additively.
//
// Parameters live outside the tape. Tape::parameter() borrows a Tensor with
// requires_grad() set; after backward() the node's gradient is added into
// the tensor's own grad buffer. A tape is single-use: backward() consumes it.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gatres/error.hpp"
#include "gatres/rng.hpp"
#include "gatres/tensor.hpp"

namespace gatres::ad {

using Index = std::uint32_t;

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::span<const double> out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) {
        return push(std::make_shared<const Tensor>(std::move(value)), false, nullptr);
    }

    /// Non-owning constant; `value` must outlive the tape.
    Var borrow(const Tensor& value) {
        return push(std::shared_ptr<const Tensor>(&value, [](const Tensor*) {}), false, nullptr);
    }

    /// Non-owning differentiable leaf. Gradients are flushed into value.grad().
    Var parameter(Tensor& value) {
        if (!value.requires_grad()) value.set_requires_grad(true);
        Var v = push(std::shared_ptr<const Tensor>(&value, [](const Tensor*) {}), true, nullptr);
        nodes_[v.id].bound = &value;
        return v;
    }

    /// Records an operation result. The backward rule is dropped when no
    /// input participates in differentiation.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
        bool needs = false;
        for (const Var& in : inputs) {
            check_owner(in);
            needs = needs || nodes_[in.id].needs_grad;
        }
        return push(std::make_shared<const Tensor>(std::move(value)), needs,
                    needs ? std::move(backward) : nullptr);
    }
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
        bool needs = false;
        for (const Var& in : inputs) {
            check_owner(in);
            needs = needs || nodes_[in.id].needs_grad;
        }
        return push(std::make_shared<const Tensor>(std::move(value)), needs,
                    needs ? std::move(backward) : nullptr);
    }

    const Tensor& value(Var v) const { return *nodes_.at(v.id).value; }
    bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

    /// Mutable gradient buffer for `v`, allocated on first use. Backward
    /// rules accumulate into it.
    std::span<double> grad_buffer(Var v) {
        Node& n = nodes_.at(v.id);
        if (n.grad.empty()) n.grad.assign(n.value->size(), 0.0);
        return n.grad;
    }

    /// Gradient of the last backward() with respect to `v` (empty if none reached it).
    std::span<const double> grad(Var v) const { return nodes_.at(v.id).grad; }

    void backward(Var loss) {
        check_owner(loss);
        if (consumed_) throw ParameterError("tape already consumed by a previous backward()");
        const Tensor& lv = value(loss);
        if (lv.rows() != 1 || lv.cols() != 1)
            throw DimensionError("backward() needs a scalar loss, got " + lv.shape_string());
        consumed_ = true;
        if (!nodes_[loss.id].needs_grad) return;
        grad_buffer(loss)[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.needs_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, n.grad);
        }
        for (Node& n : nodes_) {
            if (!n.bound || n.grad.empty()) continue;
            std::span<double> g = n.bound->grad();
            for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
        }
    }

    bool consumed() const noexcept { return consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    void check_owner(Var v) const {
        if (v.tape != this || v.id >= nodes_.size())
            throw ParameterError("Var does not belong to this tape");
    }

private:
    struct Node {
        std::shared_ptr<const Tensor> value;
        std::vector<double> grad;
        bool needs_grad = false;
        BackwardFn backward;
        Tensor* bound = nullptr;
    };

    Var push(std::shared_ptr<const Tensor> value, bool needs, BackwardFn fn) {
        if (consumed_) throw ParameterError("cannot record on a consumed tape");
        nodes_.push_back(Node{std::move(value), {}, needs, std::move(fn), nullptr});
        return Var{this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw ParameterError("Vars live on different tapes");
    return *a.tape;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m x k] += G[m x n] * B[k x n]^T
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
            crow[p] += s;
        }
    }
}

// C[k x n] += A[m x k]^T * G[m x n]
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

inline void check_indices(std::span<const Index> idx, std::size_t bound, const char* op) {
    for (std::size_t e = 0; e < idx.size(); ++e)
        if (idx[e] >= bound)
            throw IndexError(std::string(op) + ": index " + std::to_string(idx[e]) + " at position " +
                             std::to_string(e) + " out of range for " + std::to_string(bound));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows())
        throw DimensionError("matmul: inner dimensions differ " + av.shape_string() + " x " +
                             bv.shape_string());
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out(m, n);
    detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    return tape.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> g) {
        if (t.needs_grad(a))
            detail::gemm_nt(g.data(), t.value(b).data().data(), t.grad_buffer(a).data(), m, k, n);
        if (t.needs_grad(b))
            detail::gemm_tn(t.value(a).data().data(), g.data(), t.grad_buffer(b).data(), m, k, n);
    });
}

inline Var add(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    detail::require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value().detached();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] += bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        for (Var v : {a, b}) {
            if (!t.needs_grad(v)) continue;
            auto gb = t.grad_buffer(v);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    detail::require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value().detached();
    const auto bv = b.value().data();
    for (std::size_t i = 0; i < bv.size(); ++i) out[i] *= bv[i];
    return tape.record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
        const auto av = t.value(a).data();
        const auto bv = t.value(b).data();
        if (t.needs_grad(a)) {
            auto ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.needs_grad(b)) {
            auto gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

/// a[n x k] + broadcast of row vector b[1 x k].
inline Var add_row_broadcast(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (bv.rows() != 1 || bv.cols() != av.cols())
        throw DimensionError("add_row_broadcast: " + av.shape_string() + " + " + bv.shape_string());
    Tensor out = av.detached();
    const std::size_t n = av.rows(), k = av.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) out(i, j) += bv[j];
    return tape.record(std::move(out), {a, b}, [a, b, n, k](Tape& t, std::span<const double> g) {
        if (t.needs_grad(a)) {
            auto ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.needs_grad(b)) {
            auto gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) gb[j] += g[i * k + j];
        }
    });
}

/// Scales row e of a[E x d] by s[e], s of shape E x 1.
inline Var mul_rows(Var a, Var s) {
    Tape& tape = detail::same_tape(a, s);
    const Tensor& av = a.value();
    const Tensor& sv = s.value();
    if (sv.cols() != 1 || sv.rows() != av.rows())
        throw DimensionError("mul_rows: " + av.shape_string() + " by " + sv.shape_string());
    const std::size_t rows = av.rows(), d = av.cols();
    Tensor out = av.detached();
    for (std::size_t e = 0; e < rows; ++e)
        for (std::size_t j = 0; j < d; ++j) out(e, j) *= sv[e];
    return tape.record(std::move(out), {a, s}, [a, s, rows, d](Tape& t, std::span<const double> g) {
        const Tensor& av = t.value(a);
        const Tensor& sv = t.value(s);
        if (t.needs_grad(a)) {
            auto ga = t.grad_buffer(a);
            for (std::size_t e = 0; e < rows; ++e)
                for (std::size_t j = 0; j < d; ++j) ga[e * d + j] += g[e * d + j] * sv[e];
        }
        if (t.needs_grad(s)) {
            auto gs = t.grad_buffer(s);
            for (std::size_t e = 0; e < rows; ++e) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += g[e * d + j] * av(e, j);
                gs[e] += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise

struct UnaryOp {
    enum class Kind { elu, leaky_relu, exp, log, neg, add_scalar, mul_scalar };
    Kind kind;
    /// ELU alpha, leaky-ReLU slope, or the scalar operand.
    double param = 0.0;
};

inline Var elementwise(Var a, UnaryOp op) {
    Tape& tape = *a.tape;
    const Tensor& av = a.value();
    Tensor out = av.detached();
    auto o = out.data();
    switch (op.kind) {
    case UnaryOp::Kind::elu:
        for (double& x : o) x = x >= 0.0 ? x : op.param * std::expm1(x);
        break;
    case UnaryOp::Kind::leaky_relu:
        for (double& x : o) x = x >= 0.0 ? x : op.param * x;
        break;
    case UnaryOp::Kind::exp:
        for (double& x : o) x = std::exp(x);
        break;
    case UnaryOp::Kind::log:
        for (std::size_t i = 0; i < o.size(); ++i) {
            if (!(o[i] > 0.0))
                throw DomainError("log of non-positive entry " + std::to_string(o[i]) + " at index " +
                                  std::to_string(i));
            o[i] = std::log(o[i]);
        }
        break;
    case UnaryOp::Kind::neg:
        for (double& x : o) x = -x;
        break;
    case UnaryOp::Kind::add_scalar:
        for (double& x : o) x += op.param;
        break;
    case UnaryOp::Kind::mul_scalar:
        for (double& x : o) x *= op.param;
        break;
    }
    const std::size_t id = tape.size();
    return tape.record(std::move(out), {a}, [a, op, id](Tape& t, std::span<const double> g) {
        const auto x = t.value(a).data();
        const auto y = t.value(Var{&t, id}).data();
        auto ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) {
            double d = 1.0;
            switch (op.kind) {
            case UnaryOp::Kind::elu: d = x[i] >= 0.0 ? 1.0 : y[i] + op.param; break;
            case UnaryOp::Kind::leaky_relu: d = x[i] >= 0.0 ? 1.0 : op.param; break;
            case UnaryOp::Kind::exp: d = y[i]; break;
            case UnaryOp::Kind::log: d = 1.0 / x[i]; break;
            case UnaryOp::Kind::neg: d = -1.0; break;
            case UnaryOp::Kind::add_scalar: d = 1.0; break;
            case UnaryOp::Kind::mul_scalar: d = op.param; break;
            }
            ga[i] += g[i] * d;
        }
    });
}

inline Var elu(Var a, double alpha = 1.0) { return elementwise(a, {UnaryOp::Kind::elu, alpha}); }
inline Var leaky_relu(Var a, double slope = 0.2) {
    return elementwise(a, {UnaryOp::Kind::leaky_relu, slope});
}
inline Var exp(Var a) { return elementwise(a, {UnaryOp::Kind::exp}); }
inline Var log(Var a) { return elementwise(a, {UnaryOp::Kind::log}); }
inline Var neg(Var a) { return elementwise(a, {UnaryOp::Kind::neg}); }
inline Var add_scalar(Var a, double s) { return elementwise(a, {UnaryOp::Kind::add_scalar, s}); }
inline Var mul_scalar(Var a, double s) { return elementwise(a, {UnaryOp::Kind::mul_scalar, s}); }

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Var sum(Var a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    return a.tape->record(Tensor(1, 1, s), {a}, [a](Tape& t, std::span<const double> g) {
        for (double& x : t.grad_buffer(a)) x += g[0];
    });
}

inline Var mean(Var a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw DimensionError("mean of empty tensor");
    return mul_scalar(sum(a), 1.0 / n);
}

/// Columns of all inputs side by side; every input has the same row count.
inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of nothing");
    Tape& tape = *parts.front().tape;
    const std::size_t rows = parts.front().rows();
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const Var& p : parts) {
        tape.check_owner(p);
        if (p.rows() != rows)
            throw DimensionError("concat_cols: row counts differ " + p.value().shape_string());
        offsets.push_back(total);
        total += p.cols();
    }
    Tensor out(rows, total);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t i = 0; i < rows; ++i)
            std::copy(pv.row(i).begin(), pv.row(i).end(), out.row(i).begin() + offsets[k]);
    }
    return tape.record(std::move(out), parts, [parts, offsets, rows, total](Tape& t, std::span<const double> g) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
            if (!t.needs_grad(parts[k])) continue;
            const std::size_t w = t.value(parts[k]).cols();
            auto gp = t.grad_buffer(parts[k]);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + offsets[k] + j];
        }
    });
}

/// Elementwise average of same-shape inputs.
inline Var average(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("average of nothing");
    Tape& tape = *parts.front().tape;
    const Tensor& first = parts.front().value();
    Tensor out(first.rows(), first.cols());
    for (const Var& p : parts) {
        tape.check_owner(p);
        detail::require_same_shape(first, p.value(), "average");
        const auto pv = p.value().data();
        for (std::size_t i = 0; i < pv.size(); ++i) out[i] += pv[i];
    }
    const double scale = 1.0 / static_cast<double>(parts.size());
    for (double& x : out.data()) x *= scale;
    return tape.record(std::move(out), parts, [parts, scale](Tape& t, std::span<const double> g) {
        for (const Var& p : parts) {
            if (!t.needs_grad(p)) continue;
            auto gp = t.grad_buffer(p);
            for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * scale;
        }
    });
}

/// Rows [begin, end) of a.
inline Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const Tensor& av = a.value();
    if (begin > end || end > av.rows())
        throw IndexError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for " + av.shape_string());
    const std::size_t c = av.cols();
    std::vector<double> data(av.data().begin() + begin * c, av.data().begin() + end * c);
    return a.tape->record(Tensor(end - begin, c, std::move(data)), {a},
                          [a, begin, c](Tape& t, std::span<const double> g) {
                              auto ga = t.grad_buffer(a);
                              for (std::size_t i = 0; i < g.size(); ++i) ga[begin * c + i] += g[i];
                          });
}

// ---------------------------------------------------------------------------
// Softmax family

inline Var softmax_rows(Var a) {
    const Tensor& av = a.value();
    const std::size_t m = av.rows(), n = av.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const auto x = av.row(i);
        auto y = out.row(i);
        double mx = x.empty() ? 0.0 : x[0];
        for (double v : x) mx = std::max(mx, v);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
        for (double& v : y) v /= s;
    }
    const std::size_t id = a.tape->size();
    return a.tape->record(std::move(out), {a}, [a, id, m, n](Tape& t, std::span<const double> g) {
        const Tensor& y = t.value(Var{&t, id});
        auto ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y(i, j);
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y(i, j) * (g[i * n + j] - dot);
        }
    });
}

inline Var log_softmax_rows(Var a) {
    const Tensor& av = a.value();
    const std::size_t m = av.rows(), n = av.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const auto x = av.row(i);
        auto y = out.row(i);
        double mx = x.empty() ? 0.0 : x[0];
        for (double v : x) mx = std::max(mx, v);
        double s = 0.0;
        for (double v : x) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
    }
    const std::size_t id = a.tape->size();
    return a.tape->record(std::move(out), {a}, [a, id, m, n](Tape& t, std::span<const double> g) {
        const Tensor& y = t.value(Var{&t, id});
        auto ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] - std::exp(y(i, j)) * gs;
        }
    });
}

/// Softmax of scores[E x 1] within each group of entries sharing a segment id.
/// `segment_of` must outlive the tape.
inline Var segment_softmax(Var scores, std::span<const Index> segment_of, std::size_t n_segments) {
    const Tensor& sv = scores.value();
    if (sv.cols() != 1 || sv.rows() != segment_of.size())
        throw DimensionError("segment_softmax: scores " + sv.shape_string() + " with " +
                             std::to_string(segment_of.size()) + " segment ids");
    detail::check_indices(segment_of, n_segments, "segment_softmax");
    const std::size_t edges = sv.rows();
    std::vector<double> seg_max(n_segments, -INFINITY);
    for (std::size_t e = 0; e < edges; ++e)
        seg_max[segment_of[e]] = std::max(seg_max[segment_of[e]], sv[e]);
    std::vector<double> seg_sum(n_segments, 0.0);
    Tensor out(edges, 1);
    for (std::size_t e = 0; e < edges; ++e) {
        out[e] = std::exp(sv[e] - seg_max[segment_of[e]]);
        seg_sum[segment_of[e]] += out[e];
    }
    for (std::size_t e = 0; e < edges; ++e) out[e] /= seg_sum[segment_of[e]];
    const std::size_t id = scores.tape->size();
    return scores.tape->record(
        std::move(out), {scores},
        [scores, id, segment_of, n_segments](Tape& t, std::span<const double> g) {
            const Tensor& y = t.value(Var{&t, id});
            std::vector<double> dot(n_segments, 0.0);
            for (std::size_t e = 0; e < g.size(); ++e) dot[segment_of[e]] += g[e] * y[e];
            auto gs = t.grad_buffer(scores);
            for (std::size_t e = 0; e < g.size(); ++e) gs[e] += y[e] * (g[e] - dot[segment_of[e]]);
        });
}

// ---------------------------------------------------------------------------
// Graph message passing. Index spans must outlive the tape.

/// Row i of the result sums every values row e with dest[e] == i.
inline Var scatter_add(Var values, std::span<const Index> dest, std::size_t n_nodes) {
    const Tensor& vv = values.value();
    if (vv.rows() != dest.size())
        throw DimensionError("scatter_add: values " + vv.shape_string() + " with " +
                             std::to_string(dest.size()) + " destinations");
    detail::check_indices(dest, n_nodes, "scatter_add");
    const std::size_t d = vv.cols();
    Tensor out(n_nodes, d);
    for (std::size_t e = 0; e < dest.size(); ++e) {
        auto o = out.row(dest[e]);
        const auto v = vv.row(e);
        for (std::size_t j = 0; j < d; ++j) o[j] += v[j];
    }
    return values.tape->record(std::move(out), {values}, [values, dest, d](Tape& t, std::span<const double> g) {
        auto gv = t.grad_buffer(values);
        for (std::size_t e = 0; e < dest.size(); ++e)
            for (std::size_t j = 0; j < d; ++j) gv[e * d + j] += g[dest[e] * d + j];
    });
}

/// Row e of the result is row index[e] of a.
inline Var gather_rows(Var a, std::span<const Index> index) {
    const Tensor& av = a.value();
    detail::check_indices(index, av.rows(), "gather_rows");
    const std::size_t d = av.cols();
    Tensor out(index.size(), d);
    for (std::size_t e = 0; e < index.size(); ++e)
        std::copy(av.row(index[e]).begin(), av.row(index[e]).end(), out.row(e).begin());
    return a.tape->record(std::move(out), {a}, [a, index, d](Tape& t, std::span<const double> g) {
        auto ga = t.grad_buffer(a);
        for (std::size_t e = 0; e < index.size(); ++e)
            for (std::size_t j = 0; j < d; ++j) ga[index[e] * d + j] += g[e * d + j];
    });
}

/// out[dst[e]] += weight[e] * values[src[e]] for every edge e, without
/// materialising the E x d message matrix. Equivalent to
/// scatter_add(mul_rows(gather_rows(values, src), weight), dst, n_nodes).
inline Var edge_aggregate(Var values, Var weight, std::span<const Index> src,
                          std::span<const Index> dst, std::size_t n_nodes) {
    Tape& tape = detail::same_tape(values, weight);
    const Tensor& vv = values.value();
    const Tensor& wv = weight.value();
    if (src.size() != dst.size() || wv.rows() != src.size() || wv.cols() != 1)
        throw DimensionError("edge_aggregate: weights " + wv.shape_string() + " for " +
                             std::to_string(src.size()) + " edges");
    detail::check_indices(src, vv.rows(), "edge_aggregate(src)");
    detail::check_indices(dst, n_nodes, "edge_aggregate(dst)");
    const std::size_t d = vv.cols();
    Tensor out(n_nodes, d);
    for (std::size_t e = 0; e < src.size(); ++e) {
        const double w = wv[e];
        auto o = out.row(dst[e]);
        const auto v = vv.row(src[e]);
        for (std::size_t j = 0; j < d; ++j) o[j] += w * v[j];
    }
    return tape.record(std::move(out), {values, weight},
                       [values, weight, src, dst, d](Tape& t, std::span<const double> g) {
                           const Tensor& vv = t.value(values);
                           const Tensor& wv = t.value(weight);
                           if (t.needs_grad(values)) {
                               auto gv = t.grad_buffer(values);
                               for (std::size_t e = 0; e < src.size(); ++e) {
                                   const double w = wv[e];
                                   for (std::size_t j = 0; j < d; ++j)
                                       gv[src[e] * d + j] += w * g[dst[e] * d + j];
                               }
                           }
                           if (t.needs_grad(weight)) {
                               auto gw = t.grad_buffer(weight);
                               for (std::size_t e = 0; e < src.size(); ++e) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < d; ++j)
                                       acc += g[dst[e] * d + j] * vv(src[e], j);
                                   gw[e] += acc;
                               }
                           }
                       });
}

// ---------------------------------------------------------------------------
// Regularisation

/// Inverted dropout: survivors are scaled by 1/(1-p) in training mode;
/// inference mode and p == 0 are the identity and draw nothing from `rng`.
inline Var dropout(Var a, double p, bool training, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0))
        throw ParameterError("dropout probability must lie in [0,1), got " + std::to_string(p));
    if (!training || p == 0.0) return a;
    const Tensor& av = a.value();
    const double scale = 1.0 / (1.0 - p);
    std::vector<double> mask(av.size());
    for (double& m : mask) m = rng.uniform() < p ? 0.0 : scale;
    Tensor out = av.detached();
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] *= mask[i];
    return a.tape->record(std::move(out), {a}, [a, mask = std::move(mask)](Tape& t, std::span<const double> g) {
        auto ga = t.grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    });
}

} // namespace gatres::ad
