#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dmqn/errors.hpp"
#include "dmqn/tensor.hpp"

// Reverse-mode differentiation over dense row-major tensors.
//
// A BasicGraph records every operation in construction order; backward() walks
// the records in reverse. Every reduction sums in a fixed order (matrix
// products in T, row statistics in double), so results are bitwise
// reproducible.

namespace dmqn {

namespace kernels {

// out[m×n] (=|+=) a[m×k]·b[k×n]. Each output sums its k products in order.
template <class T>
void gemm_nn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    std::vector<T> acc(4 * n);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        std::fill(acc.begin(), acc.end(), T{0});
        T* a0 = acc.data();
        T* a1 = a0 + n;
        T* a2 = a1 + n;
        T* a3 = a2 + n;
        const T* r0 = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T v0 = r0[p], v1 = r0[k + p], v2 = r0[2 * k + p], v3 = r0[3 * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T bv = brow[j];
                a0[j] += v0 * bv;
                a1[j] += v1 * bv;
                a2[j] += v2 * bv;
                a3[j] += v3 * bv;
            }
        }
        T* orow = out + i * n;
        if (accumulate) {
            for (std::size_t j = 0; j < 4 * n; ++j) orow[j] += acc[j];
        } else {
            std::copy(acc.begin(), acc.end(), orow);
        }
    }
    for (; i < m; ++i) {
        std::fill_n(acc.begin(), n, T{0});
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
        }
        T* orow = out + i * n;
        if (accumulate) {
            for (std::size_t j = 0; j < n; ++j) orow[j] += acc[j];
        } else {
            std::copy_n(acc.begin(), n, orow);
        }
    }
}

// out[m×n] (=|+=) a[m×k]·b[n×k]ᵀ
template <class T>
void gemm_nt(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    std::vector<T> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    gemm_nn(a, bt.data(), out, m, k, n, accumulate);
}

// out[k×n] (=|+=) a[m×k]ᵀ·b[m×n]
template <class T>
void gemm_tn(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    std::vector<T> acc(k * n, T{0});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            T* accrow = acc.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) accrow[j] += av * brow[j];
        }
    }
    if (accumulate) {
        for (std::size_t idx = 0; idx < k * n; ++idx) out[idx] += acc[idx];
    } else {
        std::copy(acc.begin(), acc.end(), out);
    }
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace kernels

template <class T>
class BasicGraph;

/// Handle to a node of a graph. Cheap to copy; valid while the graph lives.
template <class T>
class BasicVar {
public:
    BasicVar() = default;

    bool valid() const { return graph_ != nullptr; }
    BasicGraph<T>& graph() const { return *graph_; }
    std::size_t id() const { return id_; }

    const BasicTensor<T>& value() const { return graph_->value(*this); }
    const Shape& shape() const { return value().shape(); }
    std::span<const T> grad() const { return graph_->grad(*this); }
    T item() const {
        if (value().size() != 1) throw ContractError("item() on non-scalar " + shape_str(shape()));
        return value()[0];
    }

private:
    friend class BasicGraph<T>;
    BasicVar(BasicGraph<T>* g, std::size_t id) : graph_(g), id_(id) {}

    BasicGraph<T>* graph_ = nullptr;
    std::size_t id_ = 0;
};

template <class T>
class BasicGraph {
public:
    using Var = BasicVar<T>;
    /// Backward rule: called with the graph and the node's own id once its
    /// gradient is final. It adds contributions into its inputs' gradients.
    using BackwardFn = std::function<void(BasicGraph&, std::size_t)>;

    explicit BasicGraph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    BasicGraph(const BasicGraph&) = delete;
    BasicGraph& operator=(const BasicGraph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    /// Input that never receives a gradient.
    Var constant(BasicTensor<T> value) { return push(std::move(value), false, Kind::intermediate, nullptr, {}); }

    /// Input whose gradient accumulates across backward() calls.
    Var leaf(BasicTensor<T> value) { return push(std::move(value), grad_enabled_, Kind::leaf, nullptr, {}); }

    /// Reads a parameter. Its gradient is added into `p.grad` on backward().
    Var param(BasicParameter<T>& p) {
        BackwardFn flush = [&p](BasicGraph& g, std::size_t self) {
            const auto& gr = g.nodes_[self].grad;
            for (std::size_t i = 0; i < gr.size(); ++i) p.grad[i] += gr[i];
        };
        return push(p.value, grad_enabled_, Kind::param, &p, std::move(flush));
    }

    /// Records the result of an operation. The node requires a gradient when
    /// any input does (or `force_grad` is set, for ops that read parameters).
    Var emit(BasicTensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn, bool force_grad = false) {
        bool needs = force_grad && grad_enabled_;
        for (const auto& in : inputs) {
            check_owner(in);
            needs = needs || nodes_[in.id_].requires_grad;
        }
        return push(std::move(value), needs, Kind::intermediate, nullptr, needs ? std::move(fn) : BackwardFn{});
    }

    const BasicTensor<T>& value(Var v) const {
        check_owner(v);
        return nodes_[v.id_].value;
    }

    std::span<const T> grad(Var v) const {
        check_owner(v);
        return nodes_[v.id_].grad;
    }

    bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }

    /// Gradient buffer of node `id` to accumulate into; empty span if the node
    /// does not require a gradient.
    std::span<T> grad_sink(std::size_t id) {
        auto& n = nodes_[id];
        if (!n.requires_grad) return {};
        return n.grad;
    }
    std::span<T> grad_sink(Var v) { return grad_sink(v.id_); }
    std::span<const T> own_grad(std::size_t id) const { return nodes_[id].grad; }
    const BasicTensor<T>& value_of(std::size_t id) const { return nodes_[id].value; }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    /// Leaf gradients and parameter gradients accumulate across calls.
    void backward(Var loss) {
        check_owner(loss);
        if (nodes_[loss.id_].value.size() != 1) {
            throw ContractError("backward() needs a scalar loss, got shape " +
                                shape_str(nodes_[loss.id_].value.shape()));
        }
        if (!grad_enabled_) throw ContractError("backward() on a graph built without gradients");
        for (auto& n : nodes_) {
            if (!n.requires_grad) continue;
            if (n.kind == Kind::leaf) {
                if (n.grad.empty()) n.grad.assign(n.value.size(), T{0});
            } else {
                n.grad.assign(n.value.size(), T{0});
            }
        }
        if (!nodes_[loss.id_].requires_grad) return;
        nodes_[loss.id_].grad[0] += T{1};
        for (std::size_t id = loss.id_ + 1; id-- > 0;) {
            auto& n = nodes_[id];
            if (n.requires_grad && n.backward) n.backward(*this, id);
        }
    }

private:
    enum class Kind { intermediate, leaf, param };

    struct Node {
        BasicTensor<T> value;
        std::vector<T> grad;
        bool requires_grad = false;
        Kind kind = Kind::intermediate;
        BasicParameter<T>* param = nullptr;
        BackwardFn backward;
    };

    Var push(BasicTensor<T> value, bool requires_grad, Kind kind, BasicParameter<T>* p, BackwardFn fn) {
#ifndef NDEBUG
        for (auto x : value.values()) {
            if (!std::isfinite(x)) {
                throw NumericError("non-finite value produced at graph node " + std::to_string(nodes_.size()));
            }
        }
#endif
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.kind = kind;
        n.param = p;
        n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    void check_owner(Var v) const {
        if (v.graph_ != this || v.id_ >= nodes_.size()) throw ContractError("variable belongs to another graph");
    }

    bool grad_enabled_;
    std::deque<Node> nodes_;  // stable addresses: ops keep references to input values while emitting
};

using Graph = BasicGraph<float>;
using Var = BasicVar<float>;

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

template <class T>
std::string shapes(const char* op, const BasicVar<T>& a, const BasicVar<T>& b) {
    return std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape());
}

template <class T>
void add_into(std::span<T> dst, std::span<const T> src) {
    if (dst.empty()) return;
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m×k] · b[k×n]
template <class T>
BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    detail::require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), detail::shapes("matmul", a, b));
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    BasicTensor<T> out({m, n});
    kernels::gemm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {a, b}, [ia, ib, m, k, n](BasicGraph<T>& g, std::size_t self) {
        const T* dy = g.own_grad(self).data();
        if (auto da = g.grad_sink(ia); !da.empty()) kernels::gemm_nt(dy, g.value_of(ib).data(), da.data(), m, n, k, true);
        if (auto db = g.grad_sink(ib); !db.empty()) kernels::gemm_tn(g.value_of(ia).data(), dy, db.data(), m, k, n, true);
    });
}

/// a[m×k] · b[n×k]ᵀ
template <class T>
BasicVar<T> matmul_nt(BasicVar<T> a, BasicVar<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    detail::require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1), detail::shapes("matmul_nt", a, b));
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
    BasicTensor<T> out({m, n});
    kernels::gemm_nt(av.data(), bv.data(), out.data(), m, k, n, false);
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {a, b}, [ia, ib, m, k, n](BasicGraph<T>& g, std::size_t self) {
        const T* dy = g.own_grad(self).data();
        // dA = dY·B, dB = dYᵀ·A
        if (auto da = g.grad_sink(ia); !da.empty()) kernels::gemm_nn(dy, g.value_of(ib).data(), da.data(), m, n, k, true);
        if (auto db = g.grad_sink(ib); !db.empty()) kernels::gemm_tn(dy, g.value_of(ia).data(), db.data(), m, n, k, true);
    });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
BasicVar<T> add(BasicVar<T> a, BasicVar<T> b) {
    detail::require(a.shape() == b.shape(), detail::shapes("add", a, b));
    BasicTensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {a, b}, [ia, ib](BasicGraph<T>& g, std::size_t self) {
        detail::add_into(g.grad_sink(ia), g.own_grad(self));
        detail::add_into(g.grad_sink(ib), g.own_grad(self));
    });
}

/// Adds a row vector (shape [n] or [1×n]) to every row of a[...×n].
template <class T>
BasicVar<T> add_row(BasicVar<T> a, BasicVar<T> row) {
    const std::size_t n = a.value().cols();
    detail::require(row.value().size() == n && row.value().cols() == n, detail::shapes("add_row", a, row));
    BasicTensor<T> out = a.value();
    const auto& rv = row.value();
    const std::size_t m = out.rows();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += rv[j];
    const std::size_t ia = a.id(), ir = row.id();
    return a.graph().emit(std::move(out), {a, row}, [ia, ir, m, n](BasicGraph<T>& g, std::size_t self) {
        auto dy = g.own_grad(self);
        detail::add_into(g.grad_sink(ia), dy);
        if (auto dr = g.grad_sink(ir); !dr.empty()) {
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i) s += dy[i * n + j];
                dr[j] += static_cast<T>(s);
            }
        }
    });
}

/// Adds a constant tensor of the same shape (no gradient flows to it).
template <class T>
BasicVar<T> add_constant(BasicVar<T> a, const BasicTensor<T>& c) {
    detail::require(a.shape() == c.shape(), "add_constant: incompatible shapes " + shape_str(a.shape()) + " and " +
                                                 shape_str(c.shape()));
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {a}, [ia](BasicGraph<T>& g, std::size_t self) {
        detail::add_into(g.grad_sink(ia), g.own_grad(self));
    });
}

template <class T>
BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b) {
    detail::require(a.shape() == b.shape(), detail::shapes("mul", a, b));
    BasicTensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().emit(std::move(out), {a, b}, [ia, ib](BasicGraph<T>& g, std::size_t self) {
        auto dy = g.own_grad(self);
        if (auto da = g.grad_sink(ia); !da.empty()) {
            const auto& bv = g.value_of(ib);
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
        }
        if (auto db = g.grad_sink(ib); !db.empty()) {
            const auto& av = g.value_of(ia);
            for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
        }
    });
}

template <class T>
BasicVar<T> scale(BasicVar<T> a, T s) {
    BasicTensor<T> out = a.value();
    for (auto& x : out.values()) x *= s;
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {a}, [ia, s](BasicGraph<T>& g, std::size_t self) {
        auto dy = g.own_grad(self);
        if (auto da = g.grad_sink(ia); !da.empty())
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
    });
}

/// Multiplies each element by a fixed 0/1 (or general) constant of the same shape.
template <class T>
BasicVar<T> mul_constant(BasicVar<T> a, const BasicTensor<T>& c) {
    detail::require(a.shape() == c.shape(), "mul_constant: incompatible shapes " + shape_str(a.shape()) + " and " +
                                                 shape_str(c.shape()));
    BasicTensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
    const std::size_t ia = a.id();
    return a.graph().emit(std::move(out), {a}, [ia, c](BasicGraph<T>& g, std::size_t self) {
        auto dy = g.own_grad(self);
        if (auto da = g.grad_sink(ia); !da.empty())
            for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * c[i];
    });
}

/// Zeroes rows i of a[m×n] where keep[i] is false.
template <class T>
BasicVar<T> mask_rows(BasicVar<T> a, const std::vector<bool>& keep) {
    const auto& av = a.value();
    detail::require(av.rows() == keep.size(), "mask_rows: " + std::to_string(keep.size()) + " flags for " +
                                                  shape_str(av.shape()));
    BasicTensor<T> c(av.shape());
    const std::size_t n = av.cols();
    for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i]) std::fill_n(c.data() + i * n, n, T{1});
    return mul_constant(a, c);
}

/// Zeroes columns j of a[m×n] where keep[j] is false.
template <class T>
BasicVar<T> mask_cols(BasicVar<T> a, const std::vector<bool>& keep) {
    const auto& av = a.value();
    detail::require(av.cols() == keep.size(), "mask_cols: " + std::to_string(keep.size()) + " flags for " +
                                                  shape_str(av.shape()));
    BasicTensor<T> c(av.shape());
    const std::size_t n = av.cols();
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * n + j] = keep[j] ? T{1} : T{0};
    return mul_constant(a, c);
}

template <class T>
BasicVar<T> silu(BasicVar<T> x) {
    BasicTensor<T> out = x.value();
    for (auto& v : out.values()) v = static_cast<T>(v * kernels::sigmoid(v));
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix](BasicGraph<T>& g, std::size_t self) {
        auto dy = g.own_grad(self);
        auto dx = g.grad_sink(ix);
        if (dx.empty()) return;
        const auto& xv = g.value_of(ix);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            const double v = xv[i];
            const double s = kernels::sigmoid(v);
            dx[i] += static_cast<T>(dy[i] * s * (1.0 + v * (1.0 - s)));
        }
    });
}

template <class T>
BasicVar<T> sigmoid(BasicVar<T> x) {
    BasicTensor<T> out = x.value();
    for (auto& v : out.values()) v = static_cast<T>(kernels::sigmoid(v));
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix](BasicGraph<T>& g, std::size_t self) {
        auto dy = g.own_grad(self);
        auto dx = g.grad_sink(ix);
        if (dx.empty()) return;
        const auto& y = g.value_of(self);
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
    });
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-row standardization over the last axis followed by gain/offset.
template <class T>
BasicVar<T> layer_norm(BasicVar<T> x, BasicVar<T> gain, BasicVar<T> offset, double eps = 1e-5) {
    if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
    const auto& xv = x.value();
    const std::size_t n = xv.cols(), m = xv.rows();
    detail::require(gain.value().size() == n && offset.value().size() == n, detail::shapes("layer_norm", x, gain));
    BasicTensor<T> out(xv.shape());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(m);
    const auto& gv = gain.value();
    const auto& ov = offset.value();
    for (std::size_t i = 0; i < m; ++i) {
        const T* r = xv.data() + i * n;
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += r[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (r[j] - mean) * inv_std[i];
            out[i * n + j] = static_cast<T>(gv[j] * xhat[i * n + j] + ov[j]);
        }
    }
    const std::size_t ix = x.id(), ig = gain.id(), io = offset.id();
    return x.graph().emit(
        std::move(out), {x, gain, offset},
        [ix, ig, io, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](BasicGraph<T>& g, std::size_t self) {
            auto dy = g.own_grad(self);
            const auto& gv = g.value_of(ig);
            if (auto dg = g.grad_sink(ig); !dg.empty()) {
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += dy[i * n + j] * xhat[i * n + j];
                    dg[j] += static_cast<T>(s);
                }
            }
            if (auto dof = g.grad_sink(io); !dof.empty()) {
                for (std::size_t j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < m; ++i) s += dy[i * n + j];
                    dof[j] += static_cast<T>(s);
                }
            }
            if (auto dx = g.grad_sink(ix); !dx.empty()) {
                std::vector<double> dxhat(n);
                for (std::size_t i = 0; i < m; ++i) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        dxhat[j] = static_cast<double>(dy[i * n + j]) * gv[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xhat[i * n + j];
                    }
                    mean_d /= static_cast<double>(n);
                    mean_dx /= static_cast<double>(n);
                    for (std::size_t j = 0; j < n; ++j) {
                        dx[i * n + j] +=
                            static_cast<T>(inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx));
                    }
                }
            }
        });
}

namespace detail {

// Softmax of row `in` into `out` over positions where keep[j] (all when keep is
// empty). Masked positions get exactly zero; an all-masked row is all zero.
template <class T>
void softmax_row(const T* in, T* out, std::size_t n, const std::vector<bool>& keep) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
        if (keep.empty() || keep[j]) mx = std::max(mx, in[j]);
    if (mx == -std::numeric_limits<T>::infinity()) {
        std::fill_n(out, n, T{0});
        return;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = (keep.empty() || keep[j]) ? std::exp(in[j] - mx) : T{0};
        total += out[j];
    }
    const T inv = static_cast<T>(1.0 / total);
    for (std::size_t j = 0; j < n; ++j) out[j] *= inv;
}

template <class T>
BasicVar<T> softmax_impl(BasicVar<T> x, std::vector<bool> keep) {
    const auto& xv = x.value();
    const std::size_t n = xv.cols(), m = xv.rows();
    detail::require(keep.empty() || keep.size() == n,
                    "masked_softmax: " + std::to_string(keep.size()) + " flags for " + shape_str(xv.shape()));
    BasicTensor<T> out(xv.shape());
    for (std::size_t i = 0; i < m; ++i) softmax_row(xv.data() + i * n, out.data() + i * n, n, keep);
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix, m, n](BasicGraph<T>& g, std::size_t self) {
        auto dx = g.grad_sink(ix);
        if (dx.empty()) return;
        auto dy = g.own_grad(self);
        const auto& y = g.value_of(self);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(dy[i * n + j]) * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j)
                dx[i * n + j] += static_cast<T>(y[i * n + j] * (dy[i * n + j] - dot));
        }
    });
}

}  // namespace detail

/// Softmax over the last axis, max-subtracted.
template <class T>
BasicVar<T> softmax(BasicVar<T> x) {
    return detail::softmax_impl(x, {});
}

/// Softmax over the last axis restricted to positions with keep[j]; the rest
/// receive weight exactly zero.
template <class T>
BasicVar<T> masked_softmax(BasicVar<T> x, std::vector<bool> keep) {
    return detail::softmax_impl(x, std::move(keep));
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
BasicVar<T> reshape(BasicVar<T> x, Shape shape) {
    BasicTensor<T> out = x.value().reshaped(std::move(shape));
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix](BasicGraph<T>& g, std::size_t self) {
        detail::add_into(g.grad_sink(ix), g.own_grad(self));
    });
}

/// Columns [begin, begin+width) of x[m×n].
template <class T>
BasicVar<T> columns(BasicVar<T> x, std::size_t begin, std::size_t width) {
    const auto& xv = x.value();
    const std::size_t n = xv.cols(), m = xv.rows();
    detail::require(xv.rank() == 2 && begin + width <= n,
                    "columns: [" + std::to_string(begin) + ", +" + std::to_string(width) + ") of " +
                        shape_str(xv.shape()));
    BasicTensor<T> out({m, width});
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(xv.data() + i * n + begin, width, out.data() + i * width);
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix, m, n, begin, width](BasicGraph<T>& g, std::size_t self) {
        auto dx = g.grad_sink(ix);
        if (dx.empty()) return;
        auto dy = g.own_grad(self);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < width; ++j) dx[i * n + begin + j] += dy[i * width + j];
    });
}

/// Concatenates 2-D tensors with equal row counts along the last axis.
template <class T>
BasicVar<T> concat_cols(const std::vector<BasicVar<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const std::size_t m = parts.front().value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> widths, ids;
    for (const auto& p : parts) {
        detail::require(p.value().rank() == 2 && p.value().rows() == m, detail::shapes("concat_cols", parts.front(), p));
        widths.push_back(p.value().cols());
        ids.push_back(p.id());
        total += p.value().cols();
    }
    BasicTensor<T> out({m, total});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.value().cols();
        for (std::size_t i = 0; i < m; ++i) std::copy_n(p.value().data() + i * w, w, out.data() + i * total + off);
        off += w;
    }
    auto& g = parts.front().graph();
    bool needs = false;
    for (const auto& p : parts) needs = needs || g.requires_grad(p);
    // emit() takes a fixed initializer list; route the dependency through the first part
    // and force the flag when any part needs a gradient.
    return g.emit(
        std::move(out), {parts.front()},
        [ids, widths, m, total](BasicGraph<T>& g, std::size_t self) {
            auto dy = g.own_grad(self);
            std::size_t off = 0;
            for (std::size_t p = 0; p < ids.size(); ++p) {
                if (auto dx = g.grad_sink(ids[p]); !dx.empty()) {
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < widths[p]; ++j) dx[i * widths[p] + j] += dy[i * total + off + j];
                }
                off += widths[p];
            }
        },
        needs);
}

/// Slice `index` of the leading axis: x[N×...] -> x[index] with shape x.shape[1:].
template <class T>
BasicVar<T> select(BasicVar<T> x, std::size_t index) {
    const auto& xv = x.value();
    detail::require(xv.rank() >= 2 && index < xv.dim(0),
                    "select: index " + std::to_string(index) + " of " + shape_str(xv.shape()));
    Shape inner(xv.shape().begin() + 1, xv.shape().end());
    const std::size_t len = shape_size(inner);
    BasicTensor<T> out(inner, std::vector<T>(xv.data() + index * len, xv.data() + (index + 1) * len));
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix, index, len](BasicGraph<T>& g, std::size_t self) {
        auto dx = g.grad_sink(ix);
        if (dx.empty()) return;
        auto dy = g.own_grad(self);
        for (std::size_t i = 0; i < len; ++i) dx[index * len + i] += dy[i];
    });
}

/// Stacks equally shaped tensors along a new leading axis.
template <class T>
BasicVar<T> stack(const std::vector<BasicVar<T>>& parts) {
    if (parts.empty()) throw ContractError("stack: no inputs");
    const Shape inner = parts.front().shape();
    const std::size_t len = shape_size(inner);
    Shape shape{parts.size()};
    shape.insert(shape.end(), inner.begin(), inner.end());
    BasicTensor<T> out(shape);
    std::vector<std::size_t> ids;
    auto& g = parts.front().graph();
    bool needs = false;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        detail::require(parts[p].shape() == inner, detail::shapes("stack", parts.front(), parts[p]));
        std::copy_n(parts[p].value().data(), len, out.data() + p * len);
        ids.push_back(parts[p].id());
        needs = needs || g.requires_grad(parts[p]);
    }
    return g.emit(
        std::move(out), {parts.front()},
        [ids, len](BasicGraph<T>& g, std::size_t self) {
            auto dy = g.own_grad(self);
            for (std::size_t p = 0; p < ids.size(); ++p) {
                if (auto dx = g.grad_sink(ids[p]); !dx.empty())
                    for (std::size_t i = 0; i < len; ++i) dx[i] += dy[p * len + i];
            }
        },
        needs);
}

// ---------------------------------------------------------------------------
// Reductions

/// Mean over rows: x[m×n] -> [1×n].
template <class T>
BasicVar<T> mean_rows(BasicVar<T> x) {
    const auto& xv = x.value();
    const std::size_t n = xv.cols(), m = xv.rows();
    BasicTensor<T> out({1, n});
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += xv[i * n + j];
        out[j] = static_cast<T>(s / static_cast<double>(m));
    }
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix, m, n](BasicGraph<T>& g, std::size_t self) {
        auto dx = g.grad_sink(ix);
        if (dx.empty()) return;
        auto dy = g.own_grad(self);
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += static_cast<T>(dy[j] * inv);
    });
}

template <class T>
BasicVar<T> sum(BasicVar<T> x) {
    double s = 0.0;
    for (auto v : x.value().values()) s += v;
    BasicTensor<T> out({1}, {static_cast<T>(s)});
    const std::size_t ix = x.id();
    return x.graph().emit(std::move(out), {x}, [ix](BasicGraph<T>& g, std::size_t self) {
        auto dx = g.grad_sink(ix);
        const T d = g.own_grad(self)[0];
        for (auto& v : dx) v += d;
    });
}

// ---------------------------------------------------------------------------
// Parameter lookups

/// Rows `ids` of a [vocab×dim] parameter table -> [ids.size()×dim].
template <class T>
BasicVar<T> gather_rows(BasicGraph<T>& g, BasicParameter<T>& table, std::vector<std::size_t> ids) {
    const std::size_t dim = table.value.cols();
    const std::size_t vocab = table.value.rows();
    if (ids.empty()) throw ContractError("gather_rows: no ids");
    BasicTensor<T> out({ids.size(), dim});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= vocab) throw DimensionError("gather_rows: row " + std::to_string(ids[r]) + " of " + table.name);
        std::copy_n(table.value.data() + ids[r] * dim, dim, out.data() + r * dim);
    }
    auto* tp = &table;
    return g.emit(
        std::move(out), {},
        [tp, ids = std::move(ids), dim](BasicGraph<T>& g, std::size_t self) {
            auto dy = g.own_grad(self);
            for (std::size_t r = 0; r < ids.size(); ++r) {
                T* dst = tp->grad.data() + ids[r] * dim;
                for (std::size_t j = 0; j < dim; ++j) dst[j] += dy[r * dim + j];
            }
        },
        true);
}

/// Mean of rows `ids` of a parameter table -> [1×dim]; zero vector for no ids.
template <class T>
BasicVar<T> gather_mean(BasicGraph<T>& g, BasicParameter<T>& table, std::vector<std::size_t> ids) {
    const std::size_t dim = table.value.cols();
    if (ids.empty()) return g.constant(BasicTensor<T>({1, dim}));
    return mean_rows(gather_rows(g, table, std::move(ids)));
}

// ---------------------------------------------------------------------------
// Loss

/// Binary cross-entropy of a probability y_hat (clipped to [1e-7, 1-1e-7]).
template <class T>
BasicVar<T> logloss(BasicVar<T> y_hat, int label) {
    if (y_hat.value().size() != 1) throw ContractError("logloss: prediction must be scalar");
    constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
    const double raw = y_hat.value()[0];
    const double p = std::clamp(raw, lo, hi);
    const double y = label ? 1.0 : 0.0;
    const double loss = -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
    const bool clipped = raw < lo || raw > hi;
    const double dp = clipped ? 0.0 : (-y / p + (1.0 - y) / (1.0 - p));
    const std::size_t iy = y_hat.id();
    return y_hat.graph().emit(BasicTensor<T>({1}, {static_cast<T>(loss)}), {y_hat},
                              [iy, dp](BasicGraph<T>& g, std::size_t self) {
                                  if (auto dx = g.grad_sink(iy); !dx.empty())
                                      dx[0] += static_cast<T>(g.own_grad(self)[0] * dp);
                              });
}

}  // namespace dmqn
