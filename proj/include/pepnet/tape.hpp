#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pepnet/array.hpp"
#include "pepnet/errors.hpp"

namespace pepnet::ad {

namespace detail {

// Dense kernels, 4-row register blocking: each pass over b updates four
// output rows, which keeps the inner loops vectorizable and quarters the
// b-matrix traffic that otherwise bounds these shapes.

// c[m,n] += a[m,k] * b[k,n]
template <typename T>
void gemm_nn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* a0 = a + i * k;
        const T* a1 = a0 + k;
        const T* a2 = a1 + k;
        const T* a3 = a2 + k;
        T* c0 = c + i * n;
        T* c1 = c0 + n;
        T* c2 = c1 + n;
        T* c3 = c2 + n;
        for (int64_t p = 0; p < k; ++p) {
            const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            const T* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) {
                const T bj = bp[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* a0 = a + i * k;
        const T* a1 = a0 + k;
        const T* a2 = a1 + k;
        const T* a3 = a2 + k;
        T* c0 = c + i * n;
        T* c1 = c0 + n;
        T* c2 = c1 + n;
        T* c3 = c2 + n;
        for (int64_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T s0{}, s1{}, s2{}, s3{};
            for (int64_t p = 0; p < k; ++p) {
                const T bp = bj[p];
                s0 += a0[p] * bp;
                s1 += a1[p] * bp;
                s2 += a2[p] * bp;
                s3 += a3[p] * bp;
            }
            c0[j] += s0;
            c1[j] += s1;
            c2[j] += s2;
            c3[j] += s3;
        }
    }
    for (; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T acc{};
            for (int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, int64_t m, int64_t k, int64_t n) {
    int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const T* a0 = a + i * k;
        const T* a1 = a0 + k;
        const T* a2 = a1 + k;
        const T* a3 = a2 + k;
        const T* b0 = b + i * n;
        const T* b1 = b0 + n;
        const T* b2 = b1 + n;
        const T* b3 = b2 + n;
        for (int64_t p = 0; p < k; ++p) {
            const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            T* cp = c + p * n;
            for (int64_t j = 0; j < n; ++j) cp[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
        }
    }
    for (; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T av = ai[p];
            T* cp = c + p * n;
            for (int64_t j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

template <typename T>
void transpose_2d(const T* __restrict src, T* __restrict dst, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

// dX += dY * W^T with W[k,n] small: transpose W once and reuse the fast
// row-major kernel; the dot-product form does not vectorize as a reduction.
template <typename T>
void gemm_bt_acc(const T* __restrict dy, const T* w, T* __restrict dx, int64_t rows, int64_t k, int64_t n) {
    std::vector<T> wt(static_cast<size_t>(k * n));
    transpose_2d(w, wt.data(), k, n);
    gemm_nn_acc(dy, wt.data(), dx, rows, n, k);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// product of dims [0, axis), dims[axis], product of dims (axis, end)
inline void axis_split(const Shape& s, int axis, int64_t& outer, int64_t& mid, int64_t& inner) {
    require(axis >= 0 && axis < static_cast<int>(s.size()), "axis out of range for shape " + shape_str(s));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    mid = s[static_cast<size_t>(axis)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

template <typename T>
class Tape;

// Lightweight handle into one tape; cheap to copy, invalid once the tape resets.
template <typename T>
struct Tensor {
    Tape<T>* tape = nullptr;
    int32_t id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Array<T>& value() const;
    const Shape& shape() const { return value().shape(); }
    int64_t dim(int axis) const { return value().dim(axis); }
    int64_t numel() const { return value().numel(); }
};

// Append-only record of the forward computation. Backward walks the nodes in
// strict reverse append order and accumulates gradients additively at fan-out.
template <typename T>
class Tape {
public:
    Tensor<T> leaf(Array<T> value, bool requires_grad = false) { return record(std::move(value), requires_grad); }
    Tensor<T> constant(Array<T> value) { return leaf(std::move(value), false); }

    Tensor<T> record(Array<T> value, bool requires_grad) {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
        return Tensor<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
    }

    void set_backprop(int32_t id, std::function<void(Tape&)> fn) {
        nodes_[static_cast<size_t>(id)].backprop = std::move(fn);
    }

    const Array<T>& value_at(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
    bool requires_grad_at(int32_t id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    bool has_grad(int32_t id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

    // Gradient buffer, zero-initialized to the node's shape on first touch.
    Array<T>& grad_buffer(int32_t id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.empty() && n.value.numel() > 0) n.grad = Array<T>(n.value.shape());
        return n.grad;
    }

    const Array<T>& grad(Tensor<T> t) { return grad_buffer(t.id); }

    void backward(Tensor<T> loss) {
        if (loss.tape != this) throw Error("loss tensor belongs to a different tape");
        if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
        if (backward_done_) throw Error("backward already ran on this tape; reset it first");
        grad_buffer(loss.id)[0] = T(1);
        for (int64_t i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.requires_grad || !n.backprop || n.grad.empty()) continue;
            n.backprop(*this);
        }
        backward_done_ = true;
    }

    // test/profiling hook: run one node's backprop in isolation
    void run_backprop_at(int32_t id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.backprop) n.backprop(*this);
    }

    void reset() {
        nodes_.clear();
        backward_done_ = false;
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Array<T> value;
        Array<T> grad;  // empty until first accumulation
        bool requires_grad = false;
        std::function<void(Tape&)> backprop;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

template <typename T>
const Array<T>& Tensor<T>::value() const {
    return tape->value_at(id);
}

// Per-channel batch normalization state. gamma/beta are the learnable arrays
// (bound to the tape by the caller); running statistics update in training
// mode with `momentum` weight on the old value.
template <typename T>
struct BatchNormState {
    Array<T> gamma;
    Array<T> beta;
    Array<T> running_mean;
    Array<T> running_var;
    T momentum = T(0.9);
    T eps = T(1e-5);

    explicit BatchNormState(int64_t channels = 0)
        : gamma({channels}, T(1)), beta({channels}, T(0)), running_mean({channels}, T(0)),
          running_var({channels}, T(1)) {}
};

// ---------------------------------------------------------------------------
// Operators. Forward values are computed eagerly; each op records the exact
// vector-Jacobian product of its output with respect to its inputs.
// ---------------------------------------------------------------------------

// x[..., k] * w[k, n] -> [..., n]; leading axes are treated as rows.
template <typename T>
Tensor<T> matmul(Tensor<T> x, Tensor<T> w) {
    const Array<T>& xv = x.value();
    const Array<T>& wv = w.value();
    detail::require(wv.rank() == 2, "matmul weight must be rank 2, got " + shape_str(wv.shape()));
    detail::require(xv.rank() >= 1 && xv.dim(-1) == wv.dim(0),
                    "matmul shapes " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()));
    const int64_t k = wv.dim(0), n = wv.dim(1);
    const int64_t rows = k > 0 ? xv.numel() / k : 0;
    Shape out_shape = xv.shape();
    out_shape.back() = n;
    Array<T> out(out_shape);
    detail::gemm_nn_acc(xv.data(), wv.data(), out.data(), rows, k, n);

    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id) || tp.requires_grad_at(w.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, wid = w.id, rows, k, n](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            if (t.requires_grad_at(xid))
                detail::gemm_bt_acc(dy.data(), t.value_at(wid).data(), t.grad_buffer(xid).data(), rows, k, n);
            if (t.requires_grad_at(wid))
                detail::gemm_tn_acc(t.value_at(xid).data(), dy.data(), t.grad_buffer(wid).data(), rows, k, n);
        });
    return y;
}

// x[..., n] + b[n]
template <typename T>
Tensor<T> bias_add(Tensor<T> x, Tensor<T> b) {
    const Array<T>& xv = x.value();
    const Array<T>& bv = b.value();
    detail::require(bv.rank() == 1 && xv.rank() >= 1 && xv.dim(-1) == bv.dim(0),
                    "bias_add shapes " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
    const int64_t n = bv.dim(0);
    const int64_t rows = n > 0 ? xv.numel() / n : 0;
    Array<T> out = xv;
    for (int64_t i = 0; i < rows; ++i) {
        T* oi = out.data() + i * n;
        for (int64_t j = 0; j < n; ++j) oi[j] += bv[j];
    }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id) || tp.requires_grad_at(b.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, bid = b.id, rows, n](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            if (t.requires_grad_at(xid)) {
                Array<T>& dx = t.grad_buffer(xid);
                for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
            }
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < rows; ++i) {
                    const T* di = dy.data() + i * n;
                    for (int64_t j = 0; j < n; ++j) db[j] += di[j];
                }
            }
        });
    return y;
}

namespace detail {

// Shared plumbing for same-shape binary elementwise ops.
template <typename T, typename FwdFn, typename BackFn>
Tensor<T> binary_elementwise(Tensor<T> a, Tensor<T> b, const char* name, FwdFn fwd, BackFn back) {
    const Array<T>& av = a.value();
    const Array<T>& bv = b.value();
    require(av.same_shape(bv),
            std::string(name) + " shapes " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Array<T> out(av.shape());
    for (int64_t i = 0; i < av.numel(); ++i) out[i] = fwd(av[i], bv[i]);
    Tape<T>& tp = *a.tape;
    const bool rg = tp.requires_grad_at(a.id) || tp.requires_grad_at(b.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, aid = a.id, bid = b.id, back](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            back(t, dy, aid, bid);
        });
    return y;
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    return detail::binary_elementwise(
        a, b, "add", [](T x, T y) { return x + y; },
        [](Tape<T>& t, const Array<T>& dy, int32_t aid, int32_t bid) {
            if (t.requires_grad_at(aid)) {
                Array<T>& da = t.grad_buffer(aid);
                for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
            }
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i];
            }
        });
}

template <typename T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
    return detail::binary_elementwise(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](Tape<T>& t, const Array<T>& dy, int32_t aid, int32_t bid) {
            if (t.requires_grad_at(aid)) {
                Array<T>& da = t.grad_buffer(aid);
                for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
            }
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < dy.numel(); ++i) db[i] -= dy[i];
            }
        });
}

template <typename T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    return detail::binary_elementwise(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](Tape<T>& t, const Array<T>& dy, int32_t aid, int32_t bid) {
            const Array<T>& av = t.value_at(aid);
            const Array<T>& bv = t.value_at(bid);
            if (t.requires_grad_at(aid)) {
                Array<T>& da = t.grad_buffer(aid);
                for (int64_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * bv[i];
            }
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < dy.numel(); ++i) db[i] += dy[i] * av[i];
            }
        });
}

namespace detail {

template <typename T, typename FwdFn, typename GradFn>
Tensor<T> unary_elementwise(Tensor<T> x, FwdFn fwd, GradFn gradfn) {
    const Array<T>& xv = x.value();
    Array<T> out(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, gradfn](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            const Array<T>& xv2 = t.value_at(xid);
            const Array<T>& yv = t.value_at(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * gradfn(xv2[i], yv[i]);
        });
    return y;
}

}  // namespace detail

template <typename T>
Tensor<T> relu(Tensor<T> x) {
    return detail::unary_elementwise(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
    return detail::unary_elementwise(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_op(Tensor<T> x) {
    return detail::unary_elementwise(
        x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

// d/dx sqrt at exactly 0 is taken as 0 (subgradient choice for degenerate inputs).
template <typename T>
Tensor<T> sqrt_op(Tensor<T> x) {
    return detail::unary_elementwise(
        x, [](T v) { return std::sqrt(v); }, [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
}

template <typename T>
Tensor<T> scale(Tensor<T> x, T c) {
    return detail::unary_elementwise(
        x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

// Numerically stable softmax over the last axis.
template <typename T>
Tensor<T> softmax_last(Tensor<T> x) {
    const Array<T>& xv = x.value();
    detail::require(xv.rank() >= 1, "softmax needs rank >= 1");
    const int64_t n = xv.dim(-1);
    const int64_t rows = n > 0 ? xv.numel() / n : 0;
    Array<T> out(xv.shape());
    for (int64_t i = 0; i < rows; ++i) {
        const T* xi = xv.data() + i * n;
        T* oi = out.data() + i * n;
        T mx = xi[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        T sum{};
        for (int64_t j = 0; j < n; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            sum += oi[j];
        }
        for (int64_t j = 0; j < n; ++j) oi[j] /= sum;
    }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, rows, n](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            const Array<T>& yv = t.value_at(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t i = 0; i < rows; ++i) {
                const T* di = dy.data() + i * n;
                const T* yi = yv.data() + i * n;
                T dot{};
                for (int64_t j = 0; j < n; ++j) dot += di[j] * yi[j];
                T* gi = dx.data() + i * n;
                for (int64_t j = 0; j < n; ++j) gi[j] += yi[j] * (di[j] - dot);
            }
        });
    return y;
}

// Concatenation along `axis`; all inputs share every other dimension.
template <typename T>
Tensor<T> concat(int axis, std::span<const Tensor<T>> parts) {
    detail::require(!parts.empty(), "concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    const int rank = static_cast<int>(s0.size());
    if (axis < 0) axis += rank;
    int64_t total_mid = 0;
    for (const Tensor<T>& p : parts) {
        const Shape& s = p.shape();
        detail::require(static_cast<int>(s.size()) == rank, "concat rank mismatch");
        for (int d = 0; d < rank; ++d)
            detail::require(d == axis || s[static_cast<size_t>(d)] == s0[static_cast<size_t>(d)],
                            "concat shapes " + shape_str(s0) + " vs " + shape_str(s));
        total_mid += s[static_cast<size_t>(axis)];
    }
    Shape out_shape = s0;
    out_shape[static_cast<size_t>(axis)] = total_mid;
    int64_t outer, mid0, inner;
    detail::axis_split(out_shape, axis, outer, mid0, inner);

    Array<T> out(out_shape);
    bool rg = false;
    std::vector<int32_t> ids;
    std::vector<int64_t> mids;
    ids.reserve(parts.size());
    mids.reserve(parts.size());
    for (const Tensor<T>& p : parts) {
        ids.push_back(p.id);
        mids.push_back(p.dim(axis));
        rg = rg || p.tape->requires_grad_at(p.id);
    }
    int64_t offset = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const Array<T>& pv = parts[pi].value();
        const int64_t m = mids[pi];
        for (int64_t o = 0; o < outer; ++o) {
            const T* src = pv.data() + o * m * inner;
            T* dst = out.data() + (o * total_mid + offset) * inner;
            std::copy(src, src + m * inner, dst);
        }
        offset += m;
    }
    Tape<T>& tp = *parts[0].tape;
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, ids, mids, outer, inner, total_mid](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            int64_t off = 0;
            for (size_t pi = 0; pi < ids.size(); ++pi) {
                const int64_t m = mids[pi];
                if (t.requires_grad_at(ids[pi])) {
                    Array<T>& dp = t.grad_buffer(ids[pi]);
                    for (int64_t o = 0; o < outer; ++o) {
                        const T* src = dy.data() + (o * total_mid + off) * inner;
                        T* dst = dp.data() + o * m * inner;
                        for (int64_t j = 0; j < m * inner; ++j) dst[j] += src[j];
                    }
                }
                off += m;
            }
        });
    return y;
}

template <typename T>
Tensor<T> concat(int axis, std::initializer_list<Tensor<T>> parts) {
    std::vector<Tensor<T>> v(parts);
    return concat<T>(axis, std::span<const Tensor<T>>(v));
}

// Contiguous slice [start, start+len) along `axis`.
template <typename T>
Tensor<T> narrow(Tensor<T> x, int axis, int64_t start, int64_t len) {
    const Array<T>& xv = x.value();
    const int rank = xv.rank();
    if (axis < 0) axis += rank;
    int64_t outer, mid, inner;
    detail::axis_split(xv.shape(), axis, outer, mid, inner);
    detail::require(start >= 0 && len >= 1 && start + len <= mid,
                    "narrow [" + std::to_string(start) + "," + std::to_string(start + len) + ") outside axis of size " +
                        std::to_string(mid));
    Shape out_shape = xv.shape();
    out_shape[static_cast<size_t>(axis)] = len;
    Array<T> out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        const T* src = xv.data() + (o * mid + start) * inner;
        std::copy(src, src + len * inner, out.data() + o * len * inner);
    }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, outer, mid, inner, start, len](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t o = 0; o < outer; ++o) {
                const T* src = dy.data() + o * len * inner;
                T* dst = dx.data() + (o * mid + start) * inner;
                for (int64_t j = 0; j < len * inner; ++j) dst[j] += src[j];
            }
        });
    return y;
}

template <typename T>
Tensor<T> reshape(Tensor<T> x, Shape new_shape) {
    Array<T> out = x.value().reshaped(new_shape);
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
        });
    return y;
}

// Broadcast a size-1 axis to `times` copies.
template <typename T>
Tensor<T> expand(Tensor<T> x, int axis, int64_t times) {
    const Array<T>& xv = x.value();
    const int rank = xv.rank();
    if (axis < 0) axis += rank;
    int64_t outer, mid, inner;
    detail::axis_split(xv.shape(), axis, outer, mid, inner);
    detail::require(mid == 1, "expand requires a size-1 axis, got " + shape_str(xv.shape()));
    Shape out_shape = xv.shape();
    out_shape[static_cast<size_t>(axis)] = times;
    Array<T> out(out_shape);
    for (int64_t o = 0; o < outer; ++o) {
        const T* src = xv.data() + o * inner;
        for (int64_t r = 0; r < times; ++r) std::copy(src, src + inner, out.data() + (o * times + r) * inner);
    }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, outer, inner, times](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t o = 0; o < outer; ++o) {
                T* dst = dx.data() + o * inner;
                for (int64_t r = 0; r < times; ++r) {
                    const T* src = dy.data() + (o * times + r) * inner;
                    for (int64_t j = 0; j < inner; ++j) dst[j] += src[j];
                }
            }
        });
    return y;
}

// a[..., m, k] @ b[..., k, n] with identical leading dimensions.
template <typename T>
Tensor<T> batch_matmul(Tensor<T> a, Tensor<T> b) {
    const Array<T>& av = a.value();
    const Array<T>& bv = b.value();
    detail::require(av.rank() >= 2 && bv.rank() >= 2 && av.rank() == bv.rank(),
                    "batch_matmul ranks " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const int rank = av.rank();
    for (int d = 0; d < rank - 2; ++d)
        detail::require(av.shape()[static_cast<size_t>(d)] == bv.shape()[static_cast<size_t>(d)],
                        "batch_matmul leading dims " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const int64_t m = av.dim(-2), k = av.dim(-1), n = bv.dim(-1);
    detail::require(bv.dim(-2) == k, "batch_matmul inner dims " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    int64_t batch = 1;
    for (int d = 0; d < rank - 2; ++d) batch *= av.shape()[static_cast<size_t>(d)];
    Shape out_shape = av.shape();
    out_shape[static_cast<size_t>(rank - 1)] = n;
    Array<T> out(out_shape);
    for (int64_t i = 0; i < batch; ++i)
        detail::gemm_nn_acc(av.data() + i * m * k, bv.data() + i * k * n, out.data() + i * m * n, m, k, n);
    Tape<T>& tp = *a.tape;
    const bool rg = tp.requires_grad_at(a.id) || tp.requires_grad_at(b.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, aid = a.id, bid = b.id, batch, m, k, n](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            const Array<T>& av2 = t.value_at(aid);
            const Array<T>& bv2 = t.value_at(bid);
            if (t.requires_grad_at(aid)) {
                Array<T>& da = t.grad_buffer(aid);
                std::vector<T> bt(static_cast<size_t>(k * n));
                for (int64_t i = 0; i < batch; ++i) {
                    detail::transpose_2d(bv2.data() + i * k * n, bt.data(), k, n);
                    detail::gemm_nn_acc(dy.data() + i * m * n, bt.data(), da.data() + i * m * k, m, n, k);
                }
            }
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < batch; ++i)
                    detail::gemm_tn_acc(av2.data() + i * m * k, dy.data() + i * m * n, db.data() + i * k * n, m, k, n);
            }
        });
    return y;
}

template <typename T>
Tensor<T> sum_all(Tensor<T> x) {
    const Array<T>& xv = x.value();
    T acc{};
    for (int64_t i = 0; i < xv.numel(); ++i) acc += xv[i];
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(Array<T>({1}, acc), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id](Tape<T>& t) {
            const T d = t.grad_buffer(yid)[0];
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += d;
        });
    return y;
}

template <typename T>
Tensor<T> mean_all(Tensor<T> x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// [..., n] -> [..., 1]
template <typename T>
Tensor<T> sum_last(Tensor<T> x) {
    const Array<T>& xv = x.value();
    const int64_t n = xv.dim(-1);
    const int64_t rows = n > 0 ? xv.numel() / n : 0;
    Shape out_shape = xv.shape();
    out_shape.back() = 1;
    Array<T> out(out_shape);
    for (int64_t i = 0; i < rows; ++i) {
        const T* xi = xv.data() + i * n;
        T acc{};
        for (int64_t j = 0; j < n; ++j) acc += xi[j];
        out[i] = acc;
    }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, rows, n](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t i = 0; i < rows; ++i) {
                const T d = dy[i];
                T* gi = dx.data() + i * n;
                for (int64_t j = 0; j < n; ++j) gi[j] += d;
            }
        });
    return y;
}

// Max over one axis (axis removed from the shape); gradient flows to the
// argmax only, first occurrence winning ties.
template <typename T>
Tensor<T> max_axis(Tensor<T> x, int axis) {
    const Array<T>& xv = x.value();
    const int rank = xv.rank();
    if (axis < 0) axis += rank;
    int64_t outer, mid, inner;
    detail::axis_split(xv.shape(), axis, outer, mid, inner);
    detail::require(mid >= 1, "max over empty axis");
    Shape out_shape;
    for (int d = 0; d < rank; ++d)
        if (d != axis) out_shape.push_back(xv.shape()[static_cast<size_t>(d)]);
    if (out_shape.empty()) out_shape.push_back(1);
    Array<T> out(out_shape);
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(outer * inner));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < inner; ++j) {
            const T* base = xv.data() + o * mid * inner + j;
            T best = base[0];
            int64_t bi = 0;
            for (int64_t r = 1; r < mid; ++r) {
                const T v = base[r * inner];
                if (v > best) {
                    best = v;
                    bi = r;
                }
            }
            out[o * inner + j] = best;
            (*argmax)[static_cast<size_t>(o * inner + j)] = bi;
        }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, outer, mid, inner, argmax](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t j = 0; j < inner; ++j) {
                    const int64_t r = (*argmax)[static_cast<size_t>(o * inner + j)];
                    dx[(o * mid + r) * inner + j] += dy[o * inner + j];
                }
        });
    return y;
}

// Batch normalization over all axes but the last (channel) one. Training mode
// normalizes with biased batch statistics and folds them into the running
// estimates (unbiased variance); eval mode applies the running statistics.
// With fuse_relu the output is clamped at zero and the gradient masked by the
// stored output, one node instead of two.
namespace detail {
template <typename T>
Tensor<T> batch_norm_impl(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, BatchNormState<T>& state, bool training,
                          bool fuse_relu);
}

template <typename T>
Tensor<T> batch_norm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, BatchNormState<T>& state, bool training) {
    return detail::batch_norm_impl(x, gamma, beta, state, training, false);
}

template <typename T>
Tensor<T> bn_relu(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, BatchNormState<T>& state, bool training) {
    return detail::batch_norm_impl(x, gamma, beta, state, training, true);
}

namespace detail {
template <typename T>
Tensor<T> batch_norm_impl(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, BatchNormState<T>& state, bool training,
                          bool fuse_relu) {
    const Array<T>& xv = x.value();
    const int64_t c = xv.dim(-1);
    detail::require(gamma.numel() == c && beta.numel() == c,
                    "batch_norm channel mismatch: x " + shape_str(xv.shape()) + ", gamma " + shape_str(gamma.shape()));
    const int64_t rows = c > 0 ? xv.numel() / c : 0;
    Tape<T>& tp = *x.tape;

    Array<T> mean({c}), invstd({c});
    if (training) {
        if (rows < 2) throw Error("batch_norm training mode needs at least 2 rows, got " + std::to_string(rows));
        Array<T> var({c});
        for (int64_t i = 0; i < rows; ++i) {
            const T* xi = xv.data() + i * c;
            for (int64_t j = 0; j < c; ++j) mean[j] += xi[j];
        }
        for (int64_t j = 0; j < c; ++j) mean[j] /= static_cast<T>(rows);
        for (int64_t i = 0; i < rows; ++i) {
            const T* xi = xv.data() + i * c;
            for (int64_t j = 0; j < c; ++j) {
                const T d = xi[j] - mean[j];
                var[j] += d * d;
            }
        }
        for (int64_t j = 0; j < c; ++j) var[j] /= static_cast<T>(rows);
        for (int64_t j = 0; j < c; ++j) invstd[j] = T(1) / std::sqrt(var[j] + state.eps);
        const T unbias = static_cast<T>(rows) / static_cast<T>(rows - 1);
        for (int64_t j = 0; j < c; ++j) {
            state.running_mean[j] = state.momentum * state.running_mean[j] + (T(1) - state.momentum) * mean[j];
            state.running_var[j] = state.momentum * state.running_var[j] + (T(1) - state.momentum) * var[j] * unbias;
        }
    } else {
        mean = state.running_mean;
        for (int64_t j = 0; j < c; ++j) invstd[j] = T(1) / std::sqrt(state.running_var[j] + state.eps);
    }

    auto xhat = std::make_shared<Array<T>>(xv.shape());
    const Array<T>& gv = gamma.value();
    const Array<T>& bv = beta.value();
    Array<T> out(xv.shape());
    for (int64_t i = 0; i < rows; ++i) {
        const T* xi = xv.data() + i * c;
        T* hi = xhat->data() + i * c;
        T* oi = out.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
            hi[j] = (xi[j] - mean[j]) * invstd[j];
            const T v = gv[j] * hi[j] + bv[j];
            oi[j] = fuse_relu ? (v > T(0) ? v : T(0)) : v;
        }
    }

    const bool rg = tp.requires_grad_at(x.id) || tp.requires_grad_at(gamma.id) || tp.requires_grad_at(beta.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg) {
        auto inv = std::make_shared<Array<T>>(std::move(invstd));
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, gid = gamma.id, bid = beta.id, xhat, inv, rows, c, training,
                               fuse_relu](Tape<T>& t) {
            const Array<T>& dy_raw = t.grad_buffer(yid);
            const Array<T>& gv2 = t.value_at(gid);
            // relu mask from the stored output; exact zeros take gradient 0
            Array<T> dy_masked;
            if (fuse_relu) {
                const Array<T>& yv = t.value_at(yid);
                dy_masked = Array<T>(dy_raw.shape());
                for (int64_t i = 0; i < dy_raw.numel(); ++i)
                    dy_masked[i] = yv[i] > T(0) ? dy_raw[i] : T(0);
            }
            const Array<T>& dy = fuse_relu ? dy_masked : dy_raw;
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < rows; ++i) {
                    const T* di = dy.data() + i * c;
                    for (int64_t j = 0; j < c; ++j) db[j] += di[j];
                }
            }
            if (t.requires_grad_at(gid)) {
                Array<T>& dg = t.grad_buffer(gid);
                for (int64_t i = 0; i < rows; ++i) {
                    const T* di = dy.data() + i * c;
                    const T* hi = xhat->data() + i * c;
                    for (int64_t j = 0; j < c; ++j) dg[j] += di[j] * hi[j];
                }
            }
            if (t.requires_grad_at(xid)) {
                Array<T>& dx = t.grad_buffer(xid);
                if (training) {
                    Array<T> sum_dy({c}), sum_dy_h({c});
                    for (int64_t i = 0; i < rows; ++i) {
                        const T* di = dy.data() + i * c;
                        const T* hi = xhat->data() + i * c;
                        for (int64_t j = 0; j < c; ++j) {
                            sum_dy[j] += di[j];
                            sum_dy_h[j] += di[j] * hi[j];
                        }
                    }
                    const T inv_rows = T(1) / static_cast<T>(rows);
                    for (int64_t i = 0; i < rows; ++i) {
                        const T* di = dy.data() + i * c;
                        const T* hi = xhat->data() + i * c;
                        T* gi = dx.data() + i * c;
                        for (int64_t j = 0; j < c; ++j)
                            gi[j] += gv2[j] * (*inv)[j] *
                                     (di[j] - inv_rows * sum_dy[j] - hi[j] * inv_rows * sum_dy_h[j]);
                    }
                } else {
                    for (int64_t i = 0; i < rows; ++i) {
                        const T* di = dy.data() + i * c;
                        T* gi = dx.data() + i * c;
                        for (int64_t j = 0; j < c; ++j) gi[j] += di[j] * gv2[j] * (*inv)[j];
                    }
                }
            }
        });
    }
    return y;
}

}  // namespace detail

// Fused affine map: x[..., k] * w[k, n] + b[n]. One node instead of the
// matmul/bias pair; the big intermediate and its gradient disappear.
template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> b) {
    const Array<T>& xv = x.value();
    const Array<T>& wv = w.value();
    const Array<T>& bv = b.value();
    detail::require(wv.rank() == 2, "linear weight must be rank 2, got " + shape_str(wv.shape()));
    detail::require(xv.rank() >= 1 && xv.dim(-1) == wv.dim(0),
                    "linear shapes " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()));
    const int64_t k = wv.dim(0), n = wv.dim(1);
    detail::require(bv.numel() == n, "linear bias " + shape_str(bv.shape()) + " vs weight " + shape_str(wv.shape()));
    const int64_t rows = k > 0 ? xv.numel() / k : 0;
    Shape out_shape = xv.shape();
    out_shape.back() = n;
    Array<T> out(out_shape);
    for (int64_t i = 0; i < rows; ++i) std::copy(bv.data(), bv.data() + n, out.data() + i * n);
    detail::gemm_nn_acc(xv.data(), wv.data(), out.data(), rows, k, n);

    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id) || tp.requires_grad_at(w.id) || tp.requires_grad_at(b.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, wid = w.id, bid = b.id, rows, k, n](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            if (t.requires_grad_at(xid))
                detail::gemm_bt_acc(dy.data(), t.value_at(wid).data(), t.grad_buffer(xid).data(), rows, k, n);
            if (t.requires_grad_at(wid))
                detail::gemm_tn_acc(t.value_at(xid).data(), dy.data(), t.grad_buffer(wid).data(), rows, k, n);
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < rows; ++i) {
                    const T* di = dy.data() + i * n;
                    for (int64_t j = 0; j < n; ++j) db[j] += di[j];
                }
            }
        });
    return y;
}

// Two-input affine map a*wa + b*wb + bias, the recurrent-gate shape.
template <typename T>
Tensor<T> linear2(Tensor<T> a, Tensor<T> wa, Tensor<T> b, Tensor<T> wb, Tensor<T> bias) {
    const Array<T>& av = a.value();
    const Array<T>& bv = b.value();
    const Array<T>& wav = wa.value();
    const Array<T>& wbv = wb.value();
    const Array<T>& biasv = bias.value();
    detail::require(wav.rank() == 2 && wbv.rank() == 2 && wav.dim(1) == wbv.dim(1),
                    "linear2 weights " + shape_str(wav.shape()) + " vs " + shape_str(wbv.shape()));
    const int64_t ka = wav.dim(0), kb = wbv.dim(0), n = wav.dim(1);
    detail::require(av.dim(-1) == ka && bv.dim(-1) == kb && biasv.numel() == n,
                    "linear2 inputs " + shape_str(av.shape()) + ", " + shape_str(bv.shape()));
    const int64_t rows = ka > 0 ? av.numel() / ka : 0;
    detail::require(kb == 0 || bv.numel() / kb == rows, "linear2 row mismatch");
    Shape out_shape = av.shape();
    out_shape.back() = n;
    Array<T> out(out_shape);
    for (int64_t i = 0; i < rows; ++i) std::copy(biasv.data(), biasv.data() + n, out.data() + i * n);
    detail::gemm_nn_acc(av.data(), wav.data(), out.data(), rows, ka, n);
    detail::gemm_nn_acc(bv.data(), wbv.data(), out.data(), rows, kb, n);

    Tape<T>& tp = *a.tape;
    const bool rg = tp.requires_grad_at(a.id) || tp.requires_grad_at(wa.id) || tp.requires_grad_at(b.id) ||
                    tp.requires_grad_at(wb.id) || tp.requires_grad_at(bias.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, aid = a.id, waid = wa.id, bid = b.id, wbid = wb.id, biasid = bias.id,
                               rows, ka, kb, n](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            if (t.requires_grad_at(aid))
                detail::gemm_bt_acc(dy.data(), t.value_at(waid).data(), t.grad_buffer(aid).data(), rows, ka, n);
            if (t.requires_grad_at(waid))
                detail::gemm_tn_acc(t.value_at(aid).data(), dy.data(), t.grad_buffer(waid).data(), rows, ka, n);
            if (t.requires_grad_at(bid))
                detail::gemm_bt_acc(dy.data(), t.value_at(wbid).data(), t.grad_buffer(bid).data(), rows, kb, n);
            if (t.requires_grad_at(wbid))
                detail::gemm_tn_acc(t.value_at(bid).data(), dy.data(), t.grad_buffer(wbid).data(), rows, kb, n);
            if (t.requires_grad_at(biasid)) {
                Array<T>& db = t.grad_buffer(biasid);
                for (int64_t i = 0; i < rows; ++i) {
                    const T* di = dy.data() + i * n;
                    for (int64_t j = 0; j < n; ++j) db[j] += di[j];
                }
            }
        });
    return y;
}

// relu(a + b), gradient masked by the fused output.
template <typename T>
Tensor<T> add_relu(Tensor<T> a, Tensor<T> b) {
    return detail::binary_elementwise(
        a, b, "add_relu", [](T x, T y) { return x + y > T(0) ? x + y : T(0); },
        [](Tape<T>& t, const Array<T>& dy, int32_t aid, int32_t bid) {
            // mask recovered from either input sum; recompute from values
            const Array<T>& av = t.value_at(aid);
            const Array<T>& bv = t.value_at(bid);
            if (t.requires_grad_at(aid)) {
                Array<T>& da = t.grad_buffer(aid);
                for (int64_t i = 0; i < dy.numel(); ++i) da[i] += (av[i] + bv[i] > T(0)) ? dy[i] : T(0);
            }
            if (t.requires_grad_at(bid)) {
                Array<T>& db = t.grad_buffer(bid);
                for (int64_t i = 0; i < dy.numel(); ++i) db[i] += (av[i] + bv[i] > T(0)) ? dy[i] : T(0);
            }
        });
}

// x[B, N, D] gathered by idx[B, G, K] -> [B, G, K, D].
template <typename T>
Tensor<T> group_gather(Tensor<T> x, std::shared_ptr<const Array<int32_t>> idx) {
    const Array<T>& xv = x.value();
    detail::require(xv.rank() == 3 && idx->rank() == 3, "group_gather expects x[B,N,D], idx[B,G,K]");
    detail::require(xv.dim(0) == idx->dim(0), "group_gather batch mismatch");
    const int64_t b = xv.dim(0), n = xv.dim(1), d = xv.dim(2);
    const int64_t g = idx->dim(1), k = idx->dim(2);
    Array<T> out({b, g, k, d});
    for (int64_t bi = 0; bi < b; ++bi) {
        const T* xb = xv.data() + bi * n * d;
        const int32_t* ib = idx->data() + bi * g * k;
        T* ob = out.data() + bi * g * k * d;
        for (int64_t r = 0; r < g * k; ++r) {
            const int32_t p = ib[r];
            std::copy(xb + static_cast<int64_t>(p) * d, xb + static_cast<int64_t>(p) * d + d, ob + r * d);
        }
    }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, idx, b, n, d, g, k](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t bi = 0; bi < b; ++bi) {
                T* xb = dx.data() + bi * n * d;
                const int32_t* ib = idx->data() + bi * g * k;
                const T* db = dy.data() + bi * g * k * d;
                for (int64_t r = 0; r < g * k; ++r) {
                    T* dst = xb + static_cast<int64_t>(ib[r]) * d;
                    const T* src = db + r * d;
                    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            }
        });
    return y;
}

// x[B, N, D] gathered by idx[B, G] -> [B, G, D].
template <typename T>
Tensor<T> row_gather(Tensor<T> x, std::shared_ptr<const Array<int32_t>> idx) {
    const Array<T>& xv = x.value();
    detail::require(xv.rank() == 3 && idx->rank() == 2, "row_gather expects x[B,N,D], idx[B,G]");
    detail::require(xv.dim(0) == idx->dim(0), "row_gather batch mismatch");
    const int64_t b = xv.dim(0), n = xv.dim(1), d = xv.dim(2), g = idx->dim(1);
    Array<T> out({b, g, d});
    for (int64_t bi = 0; bi < b; ++bi) {
        const T* xb = xv.data() + bi * n * d;
        const int32_t* ib = idx->data() + bi * g;
        T* ob = out.data() + bi * g * d;
        for (int64_t r = 0; r < g; ++r)
            std::copy(xb + static_cast<int64_t>(ib[r]) * d, xb + static_cast<int64_t>(ib[r]) * d + d, ob + r * d);
    }
    Tape<T>& tp = *x.tape;
    const bool rg = tp.requires_grad_at(x.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, xid = x.id, idx, b, n, d, g](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& dx = t.grad_buffer(xid);
            for (int64_t bi = 0; bi < b; ++bi) {
                T* xb = dx.data() + bi * n * d;
                const int32_t* ib = idx->data() + bi * g;
                const T* db = dy.data() + bi * g * d;
                for (int64_t r = 0; r < g; ++r) {
                    T* dst = xb + static_cast<int64_t>(ib[r]) * d;
                    const T* src = db + r * d;
                    for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                }
            }
        });
    return y;
}

// Per-group network input assembled in one node: standardized offsets,
// member features, centroid features, concatenated to width 3+2D. Gradients
// scatter-add straight into the feature tensor; the gathered intermediates
// never materialize.
template <typename T>
Tensor<T> assemble_group_input(Tensor<T> feats, const Array<T>& geom,
                               std::shared_ptr<const Array<int32_t>> memb_idx,
                               std::shared_ptr<const Array<int32_t>> cent_idx) {
    const Array<T>& fv = feats.value();
    detail::require(fv.rank() == 3 && geom.rank() == 4 && geom.dim(3) == 3,
                    "assemble_group_input expects feats[B,N,D], geom[B,G,K,3]");
    const int64_t b = fv.dim(0), n = fv.dim(1), d = fv.dim(2);
    const int64_t g = geom.dim(1), k = geom.dim(2);
    detail::require(memb_idx->shape() == Shape{b, g, k} && cent_idx->shape() == Shape{b, g},
                    "assemble_group_input index shapes");
    const int64_t width = 3 + 2 * d;
    Array<T> out({b, g, k, width});
    for (int64_t bi = 0; bi < b; ++bi) {
        const T* fb = fv.data() + bi * n * d;
        const int32_t* mi = memb_idx->data() + bi * g * k;
        const int32_t* ci = cent_idx->data() + bi * g;
        for (int64_t gi = 0; gi < g; ++gi) {
            const T* cf = fb + static_cast<int64_t>(ci[gi]) * d;
            for (int64_t kk = 0; kk < k; ++kk) {
                const int64_t r = gi * k + kk;
                T* dst = out.data() + ((bi * g + gi) * k + kk) * width;
                const T* gsrc = geom.data() + ((bi * g + gi) * k + kk) * 3;
                dst[0] = gsrc[0];
                dst[1] = gsrc[1];
                dst[2] = gsrc[2];
                const T* mf = fb + static_cast<int64_t>(mi[r]) * d;
                std::copy(mf, mf + d, dst + 3);
                std::copy(cf, cf + d, dst + 3 + d);
            }
        }
    }
    Tape<T>& tp = *feats.tape;
    const bool rg = tp.requires_grad_at(feats.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, fid = feats.id, memb_idx, cent_idx, b, n, d, g, k, width](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            Array<T>& df = t.grad_buffer(fid);
            for (int64_t bi = 0; bi < b; ++bi) {
                T* fb = df.data() + bi * n * d;
                const int32_t* mi = memb_idx->data() + bi * g * k;
                const int32_t* ci = cent_idx->data() + bi * g;
                for (int64_t gi = 0; gi < g; ++gi) {
                    T* cf = fb + static_cast<int64_t>(ci[gi]) * d;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        const int64_t r = gi * k + kk;
                        const T* src = dy.data() + ((bi * g + gi) * k + kk) * width;
                        T* mf = fb + static_cast<int64_t>(mi[r]) * d;
                        for (int64_t j = 0; j < d; ++j) mf[j] += src[3 + j];
                        for (int64_t j = 0; j < d; ++j) cf[j] += src[3 + d + j];
                    }
                }
            }
        });
    return y;
}

// Fused LSTM gate application: gates[..., 4H] in (input, forget, candidate,
// output) layout plus the previous cell state give [h ++ c] in one node.
template <typename T>
Tensor<T> lstm_activate(Tensor<T> gates, Tensor<T> c_prev) {
    const Array<T>& gv = gates.value();
    const Array<T>& cv = c_prev.value();
    const int64_t h4 = gv.dim(-1);
    detail::require(h4 % 4 == 0 && cv.dim(-1) == h4 / 4 && cv.numel() * 4 == gv.numel(),
                    "lstm_activate gates " + shape_str(gv.shape()) + " vs state " + shape_str(cv.shape()));
    const int64_t hsz = h4 / 4;
    const int64_t rows = cv.numel() / hsz;

    auto saved = std::make_shared<Array<T>>(Shape{rows, 5 * hsz});  // i f g o c per row
    Shape out_shape = cv.shape();
    out_shape.back() = 2 * hsz;
    Array<T> out(out_shape);
    for (int64_t r = 0; r < rows; ++r) {
        const T* g = gv.data() + r * h4;
        const T* cp = cv.data() + r * hsz;
        T* sv = saved->data() + r * 5 * hsz;
        T* ho = out.data() + r * 2 * hsz;
        for (int64_t j = 0; j < hsz; ++j) {
            const T gi = T(1) / (T(1) + std::exp(-g[j]));
            const T gf = T(1) / (T(1) + std::exp(-g[hsz + j]));
            const T gc = std::tanh(g[2 * hsz + j]);
            const T go = T(1) / (T(1) + std::exp(-g[3 * hsz + j]));
            const T c = gf * cp[j] + gi * gc;
            sv[j] = gi;
            sv[hsz + j] = gf;
            sv[2 * hsz + j] = gc;
            sv[3 * hsz + j] = go;
            sv[4 * hsz + j] = c;
            ho[j] = go * std::tanh(c);
            ho[hsz + j] = c;
        }
    }
    Tape<T>& tp = *gates.tape;
    const bool rg = tp.requires_grad_at(gates.id) || tp.requires_grad_at(c_prev.id);
    Tensor<T> y = tp.record(std::move(out), rg);
    if (rg)
        tp.set_backprop(y.id, [yid = y.id, gid = gates.id, cid = c_prev.id, saved, rows, hsz](Tape<T>& t) {
            const Array<T>& dy = t.grad_buffer(yid);
            const bool need_g = t.requires_grad_at(gid);
            const bool need_c = t.requires_grad_at(cid);
            Array<T>* dg = need_g ? &t.grad_buffer(gid) : nullptr;
            Array<T>* dcp = need_c ? &t.grad_buffer(cid) : nullptr;
            const Array<T>& cv2 = t.value_at(cid);
            for (int64_t r = 0; r < rows; ++r) {
                const T* sv = saved->data() + r * 5 * hsz;
                const T* d = dy.data() + r * 2 * hsz;
                for (int64_t j = 0; j < hsz; ++j) {
                    const T gi = sv[j], gf = sv[hsz + j], gc = sv[2 * hsz + j], go = sv[3 * hsz + j];
                    const T c = sv[4 * hsz + j];
                    const T tc = std::tanh(c);
                    const T dh = d[j];
                    const T dc = d[hsz + j] + dh * go * (T(1) - tc * tc);
                    if (need_g) {
                        T* gr = dg->data() + r * 4 * hsz;
                        gr[j] += dc * gc * gi * (T(1) - gi);
                        gr[hsz + j] += dc * cv2[r * hsz + j] * gf * (T(1) - gf);
                        gr[2 * hsz + j] += dc * gi * (T(1) - gc * gc);
                        gr[3 * hsz + j] += dh * tc * go * (T(1) - go);
                    }
                    if (need_c) (*dcp)[r * hsz + j] += dc * gf;
                }
            }
        });
    return y;
}

// Standard four-gate LSTM cell; gate layout in the fused weight matrices is
// (input, forget, candidate, output).
// w_x: [D_in, 4H], w_h: [H, 4H], b: [4H]; x: [B, D_in] (or [B, 1, D_in]).
template <typename T>
struct LstmOut {
    Tensor<T> h;
    Tensor<T> c;
};

template <typename T>
LstmOut<T> lstm_cell(Tensor<T> x, Tensor<T> h_prev, Tensor<T> c_prev, Tensor<T> w_x, Tensor<T> w_h, Tensor<T> b) {
    const int64_t h4 = w_x.dim(-1);
    detail::require(h4 % 4 == 0 && w_h.dim(-1) == h4 && b.numel() == h4,
                    "lstm_cell fused weights must share a 4H last dimension");
    const int64_t hsz = h4 / 4;
    Tensor<T> gates = linear2(x, w_x, h_prev, w_h, b);
    Tensor<T> hc = lstm_activate(gates, c_prev);
    Tensor<T> h = narrow(hc, -1, 0, hsz);
    Tensor<T> c = narrow(hc, -1, hsz, hsz);
    return {h, c};
}

// Single-gate recurrence h_t = tanh(x W + h U + b); used by the ablation that
// swaps the LSTM for a plain recurrent unit. w_x: [D_in, H], w_h: [H, H].
template <typename T>
Tensor<T> rnn_cell(Tensor<T> x, Tensor<T> h_prev, Tensor<T> w_x, Tensor<T> w_h, Tensor<T> b) {
    return tanh_op(linear2(x, w_x, h_prev, w_h, b));
}

}  // namespace pepnet::ad
