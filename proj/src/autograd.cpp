#include "i2p/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "i2p/errors.hpp"

namespace i2p::ad {

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant_ref(const Tensor<T>& value) {
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(const Tensor<T>& value, Tensor<T>* sink) {
    Node n;
    n.external = &value;
    n.sink = sink;
    n.needs_grad = sink != nullptr;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool needs_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad_ready) {
        n.grad = Tensor<T>(value(id).shape());
        n.grad_ready = true;
    }
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
    if (value(root.id).size() != 1) throw DimensionError("backward root must be a scalar");
    grad(root.id)[0] += T(1);
    backward();
}

template <typename T>
void Tape<T>::backward() {
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.grad_ready || !n.needs_grad) continue;
        if (n.backward) n.backward(*this);
    }
    for (auto& n : nodes_) {
        if (n.sink && n.grad_ready) {
            if (n.sink->size() != n.grad.size()) throw DimensionError("gradient sink shape mismatch");
            for (std::size_t j = 0; j < n.grad.size(); ++j) (*n.sink)[j] += n.grad[j];
        }
    }
}

namespace {

template <typename T>
Tape<T>& tape_of(Var<T> a) {
    return *a.tape;
}

template <typename T>
bool any_grad(Var<T> a) {
    return a.tape->needs_grad(a.id);
}

template <typename T>
bool any_grad(Var<T> a, Var<T> b) {
    return a.tape->needs_grad(a.id) || b.tape->needs_grad(b.id);
}

template <typename T>
void same_shape(Var<T> a, Var<T> b, const char* what) {
    require_shape(b.value().shape(), a.value().shape(), what);
}

void require_matrix(const Shape& s, const char* what) {
    if (s.size() != 2) throw DimensionError(std::string(what) + ": expected a matrix, got " + shape_str(s));
}

// Elementwise unary op with derivative df(x, y).
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
    auto& t = tape_of(a);
    const auto& x = a.value();
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const std::size_t out = t.size();
    const std::size_t ia = a.id;
    return t.push(std::move(y), any_grad(a), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& xv = tp.value(ia);
        const auto& yv = tp.value(out);
        auto& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    same_shape(a, b, "add");
    auto& t = tape_of(a);
    Tensor<T> y = a.value();
    y.requires_grad = false;
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    const std::size_t out = t.size(), ia = a.id, ib = b.id;
    return t.push(std::move(y), any_grad(a, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    same_shape(a, b, "sub");
    auto& t = tape_of(a);
    Tensor<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    const std::size_t out = t.size(), ia = a.id, ib = b.id;
    return t.push(std::move(y), any_grad(a, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    same_shape(a, b, "mul");
    auto& t = tape_of(a);
    Tensor<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    const std::size_t out = t.size(), ia = a.id, ib = b.id;
    return t.push(std::move(y), any_grad(a, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& av = tp.value(ia);
        const auto& bv2 = tp.value(ib);
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
    same_shape(a, b, "div");
    auto& t = tape_of(a);
    Tensor<T> y = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bv[i];
    const std::size_t out = t.size(), ia = a.id, ib = b.id;
    return t.push(std::move(y), any_grad(a, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& yv = tp.value(out);
        const auto& bv2 = tp.value(ib);
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv2[i];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * yv[i] / bv2[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T s) {
    return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> square(Var<T> a) {
    return unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> sqrt(Var<T> a) {
    return unary(
        a, [](T x) { return std::sqrt(x); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> artanh_clamped(Var<T> a, T limit) {
    return unary(
        a, [limit](T x) { return std::atanh(std::min(x, limit)); },
        [limit](T x, T) { return x < limit ? T(1) / (T(1) - x * x) : T(0); });
}

template <typename T>
Var<T> relu(Var<T> a) {
    return unary(
        a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> a) {
    constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    return unary(
        a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
        [](T x, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
            return cdf + x * pdf;
        });
}

template <typename T>
Var<T> sum(Var<T> a) {
    auto& t = tape_of(a);
    const auto& x = a.value();
    T s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
    const std::size_t out = t.size(), ia = a.id;
    return t.push(Tensor<T>::scalar(s), any_grad(a), [=](Tape<T>& tp) {
        const T g = tp.grad(out)[0];
        auto& ga = tp.grad(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw DimensionError("mean of an empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(n));
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
    auto& t = tape_of(a);
    Tensor<T> y = a.value();
    y.reshape(std::move(shape));
    const std::size_t out = t.size(), ia = a.id;
    return t.push(std::move(y), any_grad(a), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        auto& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
    require_matrix(a.shape(), "slice_rows");
    const auto& x = a.value();
    const std::size_t C = x.cols();
    if (begin > end || end > x.rows()) throw DimensionError("slice_rows: range out of bounds");
    auto& t = tape_of(a);
    Tensor<T> y(Shape{end - begin, C});
    std::copy(x.data() + begin * C, x.data() + end * C, y.data());
    const std::size_t out = t.size(), ia = a.id;
    return t.push(std::move(y), any_grad(a), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        auto& ga = tp.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * C + i] += g[i];
    });
}

template <typename T>
Var<T> concat_rows(Var<T> a, Var<T> b) {
    require_matrix(a.shape(), "concat_rows");
    require_matrix(b.shape(), "concat_rows");
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols() != bv.cols()) throw DimensionError("concat_rows: column mismatch");
    auto& t = tape_of(a);
    Tensor<T> y(Shape{av.rows() + bv.rows(), av.cols()});
    std::copy(av.data(), av.data() + av.size(), y.data());
    std::copy(bv.data(), bv.data() + bv.size(), y.data() + av.size());
    const std::size_t out = t.size(), ia = a.id, ib = b.id, na = av.size();
    return t.push(std::move(y), any_grad(a, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad(ia);
            for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
        }
    });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::size_t> index) {
    require_matrix(a.shape(), "gather_rows");
    const auto& x = a.value();
    const std::size_t C = x.cols();
    for (auto r : index)
        if (r >= x.rows()) throw DimensionError("gather_rows: index out of range");
    auto& t = tape_of(a);
    Tensor<T> y(Shape{index.size(), C});
    for (std::size_t i = 0; i < index.size(); ++i)
        std::copy(x.data() + index[i] * C, x.data() + (index[i] + 1) * C, y.data() + i * C);
    const std::size_t out = t.size(), ia = a.id;
    return t.push(std::move(y), any_grad(a), [=, index = std::move(index)](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        auto& ga = tp.grad(ia);
        for (std::size_t i = 0; i < index.size(); ++i)
            for (std::size_t c = 0; c < C; ++c) ga[index[i] * C + c] += g[i * C + c];
    });
}

template <typename T>
Var<T> gather(Var<T> a, std::vector<std::size_t> index) {
    const auto& x = a.value();
    for (auto r : index)
        if (r >= x.size()) throw DimensionError("gather: index out of range");
    auto& t = tape_of(a);
    Tensor<T> y(Shape{index.size()});
    for (std::size_t i = 0; i < index.size(); ++i) y[i] = x[index[i]];
    const std::size_t out = t.size(), ia = a.id;
    return t.push(std::move(y), any_grad(a), [=, index = std::move(index)](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        auto& ga = tp.grad(ia);
        for (std::size_t i = 0; i < index.size(); ++i) ga[index[i]] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, kernels::Trans ta, kernels::Trans tb) {
    using kernels::Trans;
    require_matrix(a.shape(), "matmul");
    require_matrix(b.shape(), "matmul");
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t M = ta == Trans::N ? av.dim(0) : av.dim(1);
    const std::size_t K = ta == Trans::N ? av.dim(1) : av.dim(0);
    const std::size_t Kb = tb == Trans::N ? bv.dim(0) : bv.dim(1);
    const std::size_t N = tb == Trans::N ? bv.dim(1) : bv.dim(0);
    if (K != Kb) {
        throw DimensionError("matmul: inner dimensions differ " + shape_str(av.shape()) + " x " +
                             shape_str(bv.shape()));
    }
    auto& t = tape_of(a);
    Tensor<T> y(Shape{M, N});
    kernels::gemm(ta, tb, M, N, K, av.data(), bv.data(), y.data(), false);
    const std::size_t out = t.size(), ia = a.id, ib = b.id;
    return t.push(std::move(y), any_grad(a, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& A = tp.value(ia);
        const auto& B = tp.value(ib);
        // Y = op(A) op(B). dop(A) = G op(B)^T, dop(B) = op(A)^T G.
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad(ia);
            if (ta == Trans::N) {
                // dA (M x K) = G (M x N) * op(B)^T (N x K)
                kernels::gemm(Trans::N, tb == Trans::N ? Trans::T : Trans::N, M, K, N, g.data(), B.data(),
                              ga.data(), true);
            } else {
                // A stored (K x M): dA = op(B) G^T
                kernels::gemm(tb, Trans::T, K, M, N, B.data(), g.data(), ga.data(), true);
            }
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            if (tb == Trans::N) {
                // dB (K x N) = op(A)^T (K x M) * G (M x N)
                kernels::gemm(ta == Trans::N ? Trans::T : Trans::N, Trans::N, K, N, M, A.data(), g.data(),
                              gb.data(), true);
            } else {
                // B stored (N x K): dB = G^T op(A)
                kernels::gemm(Trans::T, ta, N, K, M, g.data(), A.data(), gb.data(), true);
            }
        }
    });
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> b) {
    const auto& xv = x.value();
    const auto& bv = b.value();
    const std::size_t C = xv.cols();
    if (bv.size() != C) throw DimensionError("add_row: bias length " + std::to_string(bv.size()) +
                                             " does not match width " + std::to_string(C));
    auto& t = tape_of(x);
    Tensor<T> y = xv;
    const std::size_t R = xv.rows();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) y[r * C + c] += bv[c];
    const std::size_t out = t.size(), ix = x.id, ib = b.id;
    return t.push(std::move(y), any_grad(x, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        if (tp.needs_grad(ix)) {
            auto& gx = tp.grad(ix);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
        }
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    return add_row(matmul(x, w), b);
}

template <typename T>
Var<T> row_dot(Var<T> a, Var<T> b) {
    same_shape(a, b, "row_dot");
    const auto& av = a.value();
    const auto& bv = b.value();
    const std::size_t R = av.rows(), C = av.cols();
    auto& t = tape_of(a);
    Tensor<T> y(Shape{R});
    for (std::size_t r = 0; r < R; ++r) {
        T s = 0;
        for (std::size_t c = 0; c < C; ++c) s += av[r * C + c] * bv[r * C + c];
        y[r] = s;
    }
    const std::size_t out = t.size(), ia = a.id, ib = b.id;
    return t.push(std::move(y), any_grad(a, b), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& A = tp.value(ia);
        const auto& B = tp.value(ib);
        if (tp.needs_grad(ia)) {
            auto& ga = tp.grad(ia);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += g[r] * B[r * C + c];
        }
        if (tp.needs_grad(ib)) {
            auto& gb = tp.grad(ib);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) gb[r * C + c] += g[r] * A[r * C + c];
        }
    });
}

template <typename T>
Var<T> row_sqnorm(Var<T> a) {
    const auto& av = a.value();
    const std::size_t R = av.rows(), C = av.cols();
    auto& t = tape_of(a);
    Tensor<T> y(Shape{R});
    for (std::size_t r = 0; r < R; ++r) {
        T s = 0;
        for (std::size_t c = 0; c < C; ++c) s += av[r * C + c] * av[r * C + c];
        y[r] = s;
    }
    const std::size_t out = t.size(), ia = a.id;
    return t.push(std::move(y), any_grad(a), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& A = tp.value(ia);
        auto& ga = tp.grad(ia);
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += T(2) * g[r] * A[r * C + c];
    });
}

template <typename T>
Var<T> row_norm(Var<T> a) {
    const auto& av = a.value();
    const std::size_t R = av.rows(), C = av.cols();
    auto& t = tape_of(a);
    Tensor<T> y(Shape{R});
    for (std::size_t r = 0; r < R; ++r) {
        T s = 0;
        for (std::size_t c = 0; c < C; ++c) s += av[r * C + c] * av[r * C + c];
        y[r] = std::sqrt(s);
    }
    const std::size_t out = t.size(), ia = a.id;
    return t.push(std::move(y), any_grad(a), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& A = tp.value(ia);
        const auto& Y = tp.value(out);
        auto& ga = tp.grad(ia);
        for (std::size_t r = 0; r < R; ++r) {
            if (Y[r] <= T(0)) continue;
            const T k = g[r] / Y[r];
            for (std::size_t c = 0; c < C; ++c) ga[r * C + c] += k * A[r * C + c];
        }
    });
}

template <typename T>
Var<T> mul_rows(Var<T> x, Var<T> s) {
    const auto& xv = x.value();
    const auto& sv = s.value();
    const std::size_t R = xv.rows(), C = xv.cols();
    if (sv.size() != R) throw DimensionError("mul_rows: scale length does not match row count");
    auto& t = tape_of(x);
    Tensor<T> y = xv;
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) y[r * C + c] *= sv[r];
    const std::size_t out = t.size(), ix = x.id, is = s.id;
    return t.push(std::move(y), any_grad(x, s), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& X = tp.value(ix);
        const auto& S = tp.value(is);
        if (tp.needs_grad(ix)) {
            auto& gx = tp.grad(ix);
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += g[r * C + c] * S[r];
        }
        if (tp.needs_grad(is)) {
            auto& gs = tp.grad(is);
            for (std::size_t r = 0; r < R; ++r) {
                T acc = 0;
                for (std::size_t c = 0; c < C; ++c) acc += g[r * C + c] * X[r * C + c];
                gs[r] += acc;
            }
        }
    });
}

template <typename T>
Var<T> l2_normalize(Var<T> x, Axis axis, T eps) {
    require_matrix(x.shape(), "l2_normalize");
    const auto& xv = x.value();
    const std::size_t R = xv.rows(), C = xv.cols();
    // Vector v_l is element (l, m) for Rows, (m, l) for Cols.
    const std::size_t count = axis == Axis::Rows ? R : C;
    const std::size_t len = axis == Axis::Rows ? C : R;
    auto at = [=](std::size_t l, std::size_t m) { return axis == Axis::Rows ? l * C + m : m * C + l; };
    auto& t = tape_of(x);
    Tensor<T> y(xv.shape());
    std::vector<T> norms(count);
    for (std::size_t l = 0; l < count; ++l) {
        T s = 0;
        for (std::size_t m = 0; m < len; ++m) s += xv[at(l, m)] * xv[at(l, m)];
        norms[l] = std::sqrt(s);
        const T d = std::max(norms[l], eps);
        for (std::size_t m = 0; m < len; ++m) y[at(l, m)] = xv[at(l, m)] / d;
    }
    const std::size_t out = t.size(), ix = x.id;
    return t.push(std::move(y), any_grad(x), [=, norms = std::move(norms)](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& Y = tp.value(out);
        auto& gx = tp.grad(ix);
        for (std::size_t l = 0; l < count; ++l) {
            if (norms[l] > eps) {
                // d(x/|x|) = (g - y <g, y>) / |x|
                T gy = 0;
                for (std::size_t m = 0; m < len; ++m) gy += g[at(l, m)] * Y[at(l, m)];
                for (std::size_t m = 0; m < len; ++m)
                    gx[at(l, m)] += (g[at(l, m)] - Y[at(l, m)] * gy) / norms[l];
            } else {
                for (std::size_t m = 0; m < len; ++m) gx[at(l, m)] += g[at(l, m)] / eps;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Layers

template <typename T>
Var<T> softmax_rows(Var<T> x) {
    const auto& xv = x.value();
    const std::size_t R = xv.rows(), C = xv.cols();
    auto& t = tape_of(x);
    Tensor<T> y(xv.shape());
    for (std::size_t r = 0; r < R; ++r) {
        const T* in = xv.data() + r * C;
        T* o = y.data() + r * C;
        const T mx = *std::max_element(in, in + C);
        T s = 0;
        for (std::size_t c = 0; c < C; ++c) {
            o[c] = std::exp(in[c] - mx);
            s += o[c];
        }
        for (std::size_t c = 0; c < C; ++c) o[c] /= s;
    }
    const std::size_t out = t.size(), ix = x.id;
    return t.push(std::move(y), any_grad(x), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& Y = tp.value(out);
        auto& gx = tp.grad(ix);
        for (std::size_t r = 0; r < R; ++r) {
            T dot = 0;
            for (std::size_t c = 0; c < C; ++c) dot += g[r * C + c] * Y[r * C + c];
            for (std::size_t c = 0; c < C; ++c) gx[r * C + c] += Y[r * C + c] * (g[r * C + c] - dot);
        }
    });
}

template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
    const auto& xv = x.value();
    const std::size_t R = xv.rows(), C = xv.cols();
    if (gamma.value().size() != C || beta.value().size() != C)
        throw DimensionError("layer_norm_rows: scale/offset width mismatch");
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    auto& t = tape_of(x);
    Tensor<T> y(xv.shape());
    std::vector<T> xhat(xv.size()), inv_std(R);
    for (std::size_t r = 0; r < R; ++r) {
        const T* in = xv.data() + r * C;
        T mu = 0;
        for (std::size_t c = 0; c < C; ++c) mu += in[c];
        mu /= static_cast<T>(C);
        T var = 0;
        for (std::size_t c = 0; c < C; ++c) var += (in[c] - mu) * (in[c] - mu);
        var /= static_cast<T>(C);
        inv_std[r] = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < C; ++c) {
            xhat[r * C + c] = (in[c] - mu) * inv_std[r];
            y[r * C + c] = gv[c] * xhat[r * C + c] + bv[c];
        }
    }
    const std::size_t out = t.size(), ix = x.id, ig = gamma.id, ib = beta.id;
    const bool ng = any_grad(x) || any_grad(gamma) || any_grad(beta);
    return t.push(std::move(y), ng,
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tp) {
                      const auto& g = tp.grad(out);
                      const auto& G = tp.value(ig);
                      if (tp.needs_grad(ig)) {
                          auto& gg = tp.grad(ig);
                          for (std::size_t r = 0; r < R; ++r)
                              for (std::size_t c = 0; c < C; ++c) gg[c] += g[r * C + c] * xhat[r * C + c];
                      }
                      if (tp.needs_grad(ib)) {
                          auto& gb = tp.grad(ib);
                          for (std::size_t r = 0; r < R; ++r)
                              for (std::size_t c = 0; c < C; ++c) gb[c] += g[r * C + c];
                      }
                      if (tp.needs_grad(ix)) {
                          auto& gx = tp.grad(ix);
                          const T invC = T(1) / static_cast<T>(C);
                          for (std::size_t r = 0; r < R; ++r) {
                              T m1 = 0, m2 = 0;
                              for (std::size_t c = 0; c < C; ++c) {
                                  const T dh = g[r * C + c] * G[c];
                                  m1 += dh;
                                  m2 += dh * xhat[r * C + c];
                              }
                              m1 *= invC;
                              m2 *= invC;
                              for (std::size_t c = 0; c < C; ++c) {
                                  const T dh = g[r * C + c] * G[c];
                                  gx[r * C + c] += inv_std[r] * (dh - m1 - xhat[r * C + c] * m2);
                              }
                          }
                      }
                  });
}

template <typename T>
Var<T> segment_max_rows(Var<T> x, std::size_t k) {
    require_matrix(x.shape(), "segment_max_rows");
    const auto& xv = x.value();
    const std::size_t R = xv.rows(), C = xv.cols();
    if (k == 0 || R % k != 0) throw DimensionError("segment_max_rows: rows not divisible by group size");
    const std::size_t G = R / k;
    auto& t = tape_of(x);
    Tensor<T> y(Shape{G, C});
    std::vector<std::size_t> argmax(G * C);
    for (std::size_t g = 0; g < G; ++g) {
        for (std::size_t c = 0; c < C; ++c) {
            std::size_t best = g * k;
            T bv = xv[best * C + c];
            for (std::size_t j = 1; j < k; ++j) {
                const std::size_t r = g * k + j;
                if (xv[r * C + c] > bv) {
                    bv = xv[r * C + c];
                    best = r;
                }
            }
            y[g * C + c] = bv;
            argmax[g * C + c] = best;
        }
    }
    const std::size_t out = t.size(), ix = x.id;
    return t.push(std::move(y), any_grad(x), [=, argmax = std::move(argmax)](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        auto& gx = tp.grad(ix);
        for (std::size_t i = 0; i < G * C; ++i) gx[argmax[i] * C + (i % C)] += g[i];
    });
}

template <typename T>
Var<T> attention_probs(Var<T> q, Var<T> k, std::size_t heads, T scale_factor) {
    same_shape(q, k, "attention_probs");
    require_matrix(q.shape(), "attention_probs");
    const auto& Q = q.value();
    const auto& K = k.value();
    const std::size_t N = Q.rows(), D = Q.cols();
    if (heads == 0 || D % heads != 0) throw ConfigError("attention: width not divisible by head count");
    const std::size_t dh = D / heads;
    auto& t = tape_of(q);
    Tensor<T> A(Shape{heads, N, N});
    std::vector<T> row(N);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < N; ++i) {
            const T* qi = Q.data() + i * D + h * dh;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < N; ++j) {
                const T* kj = K.data() + j * D + h * dh;
                T s = 0;
                for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
                row[j] = s * scale_factor;
                mx = std::max(mx, row[j]);
            }
            T z = 0;
            for (std::size_t j = 0; j < N; ++j) {
                row[j] = std::exp(row[j] - mx);
                z += row[j];
            }
            T* a = A.data() + (h * N + i) * N;
            for (std::size_t j = 0; j < N; ++j) a[j] = row[j] / z;
        }
    }
    const std::size_t out = t.size(), iq = q.id, ik = k.id;
    return t.push(std::move(A), any_grad(q, k), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& P = tp.value(out);
        const auto& Qv = tp.value(iq);
        const auto& Kv = tp.value(ik);
        Tensor<T>* gq = tp.needs_grad(iq) ? &tp.grad(iq) : nullptr;
        Tensor<T>* gk = tp.needs_grad(ik) ? &tp.grad(ik) : nullptr;
        std::vector<T> ds(N);
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < N; ++i) {
                const T* p = P.data() + (h * N + i) * N;
                const T* gp = g.data() + (h * N + i) * N;
                T dot = 0;
                for (std::size_t j = 0; j < N; ++j) dot += gp[j] * p[j];
                for (std::size_t j = 0; j < N; ++j) ds[j] = p[j] * (gp[j] - dot) * scale_factor;
                for (std::size_t j = 0; j < N; ++j) {
                    if (ds[j] == T(0)) continue;
                    const std::size_t oi = i * D + h * dh, oj = j * D + h * dh;
                    if (gq)
                        for (std::size_t c = 0; c < dh; ++c) (*gq)[oi + c] += ds[j] * Kv[oj + c];
                    if (gk)
                        for (std::size_t c = 0; c < dh; ++c) (*gk)[oj + c] += ds[j] * Qv[oi + c];
                }
            }
        }
    });
}

template <typename T>
Var<T> attention_mix(Var<T> attn, Var<T> v, std::size_t heads) {
    require_matrix(v.shape(), "attention_mix");
    const auto& A = attn.value();
    const auto& V = v.value();
    const std::size_t N = V.rows(), D = V.cols();
    require_shape(A.shape(), Shape{heads, N, N}, "attention_mix");
    if (heads == 0 || D % heads != 0) throw ConfigError("attention: width not divisible by head count");
    const std::size_t dh = D / heads;
    auto& t = tape_of(v);
    Tensor<T> O(Shape{N, D});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < N; ++i) {
            const T* a = A.data() + (h * N + i) * N;
            T* o = O.data() + i * D + h * dh;
            for (std::size_t j = 0; j < N; ++j) {
                const T* vj = V.data() + j * D + h * dh;
                for (std::size_t c = 0; c < dh; ++c) o[c] += a[j] * vj[c];
            }
        }
    const std::size_t out = t.size(), ia = attn.id, iv = v.id;
    return t.push(std::move(O), any_grad(attn, v), [=](Tape<T>& tp) {
        const auto& g = tp.grad(out);
        const auto& Av = tp.value(ia);
        const auto& Vv = tp.value(iv);
        Tensor<T>* ga = tp.needs_grad(ia) ? &tp.grad(ia) : nullptr;
        Tensor<T>* gv = tp.needs_grad(iv) ? &tp.grad(iv) : nullptr;
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < N; ++i) {
                const T* a = Av.data() + (h * N + i) * N;
                const T* go = g.data() + i * D + h * dh;
                for (std::size_t j = 0; j < N; ++j) {
                    const std::size_t oj = j * D + h * dh;
                    if (ga) {
                        T s = 0;
                        for (std::size_t c = 0; c < dh; ++c) s += go[c] * Vv[oj + c];
                        (*ga)[(h * N + i) * N + j] += s;
                    }
                    if (gv)
                        for (std::size_t c = 0; c < dh; ++c) (*gv)[oj + c] += a[j] * go[c];
                }
            }
    });
}

// ---------------------------------------------------------------------------

#define I2P_INSTANTIATE(T)                                                                        \
    template class Tape<T>;                                                                       \
    template Var<T> add(Var<T>, Var<T>);                                                          \
    template Var<T> sub(Var<T>, Var<T>);                                                          \
    template Var<T> mul(Var<T>, Var<T>);                                                          \
    template Var<T> div(Var<T>, Var<T>);                                                          \
    template Var<T> scale(Var<T>, T);                                                             \
    template Var<T> add_scalar(Var<T>, T);                                                        \
    template Var<T> square(Var<T>);                                                               \
    template Var<T> sqrt(Var<T>);                                                                 \
    template Var<T> tanh(Var<T>);                                                                 \
    template Var<T> artanh_clamped(Var<T>, T);                                                    \
    template Var<T> relu(Var<T>);                                                                 \
    template Var<T> gelu(Var<T>);                                                                 \
    template Var<T> sum(Var<T>);                                                                  \
    template Var<T> mean(Var<T>);                                                                 \
    template Var<T> reshape(Var<T>, Shape);                                                       \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                 \
    template Var<T> concat_rows(Var<T>, Var<T>);                                                  \
    template Var<T> gather_rows(Var<T>, std::vector<std::size_t>);                                \
    template Var<T> gather(Var<T>, std::vector<std::size_t>);                                     \
    template Var<T> matmul(Var<T>, Var<T>, kernels::Trans, kernels::Trans);                       \
    template Var<T> add_row(Var<T>, Var<T>);                                                      \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                               \
    template Var<T> row_dot(Var<T>, Var<T>);                                                      \
    template Var<T> row_sqnorm(Var<T>);                                                           \
    template Var<T> row_norm(Var<T>);                                                             \
    template Var<T> mul_rows(Var<T>, Var<T>);                                                     \
    template Var<T> l2_normalize(Var<T>, Axis, T);                                                \
    template Var<T> softmax_rows(Var<T>);                                                         \
    template Var<T> layer_norm_rows(Var<T>, Var<T>, Var<T>, T);                                   \
    template Var<T> segment_max_rows(Var<T>, std::size_t);                                        \
    template Var<T> attention_probs(Var<T>, Var<T>, std::size_t, T);                              \
    template Var<T> attention_mix(Var<T>, Var<T>, std::size_t);

I2P_INSTANTIATE(float)
I2P_INSTANTIATE(double)

#undef I2P_INSTANTIATE

}  // namespace i2p::ad
