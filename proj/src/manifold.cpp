#include "i2p/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace i2p::manifold {

namespace {

void check_curvature(double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ManifoldError("curvature must be positive, got " + std::to_string(c));
}

void check_pair(const PoincarePoint& q, const PoincarePoint& p) {
    if (q.c != p.c) throw ManifoldError("points live on balls of different curvature");
    if (q.dim() != p.dim())
        throw ManifoldError("dimension mismatch: " + std::to_string(q.dim()) + " vs " + std::to_string(p.dim()));
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<double> mobius_raw(std::span<const double> x, std::span<const double> y, double c) {
    const double xy = dot(x, y), x2 = dot(x, x), y2 = dot(y, y);
    const double a = 1.0 + 2.0 * c * xy + c * y2;
    const double b = 1.0 - c * x2;
    const double den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (a * x[i] + b * y[i]) / den;
    return out;
}

}  // namespace

double ball_radius(double c) {
    check_curvature(c);
    return (1.0 - kBallEps) / std::sqrt(c);
}

std::vector<double> clamp_to_ball(std::vector<double> q, double c) {
    const double r = ball_radius(c);
    const double n = std::sqrt(dot(q, q));
    if (n > r) {
        const double s = r / n;
        for (auto& x : q) x *= s;
    }
    return q;
}

PoincarePoint::PoincarePoint(std::vector<double> coords, double curvature) : c(curvature) {
    check_curvature(c);
    for (double x : coords)
        if (!std::isfinite(x)) throw ManifoldError("non-finite Poincare coordinate");
    q = clamp_to_ball(std::move(coords), c);
}

double conformal_factor(const PoincarePoint& q) { return 2.0 / (1.0 - q.c * dot(q.q, q.q)); }

PoincarePoint mobius_add(const PoincarePoint& q, const PoincarePoint& p) {
    check_pair(q, p);
    return PoincarePoint(mobius_raw(q.q, p.q, q.c), q.c);
}

double hyp_dist(const PoincarePoint& q, const PoincarePoint& p) {
    check_pair(q, p);
    std::vector<double> neg(q.q);
    for (auto& x : neg) x = -x;
    const auto m = clamp_to_ball(mobius_raw(neg, p.q, q.c), q.c);
    const double sc = std::sqrt(q.c);
    const double arg = std::min(sc * std::sqrt(dot(m, m)), kArtanhLimit);
    return 2.0 / sc * std::atanh(arg);
}

PoincarePoint exp_map(const PoincarePoint& u, std::span<const double> v) {
    if (v.size() != u.dim()) throw ManifoldError("tangent vector dimension mismatch");
    for (double x : v)
        if (!std::isfinite(x)) throw ManifoldError("non-finite tangent vector");
    const double n = std::sqrt(dot(v, v));
    if (n == 0.0) return u;
    const double sc = std::sqrt(u.c);
    const double k = std::tanh(sc * conformal_factor(u) * n / 2.0) / (sc * n);
    std::vector<double> step(v.begin(), v.end());
    for (auto& x : step) x *= k;
    return PoincarePoint(mobius_raw(u.q, clamp_to_ball(std::move(step), u.c), u.c), u.c);
}

PoincarePoint exp_map0(std::span<const double> v, double c) {
    return exp_map(PoincarePoint(std::vector<double>(v.size(), 0.0), c), v);
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> ball_clamp_rows(Var<T> x, T c) {
    const auto& xv = x.value();
    const std::size_t R = xv.rows(), C = xv.cols();
    const T r = static_cast<T>(ball_radius(static_cast<double>(c)));
    Tensor<T> y = xv;
    for (std::size_t i = 0; i < R; ++i) {
        T n2 = 0;
        for (std::size_t j = 0; j < C; ++j) n2 += y[i * C + j] * y[i * C + j];
        const T n = std::sqrt(n2);
        if (n > r)
            for (std::size_t j = 0; j < C; ++j) y[i * C + j] *= r / n;
    }
    auto& t = *x.tape;
    const std::size_t out = t.size(), ix = x.id;
    return t.push(std::move(y), t.needs_grad(x), [=](ad::Tape<T>& tp) {
        const auto& g = tp.grad(out);
        auto& gx = tp.grad(ix);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <typename T>
Var<T> exp_map0_rows(Var<T> v, T c) {
    check_curvature(static_cast<double>(c));
    auto n = ad::row_norm(v);
    // f(n) = tanh(s n) / (s n) with its series near zero.
    const T s = std::sqrt(c);
    const auto& nv = n.value();
    Tensor<T> f(nv.shape());
    Tensor<T> df(nv.shape());
    for (std::size_t i = 0; i < nv.size(); ++i) {
        const T z = s * nv[i];
        if (z < T(1e-4)) {
            f[i] = T(1) - z * z / T(3);
            df[i] = -T(2) * s * z / T(3);
        } else {
            const T th = std::tanh(z);
            f[i] = th / z;
            df[i] = s * ((T(1) - th * th) * z - th) / (z * z);
        }
    }
    auto& t = *v.tape;
    const std::size_t out = t.size(), in = n.id;
    auto fv = t.push(std::move(f), t.needs_grad(n), [=, df = std::move(df)](ad::Tape<T>& tp) {
        const auto& g = tp.grad(out);
        auto& gn = tp.grad(in);
        for (std::size_t i = 0; i < g.size(); ++i) gn[i] += g[i] * df[i];
    });
    return ball_clamp_rows(ad::mul_rows(v, fv), c);
}

template <typename T>
Var<T> mobius_add_rows(Var<T> x, Var<T> y, T c) {
    check_curvature(static_cast<double>(c));
    if (x.value().shape() != y.value().shape()) throw ManifoldError("mobius_add_rows: shape mismatch");
    auto& t = *x.tape;
    auto xy = ad::row_dot(x, y);
    auto x2 = ad::row_sqnorm(x);
    auto y2 = ad::row_sqnorm(y);
    auto a = ad::add_scalar(ad::add(ad::scale(xy, T(2) * c), ad::scale(y2, c)), T(1));
    auto b = ad::add_scalar(ad::scale(x2, -c), T(1));
    auto den = ad::add_scalar(ad::add(ad::scale(xy, T(2) * c), ad::scale(ad::mul(x2, y2), c * c)), T(1));
    auto inv = ad::div(t.constant(Tensor<T>(den.value().shape(), T(1))), den);
    auto num = ad::add(ad::mul_rows(x, a), ad::mul_rows(y, b));
    return ball_clamp_rows(ad::mul_rows(num, inv), c);
}

template <typename T>
Var<T> hyp_dist_rows(Var<T> x, Var<T> y, T c) {
    const T s = std::sqrt(c);
    auto m = mobius_add_rows(ad::scale(x, T(-1)), y, c);
    auto arg = ad::scale(ad::row_norm(m), s);
    return ad::scale(ad::artanh_clamped(arg, static_cast<T>(kArtanhLimit)), T(2) / s);
}

#define I2P_INSTANTIATE(T)                                    \
    template Var<T> ball_clamp_rows<T>(Var<T>, T);            \
    template Var<T> exp_map0_rows<T>(Var<T>, T);              \
    template Var<T> mobius_add_rows<T>(Var<T>, Var<T>, T);    \
    template Var<T> hyp_dist_rows<T>(Var<T>, Var<T>, T);

I2P_INSTANTIATE(float)
I2P_INSTANTIATE(double)

#undef I2P_INSTANTIATE

}  // namespace i2p::manifold
