#include <gtest/gtest.h>

#include <cmath>

#include "i2p/manifold.hpp"
#include "support.hpp"

namespace i2p {
namespace {

using namespace manifold;
using testing::Rng;

double norm(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Random point with norm below `max_norm` of the unit ball, scaled for curvature c.
PoincarePoint random_point(std::size_t n, Rng& rng, double c, double max_norm = 0.9) {
    std::vector<double> v(n);
    for (auto& x : v) x = testing::gauss(rng);
    const double r = testing::uniform(rng, 0, max_norm) / std::sqrt(c) / norm(v);
    for (auto& x : v) x *= r;
    return {v, c};
}

// |(-x) (+) y| in closed form.
double mobius_gap_norm(const std::vector<double>& x, const std::vector<double>& y, double c) {
    double xy = 0, x2 = 0, y2 = 0, d2 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xy += x[i] * y[i];
        x2 += x[i] * x[i];
        y2 += y[i] * y[i];
        d2 += (x[i] - y[i]) * (x[i] - y[i]);
    }
    return std::sqrt(d2) / std::sqrt(1.0 - 2.0 * c * xy + c * c * x2 * y2);
}

TEST(ConformalFactor, OriginAndClosedForm) {
    EXPECT_DOUBLE_EQ(conformal_factor(PoincarePoint({0.0, 0.0}, 1.0)), 2.0);
    EXPECT_NEAR(conformal_factor(PoincarePoint({0.3, 0.4}, 1.0)), 8.0 / 3.0, 1e-15);
}

TEST(ConformalFactor, FiniteAtTheClampedBoundary) {
    const double lam = conformal_factor(PoincarePoint({5.0, 0.0}, 1.0));
    EXPECT_TRUE(std::isfinite(lam));
    EXPECT_GT(lam, 1e4);
}

TEST(Mobius, IdentitiesAndClosedForm) {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        auto q = random_point(4, rng, 1.0);
        PoincarePoint zero(std::vector<double>(4, 0.0), 1.0);
        auto a = mobius_add(q, zero), b = mobius_add(zero, q);
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(a.q[j], q.q[j], 1e-12);
            EXPECT_NEAR(b.q[j], q.q[j], 1e-12);
        }
    }
    // (1.4 * 0.3 + 0.91 * 0.4) / 1.2544 = 0.625
    auto r = mobius_add(PoincarePoint({0.3, 0.0}, 1.0), PoincarePoint({0.4, 0.0}, 1.0));
    EXPECT_NEAR(r.q[0], 0.625, 1e-15);
    EXPECT_EQ(r.q[1], 0.0);
}

TEST(Mobius, MismatchIsManifoldError) {
    EXPECT_THROW(mobius_add(PoincarePoint({0.1}, 1.0), PoincarePoint({0.1, 0.2}, 1.0)), ManifoldError);
    EXPECT_THROW(mobius_add(PoincarePoint({0.1}, 1.0), PoincarePoint({0.1}, 2.0)), ManifoldError);
    EXPECT_THROW(PoincarePoint({0.1}, 0.0), ManifoldError);
}

TEST(HypDist, IdentitySymmetryAndClosedForm) {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const double c = testing::uniform(rng, 0.1, 3.0);
        auto q = random_point(5, rng, c), p = random_point(5, rng, c);
        EXPECT_NEAR(hyp_dist(q, q), 0.0, 1e-9);
        EXPECT_NEAR(hyp_dist(q, p), hyp_dist(p, q), 1e-9);
        EXPECT_GE(hyp_dist(q, p), 0.0);
        const double want = 2.0 / std::sqrt(c) * std::atanh(std::sqrt(c) * mobius_gap_norm(q.q, p.q, c));
        EXPECT_NEAR(hyp_dist(q, p), want, 1e-9 * std::max(1.0, want));
    }
    EXPECT_NEAR(hyp_dist(PoincarePoint({0.0, 0.0}, 1.0), PoincarePoint({0.5, 0.0}, 1.0)), 1.0986122886681098,
                1e-12);
}

TEST(HypDist, TriangleInequality) {
    Rng rng(3);
    for (int i = 0; i < 500; ++i) {
        auto a = random_point(3, rng, 1.0), b = random_point(3, rng, 1.0), c = random_point(3, rng, 1.0);
        EXPECT_LE(hyp_dist(a, c), hyp_dist(a, b) + hyp_dist(b, c) + 1e-7);
    }
}

TEST(HypDist, EuclideanLimit) {
    Rng rng(4);
    const double c = 1e-6;
    for (int i = 0; i < 100; ++i) {
        std::vector<double> x(4), y(4);
        for (auto& v : x) v = testing::uniform(rng, -0.5, 0.5);
        for (auto& v : y) v = testing::uniform(rng, -0.5, 0.5);
        std::vector<double> d(4);
        for (int j = 0; j < 4; ++j) d[j] = x[j] - y[j];
        const double euc = 2.0 * norm(d);
        EXPECT_NEAR(hyp_dist(PoincarePoint(x, c), PoincarePoint(y, c)) / euc, 1.0, 1e-3);
    }
}

TEST(HypDist, FiniteNearTheBoundary) {
    const double d = hyp_dist(PoincarePoint({-10.0, 0.0}, 1.0), PoincarePoint({10.0, 0.0}, 1.0));
    EXPECT_TRUE(std::isfinite(d));
    // Both points clamp to radius 1 - eps; their Mobius difference clamps likewise.
    EXPECT_NEAR(d, 2.0 * std::atanh(1.0 - kBallEps), 1e-6);
    EXPECT_LE(d, 2.0 * std::atanh(kArtanhLimit));
}

TEST(ExpMap, ZeroTangentAndClosedForm) {
    auto u = PoincarePoint({0.1, -0.2}, 1.0);
    const std::vector<double> zero{0.0, 0.0};
    EXPECT_EQ(exp_map(u, zero).q, u.q);
    const std::vector<double> v{1.0, 0.0};
    auto e = exp_map0(v, 1.0);
    EXPECT_NEAR(e.q[0], 0.7615941559557649, 1e-12);
    EXPECT_EQ(e.q[1], 0.0);
}

TEST(ExpMap, RoundTripDistanceFromOrigin) {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        std::vector<double> v(3);
        for (auto& x : v) x = testing::uniform(rng, -0.5, 0.5);
        auto e = exp_map0(v, 1.0);
        EXPECT_NEAR(hyp_dist(PoincarePoint(std::vector<double>(3, 0.0), 1.0), e), 2.0 * norm(v), 1e-9);
    }
}

TEST(Ball, EveryOutputIsInside) {
    Rng rng(6);
    for (int i = 0; i < 100; ++i) {
        const double c = testing::uniform(rng, 0.1, 4.0);
        std::vector<double> big(3);
        for (auto& x : big) x = testing::uniform(rng, -50, 50);
        auto p = PoincarePoint(big, c);
        EXPECT_LT(c * norm(p.q) * norm(p.q), 1.0);
        auto s = mobius_add(p, random_point(3, rng, c, 0.99));
        EXPECT_LT(c * norm(s.q) * norm(s.q), 1.0);
        auto e = exp_map0(big, c);
        EXPECT_LT(c * norm(e.q) * norm(e.q), 1.0);
        auto e2 = exp_map(random_point(3, rng, c), big);
        EXPECT_LT(c * norm(e2.q) * norm(e2.q), 1.0);
    }
}

Tensor<double> rows_of(const std::vector<PoincarePoint>& pts) {
    Tensor<double> t(Shape{pts.size(), pts[0].dim()});
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = 0; j < pts[i].dim(); ++j) t.at(i, j) = pts[i].q[j];
    return t;
}

TEST(RowOps, MatchPointwiseFunctions) {
    Rng rng(7);
    const double c = 0.7;
    std::vector<PoincarePoint> xs, ys;
    for (int i = 0; i < 6; ++i) xs.push_back(random_point(4, rng, c)), ys.push_back(random_point(4, rng, c));
    ad::Tape<double> t;
    auto X = t.constant(rows_of(xs)), Y = t.constant(rows_of(ys));
    auto M = mobius_add_rows(X, Y, c).value();
    auto D = hyp_dist_rows(X, Y, c).value();
    auto E = exp_map0_rows(X, c).value();
    for (int i = 0; i < 6; ++i) {
        auto m = mobius_add(xs[i], ys[i]);
        auto e = exp_map0(xs[i].q, c);
        for (int j = 0; j < 4; ++j) {
            EXPECT_NEAR(M.at(i, j), m.q[j], 1e-12);
            EXPECT_NEAR(E.at(i, j), e.q[j], 1e-12);
        }
        EXPECT_NEAR(D[i], hyp_dist(xs[i], ys[i]), 1e-10);
    }
}

TEST(RowOps, GradientsMatchFiniteDifferences) {
    using V = std::vector<ad::Var<double>>;
    const double c = 1.3;
    auto r1 = testing::check_op({{3, 4}}, [&](auto&, const V& x) { return exp_map0_rows(x[0], c); }, 1, -0.8, 0.8);
    EXPECT_LT(r1.max_rel_error, 1e-6);
    // Inputs scaled into the ball via exp_0 keep the check away from the clamp.
    auto r2 = testing::check_op(
        {{3, 4}, {3, 4}},
        [&](auto&, const V& x) { return mobius_add_rows(exp_map0_rows(x[0], c), exp_map0_rows(x[1], c), c); }, 2,
        -0.5, 0.5);
    EXPECT_LT(r2.max_rel_error, 1e-6);
    auto r3 = testing::check_op(
        {{3, 4}, {3, 4}},
        [&](auto&, const V& x) { return hyp_dist_rows(exp_map0_rows(x[0], c), exp_map0_rows(x[1], c), c); }, 3,
        -0.5, 0.5);
    EXPECT_LT(r3.max_rel_error, 1e-6);
    EXPECT_TRUE(r1.ok && r2.ok && r3.ok);
}

TEST(RowOps, ClampPassesGradientThrough) {
    ad::Tape<double> t;
    auto x = t.leaf(Tensor<double>::matrix(1, 2, {3.0, 4.0}));
    auto y = ball_clamp_rows(x, 1.0);
    EXPECT_NEAR(norm(y.value().vec()), ball_radius(1.0), 1e-12);
    t.backward(ad::sum(y));
    EXPECT_EQ(t.grad(x).vec(), (std::vector<double>{1.0, 1.0}));
}

}  // namespace
}  // namespace i2p
