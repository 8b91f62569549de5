#pragma once

// Poincare ball of curvature c: points q with c |q|^2 < 1.

#include <cstddef>
#include <span>
#include <vector>

#include "i2p/autograd.hpp"
#include "i2p/errors.hpp"

namespace i2p::manifold {

using ad::Var;

class ManifoldError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

inline constexpr double kBallEps = 1e-5;
inline constexpr double kArtanhLimit = 1.0 - 1e-7;

// Largest admissible norm, (1 - kBallEps) / sqrt(c).
double ball_radius(double c);

struct PoincarePoint {
    std::vector<double> q;
    double c = 1.0;

    PoincarePoint() = default;
    // Clamps q into the ball; throws ManifoldError for c <= 0 or non-finite input.
    PoincarePoint(std::vector<double> coords, double curvature);

    std::size_t dim() const { return q.size(); }
};

std::vector<double> clamp_to_ball(std::vector<double> q, double c);

// 2 / (1 - c |q|^2).
double conformal_factor(const PoincarePoint& q);

PoincarePoint mobius_add(const PoincarePoint& q, const PoincarePoint& p);

// (2 / sqrt(c)) artanh(sqrt(c) |-q (+) p|).
double hyp_dist(const PoincarePoint& q, const PoincarePoint& p);

// Exponential map at base u of tangent vector v.
PoincarePoint exp_map(const PoincarePoint& u, std::span<const double> v);
PoincarePoint exp_map0(std::span<const double> v, double c);

// Tape-level, row-wise over (R, n) matrices --------------------------------------

// Rescales rows that leave the ball back onto its clamped radius. The gradient
// is passed through unchanged.
template <typename T>
Var<T> ball_clamp_rows(Var<T> x, T c);

// Row-wise exp_0: tanh(sqrt(c)|v|) v / (sqrt(c)|v|), then clamped.
template <typename T>
Var<T> exp_map0_rows(Var<T> v, T c);

// Row-wise Moebius addition x_r (+) y_r, then clamped.
template <typename T>
Var<T> mobius_add_rows(Var<T> x, Var<T> y, T c);

// Row-wise geodesic distance, shape (R).
template <typename T>
Var<T> hyp_dist_rows(Var<T> x, Var<T> y, T c);

}  // namespace i2p::manifold
