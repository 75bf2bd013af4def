// include/hyro/ball.hpp
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace hyro {

// Multiplicative safety margin on the ball radius. All constructors funnel
// through the same projection so every PoincarePoint satisfies
// ‖x‖ ≤ (1 − kBallMargin)/√c strictly inside the open ball.
inline constexpr double kBallMargin = 1e-5;

// Below this argument the closed forms of the map scalars lose digits to
// cancellation; all four switch to their Taylor series here.
inline constexpr double kSmallArgThreshold = 1e-2;

/**
 * @brief Curvature magnitude c of the Poincaré ball of curvature −c.
 *
 * The ball is {x ∈ ℝ^d : c·‖x‖² < 1}, so its Euclidean radius is 1/√c.
 */
class Curvature {
 public:
  explicit Curvature(double c) : c_(c), sqrt_c_(std::sqrt(c)) {
    if (!(c > 0.0) || !std::isfinite(c)) {
      throw std::invalid_argument("curvature must be a positive finite real");
    }
  }

  [[nodiscard]] double value() const noexcept { return c_; }
  [[nodiscard]] double sqrt() const noexcept { return sqrt_c_; }
  [[nodiscard]] double ball_radius() const noexcept { return 1.0 / sqrt_c_; }

  friend bool operator==(const Curvature& a, const Curvature& b) noexcept {
    return a.c_ == b.c_;
  }

 private:
  double c_;
  double sqrt_c_;
};

using TangentVector = Eigen::VectorXd;

/**
 * @brief A point strictly inside the Poincaré ball, tagged with its curvature.
 *
 * Construction projects: any coordinates with ‖x‖ ≥ (1 − ε)/√c are rescaled
 * to norm (1 − ε)/√c with the direction preserved, ε = kBallMargin. The
 * projection is the single boundary policy for the whole library; nothing
 * downstream re-checks membership.
 */
class PoincarePoint {
 public:
  PoincarePoint(Eigen::VectorXd coords, Curvature c)
      : x_(std::move(coords)), c_(c) {
    if (!x_.allFinite()) {
      throw std::invalid_argument("point coordinates must be finite");
    }
    const double limit = (1.0 - kBallMargin) * c_.ball_radius();
    const double r = x_.norm();
    if (r >= limit) {
      x_ *= limit / r;
    }
  }

  [[nodiscard]] const Eigen::VectorXd& coords() const noexcept { return x_; }
  [[nodiscard]] Curvature curvature() const noexcept { return c_; }
  [[nodiscard]] Eigen::Index dim() const noexcept { return x_.size(); }
  [[nodiscard]] double norm() const { return x_.norm(); }

 private:
  Eigen::VectorXd x_;
  Curvature c_;
};

/**
 * @brief Clamp raw coordinates into the ball.
 *
 * ‖x‖ < (1−ε)/√c passes through unchanged; larger norms rescale to
 * (1−ε)/√c with direction preserved.
 */
[[nodiscard]] inline PoincarePoint project_to_ball(Eigen::VectorXd x,
                                                   Curvature c) {
  return PoincarePoint(std::move(x), c);
}

namespace detail {

// s(u) = tanh(u)/u, the radial scalar of the exponential map.
[[nodiscard]] inline double exp_scalar(double u) noexcept {
  if (u < kSmallArgThreshold) {
    const double u2 = u * u;
    return 1.0 - u2 / 3.0 + 2.0 * u2 * u2 / 15.0 -
           17.0 * u2 * u2 * u2 / 315.0;
  }
  return std::tanh(u) / u;
}

// s'(u)/u = (u·sech²u − tanh u)/u³, the rank-one scalar of the exp Jacobian.
// The closed form subtracts two nearly equal ~u-sized terms to produce a
// ~u³-sized result, so small arguments use the series.
[[nodiscard]] inline double exp_scalar_rate(double u) noexcept {
  if (u < kSmallArgThreshold) {
    const double u2 = u * u;
    return -2.0 / 3.0 + 8.0 * u2 / 15.0 - 34.0 * u2 * u2 / 105.0;
  }
  const double ch = std::cosh(u);
  return (u / (ch * ch) - std::tanh(u)) / (u * u * u);
}

// t(w) = artanh(w)/w, the radial scalar of the logarithmic map.
[[nodiscard]] inline double log_scalar(double w) noexcept {
  if (w < kSmallArgThreshold) {
    const double w2 = w * w;
    return 1.0 + w2 / 3.0 + w2 * w2 / 5.0 + w2 * w2 * w2 / 7.0;
  }
  return std::atanh(w) / w;
}

// t'(w)/w = (w/(1−w²) − artanh w)/w³; series for the same cancellation
// reason as exp_scalar_rate.
[[nodiscard]] inline double log_scalar_rate(double w) noexcept {
  if (w < kSmallArgThreshold) {
    const double w2 = w * w;
    return 2.0 / 3.0 + 4.0 * w2 / 5.0 + 6.0 * w2 * w2 / 7.0;
  }
  return (w / (1.0 - w * w) - std::atanh(w)) / (w * w * w);
}

}  // namespace detail

/**
 * @brief Exponential map at the origin.
 *
 * exp_0(v) = (1/√c)·tanh(√c‖v‖)·v/‖v‖, computed as s(√c‖v‖)·v with
 * s(u) = tanh(u)/u so the origin needs no special case. The result passes
 * through the projection policy, which is what clamps boundary-grazing
 * inputs (tanh(√c‖v‖) ≥ 1 − ε).
 */
[[nodiscard]] inline PoincarePoint exp_map_origin(const TangentVector& v,
                                                  Curvature c) {
  if (!v.allFinite()) {
    throw std::invalid_argument("tangent vector must be finite");
  }
  const double u = c.sqrt() * v.norm();
  return PoincarePoint(detail::exp_scalar(u) * v, c);
}

/**
 * @brief Logarithmic map at the origin, inverse of exp_map_origin.
 *
 * log_0(x) = (1/√c)·artanh(√c‖x‖)·x/‖x‖ = t(√c‖x‖)·x with
 * t(w) = artanh(w)/w. The point invariant keeps √c‖x‖ ≤ 1 − ε, so artanh
 * never sees its singularity.
 */
[[nodiscard]] inline TangentVector log_map_origin(const PoincarePoint& x) {
  const double w = x.curvature().sqrt() * x.norm();
  return detail::log_scalar(w) * x.coords();
}

namespace detail {

// Shared core of the Möbius matrix-vector product: the numerator matvec Mx
// is precomputed by the caller, which lets block-diagonal implementations
// reuse the formula without forming a dense matrix.
[[nodiscard]] inline PoincarePoint mobius_from_matvec(Eigen::VectorXd mx,
                                                      const PoincarePoint& x) {
  const double r = x.norm();
  const double mr = mx.norm();
  if (r == 0.0 || mr == 0.0) {
    return PoincarePoint(Eigen::VectorXd::Zero(x.dim()), x.curvature());
  }
  const Curvature c = x.curvature();
  const double arg = (mr / r) * std::atanh(c.sqrt() * r);
  mx *= c.ball_radius() * std::tanh(arg) / mr;
  return PoincarePoint(std::move(mx), c);
}

}  // namespace detail

/**
 * @brief Möbius matrix-vector multiplication M ⊗_c x.
 *
 * M ⊗_c x = (1/√c)·tanh((‖Mx‖/‖x‖)·artanh(√c‖x‖))·Mx/‖Mx‖, which equals
 * exp_0(M·log_0(x)) exactly. x = 0 and Mx = 0 return the origin (the
 * continuous limit).
 */
[[nodiscard]] inline PoincarePoint mobius_matvec(const Eigen::MatrixXd& M,
                                                 const PoincarePoint& x) {
  if (!M.allFinite()) {
    throw std::invalid_argument("matrix must be finite");
  }
  if (M.cols() != x.dim()) {
    throw std::invalid_argument("matrix/point dimension mismatch");
  }
  return detail::mobius_from_matvec(M * x.coords(), x);
}

/**
 * @brief Angle between two points as seen from the origin, in [0, π].
 *
 * arccos(⟨x,y⟩/(‖x‖‖y‖)) with the cosine clamped to [−1, 1] against
 * floating-point overshoot.
 */
[[nodiscard]] inline double angle_at_origin(const PoincarePoint& x,
                                            const PoincarePoint& y) {
  if (!(x.curvature() == y.curvature())) {
    throw std::invalid_argument("angle requires matching curvatures");
  }
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx == 0.0 || ny == 0.0) {
    throw std::domain_error("angle at origin is undefined for a zero point");
  }
  const double cosine = x.coords().dot(y.coords()) / (nx * ny);
  return std::acos(std::clamp(cosine, -1.0, 1.0));
}

/**
 * @brief Geodesic distance from the origin, Rad(x) = (2/√c)·artanh(√c‖x‖).
 *
 * Strictly increasing in ‖x‖; Rad(exp_0(v)) = 2‖v‖ on unclamped inputs.
 */
[[nodiscard]] inline double hyperbolic_radius(const PoincarePoint& x) {
  const Curvature c = x.curvature();
  return 2.0 * c.ball_radius() * std::atanh(c.sqrt() * x.norm());
}

/**
 * @brief Pullback of a gradient through exp_map_origin (projection included).
 *
 * Unclamped branch: the Jacobian is s(u)·I + c·B(u)·vvᵀ with u = √c‖v‖ and
 * B(u) = (u·sech²u − tanh u)/u³, so
 *   v̄ = s(u)·ḡ + c·B(u)·⟨v, ḡ⟩·v.
 * Clamped branch (tanh u ≥ 1 − ε): the forward output is k·v/‖v‖ with
 * k = (1 − ε)/√c, whose Jacobian is (k/‖v‖)(I − v̂v̂ᵀ).
 */
[[nodiscard]] inline TangentVector exp_map_origin_vjp(
    const TangentVector& v, const TangentVector& grad_out, Curvature c) {
  if (v.size() != grad_out.size()) {
    throw std::invalid_argument("gradient/input dimension mismatch");
  }
  const double r = v.norm();
  const double u = c.sqrt() * r;
  if (std::tanh(u) >= 1.0 - kBallMargin) {
    const double k = (1.0 - kBallMargin) * c.ball_radius();
    const Eigen::VectorXd vhat = v / r;
    return (k / r) * (grad_out - vhat.dot(grad_out) * vhat);
  }
  return detail::exp_scalar(u) * grad_out +
         c.value() * detail::exp_scalar_rate(u) * v.dot(grad_out) * v;
}

/**
 * @brief Pullback of a gradient through log_map_origin.
 *
 * The Jacobian is t(w)·I + c·G(w)·xxᵀ with w = √c‖x‖ and
 * G(w) = (w/(1−w²) − artanh w)/w³, so
 *   x̄ = t(w)·ḡ + c·G(w)·⟨x, ḡ⟩·x.
 */
[[nodiscard]] inline TangentVector log_map_origin_vjp(
    const PoincarePoint& x, const TangentVector& grad_out) {
  if (x.dim() != grad_out.size()) {
    throw std::invalid_argument("gradient/input dimension mismatch");
  }
  const Curvature c = x.curvature();
  const double w = c.sqrt() * x.norm();
  return detail::log_scalar(w) * grad_out +
         c.value() * detail::log_scalar_rate(w) * x.coords().dot(grad_out) *
             x.coords();
}

}  // namespace hyro
