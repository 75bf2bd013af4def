// include/hyro/rotation.hpp
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hyro/ball.hpp"

namespace hyro {

namespace opcount {

// Model operation counts for cost-shape assertions (not wall-clock):
// cayley_flops grows by n³ per block materialized, rotate_madds by n² per
// block applied. Thread-local so parallel tests do not race.
inline thread_local std::uint64_t cayley_flops = 0;
inline thread_local std::uint64_t rotate_madds = 0;

inline void reset() noexcept {
  cayley_flops = 0;
  rotate_madds = 0;
}

}  // namespace opcount

/**
 * @brief Cayley transform of an unconstrained square matrix.
 *
 * A = Θ − Θᵀ (skew-symmetric), R = (I + A)(I − A)⁻¹. A skew A has a purely
 * imaginary spectrum, so I − A is always invertible and the solve is
 * well-conditioned (σ_min ≥ 1). The image is special orthogonal: det R = +1,
 * and rotations with eigenvalue −1 (angle exactly π in some plane) are the
 * one unreachable set.
 */
[[nodiscard]] inline Eigen::MatrixXd cayley_block(const Eigen::MatrixXd& theta) {
  if (theta.rows() != theta.cols()) {
    throw std::invalid_argument("cayley_block requires a square matrix");
  }
  if (!theta.allFinite()) {
    throw std::invalid_argument("cayley_block requires finite entries");
  }
  const auto n = theta.rows();
  const Eigen::MatrixXd A = theta - theta.transpose();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  opcount::cayley_flops += static_cast<std::uint64_t>(n) * n * n;
  return Eigen::PartialPivLU<Eigen::MatrixXd>(I - A).solve(I + A);
}

/**
 * @brief Pullback of a gradient through cayley_block.
 *
 * With A = Θ − Θᵀ and R = (I + A)(I − A)⁻¹, the adjoint of dR = (I+R)·dA·(I−A)⁻¹
 * is Ā = (I + R)ᵀ·Ḡ_R·(I − A)⁻ᵀ, and dA = dΘ − dΘᵀ gives Ḡ_Θ = Ā − Āᵀ.
 */
[[nodiscard]] inline Eigen::MatrixXd cayley_vjp(const Eigen::MatrixXd& theta,
                                                const Eigen::MatrixXd& grad_r) {
  if (theta.rows() != theta.cols() || grad_r.rows() != grad_r.cols() ||
      theta.rows() != grad_r.rows()) {
    throw std::invalid_argument("cayley_vjp shape mismatch");
  }
  const auto n = theta.rows();
  const Eigen::MatrixXd A = theta - theta.transpose();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd R =
      Eigen::PartialPivLU<Eigen::MatrixXd>(I - A).solve(I + A);
  const Eigen::MatrixXd C = (I + R).transpose() * grad_r;
  // B = C·(I−A)⁻ᵀ, obtained from the solve (I−A)·Bᵀ = Cᵀ.
  const Eigen::MatrixXd B =
      Eigen::PartialPivLU<Eigen::MatrixXd>(I - A).solve(C.transpose()).transpose();
  return B - B.transpose();
}

/**
 * @brief Block-diagonal orthogonal matrix parameterized by unconstrained
 * per-block matrices Θ_k through the Cayley transform.
 *
 * Coordinates [k·n, (k+1)·n) form block k. The orthogonal blocks are
 * materialized lazily from Θ and cached; any Θ mutation invalidates the
 * cache. The dense d×d matrix is never formed. Mutation is single-writer;
 * concurrent readers see the old or the new cache, never a torn one.
 */
class BlockOrthogonal {
 public:
  BlockOrthogonal(int dim, int block_size)
      : n_(block_size), k_(dim / std::max(block_size, 1)) {
    if (dim <= 0 || block_size <= 0 || dim % block_size != 0) {
      throw std::invalid_argument(
          "dimension must be a positive multiple of the block size");
    }
    theta_.assign(static_cast<std::size_t>(k_),
                  Eigen::MatrixXd::Zero(n_, n_));
  }

  BlockOrthogonal(const BlockOrthogonal& other) { copy_from(other); }
  BlockOrthogonal& operator=(const BlockOrthogonal& other) {
    if (this != &other) copy_from(other);
    return *this;
  }

  [[nodiscard]] int dim() const noexcept { return n_ * k_; }
  [[nodiscard]] int block_size() const noexcept { return n_; }
  [[nodiscard]] int num_blocks() const noexcept { return k_; }

  [[nodiscard]] const std::vector<Eigen::MatrixXd>& theta() const noexcept {
    return theta_;
  }

  void set_theta(int block, Eigen::MatrixXd value) {
    if (block < 0 || block >= k_ || value.rows() != n_ || value.cols() != n_) {
      throw std::invalid_argument("set_theta shape mismatch");
    }
    std::lock_guard<std::mutex> lock(cache_mutex_);
    theta_[static_cast<std::size_t>(block)] = std::move(value);
    cache_valid_ = false;
  }

  // Flat layout: blocks in order, each row-major. This is the order the
  // optimizer and the serialization format both use.
  [[nodiscard]] Eigen::VectorXd theta_flat() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(k_) * n_ * n_);
    for (int b = 0; b < k_; ++b) {
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) {
          flat[(static_cast<Eigen::Index>(b) * n_ + i) * n_ + j] =
              theta_[static_cast<std::size_t>(b)](i, j);
        }
      }
    }
    return flat;
  }

  void set_theta_flat(const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(k_) * n_ * n_) {
      throw std::invalid_argument("set_theta_flat size mismatch");
    }
    std::lock_guard<std::mutex> lock(cache_mutex_);
    for (int b = 0; b < k_; ++b) {
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) {
          theta_[static_cast<std::size_t>(b)](i, j) =
              flat[(static_cast<Eigen::Index>(b) * n_ + i) * n_ + j];
        }
      }
    }
    cache_valid_ = false;
  }

  // Materialized orthogonal blocks R_k = cayley_block(Θ_k), by value.
  [[nodiscard]] std::vector<Eigen::MatrixXd> blocks() const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    ensure_cache_locked();
    return cached_r_;
  }

  // Fill the cache without copying it out; used by the microbenchmark.
  void materialize() const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    ensure_cache_locked();
  }

  // Assembled d×d matrix, for oracles and inspection only: the blocks are
  // copied into place, never multiplied at dense size.
  [[nodiscard]] Eigen::MatrixXd to_dense() const {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    ensure_cache_locked();
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(dim(), dim());
    for (int b = 0; b < k_; ++b) {
      dense.block(static_cast<Eigen::Index>(b) * n_,
                  static_cast<Eigen::Index>(b) * n_, n_, n_) =
          cached_r_[static_cast<std::size_t>(b)];
    }
    return dense;
  }

  // y = R·v, applied block by block.
  [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    check_dim(v.size());
    std::lock_guard<std::mutex> lock(cache_mutex_);
    ensure_cache_locked();
    Eigen::VectorXd out(v.size());
    for (int b = 0; b < k_; ++b) {
      out.segment(static_cast<Eigen::Index>(b) * n_, n_).noalias() =
          cached_r_[static_cast<std::size_t>(b)] *
          v.segment(static_cast<Eigen::Index>(b) * n_, n_);
      opcount::rotate_madds += static_cast<std::uint64_t>(n_) * n_;
    }
    return out;
  }

  // y = Rᵀ·v, the adjoint used by gradient pullbacks.
  [[nodiscard]] Eigen::VectorXd apply_transpose(const Eigen::VectorXd& v) const {
    check_dim(v.size());
    std::lock_guard<std::mutex> lock(cache_mutex_);
    ensure_cache_locked();
    Eigen::VectorXd out(v.size());
    for (int b = 0; b < k_; ++b) {
      out.segment(static_cast<Eigen::Index>(b) * n_, n_).noalias() =
          cached_r_[static_cast<std::size_t>(b)].transpose() *
          v.segment(static_cast<Eigen::Index>(b) * n_, n_);
    }
    return out;
  }

  /**
   * @brief Rotate a ball point: coordinates become R·q directly.
   *
   * For orthogonal R the Möbius product collapses to the plain matvec
   * (‖Rq‖ = ‖q‖ makes the radial factor the identity), so the rotation is
   * an exact hyperbolic isometry fixing the origin: the norm, and with it
   * the hyperbolic radius, is preserved.
   */
  [[nodiscard]] PoincarePoint rotate_point(const PoincarePoint& q) const {
    return PoincarePoint(apply(q.coords()), q.curvature());
  }

 private:
  void check_dim(Eigen::Index size) const {
    if (size != dim()) {
      throw std::invalid_argument("vector dimension does not match rotation");
    }
  }

  void ensure_cache_locked() const {
    if (cache_valid_) return;
    cached_r_.clear();
    cached_r_.reserve(theta_.size());
    for (const auto& t : theta_) {
      cached_r_.push_back(cayley_block(t));
    }
    cache_valid_ = true;
  }

  void copy_from(const BlockOrthogonal& other) {
    std::lock_guard<std::mutex> lock(other.cache_mutex_);
    n_ = other.n_;
    k_ = other.k_;
    theta_ = other.theta_;
    cached_r_ = other.cached_r_;
    cache_valid_ = other.cache_valid_;
  }

  int n_ = 0;
  int k_ = 0;
  std::vector<Eigen::MatrixXd> theta_;
  mutable std::mutex cache_mutex_;
  mutable std::vector<Eigen::MatrixXd> cached_r_;
  mutable bool cache_valid_ = false;
};

}  // namespace hyro
