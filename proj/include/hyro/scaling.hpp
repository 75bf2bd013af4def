// include/hyro/scaling.hpp
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hyro/ball.hpp"

namespace hyro {

/**
 * @brief Block-diagonal learnable scaling matrix S, applied to ball points
 * through the Möbius matrix-vector product to adjust hyperbolic radius.
 *
 * Coordinates [k·b, (k+1)·b) form block k; blocks are dense b×b matrices
 * initialized to the identity (a no-op transform). Same contiguous
 * partition convention as BlockOrthogonal; b and n may differ. An optional
 * diagonal restriction zeroes the off-diagonal entries of every block.
 */
class BlockScaling {
 public:
  BlockScaling(int dim, int block_size)
      : b_(block_size), k_(dim / std::max(block_size, 1)) {
    if (dim <= 0 || block_size <= 0 || dim % block_size != 0) {
      throw std::invalid_argument(
          "dimension must be a positive multiple of the block size");
    }
    blocks_.assign(static_cast<std::size_t>(k_),
                   Eigen::MatrixXd::Identity(b_, b_));
  }

  [[nodiscard]] int dim() const noexcept { return b_ * k_; }
  [[nodiscard]] int block_size() const noexcept { return b_; }
  [[nodiscard]] int num_blocks() const noexcept { return k_; }

  [[nodiscard]] const std::vector<Eigen::MatrixXd>& blocks() const noexcept {
    return blocks_;
  }

  void set_block(int block, Eigen::MatrixXd value) {
    if (block < 0 || block >= k_ || value.rows() != b_ || value.cols() != b_) {
      throw std::invalid_argument("set_block shape mismatch");
    }
    blocks_[static_cast<std::size_t>(block)] = std::move(value);
  }

  // Flat layout mirrors BlockOrthogonal: blocks in order, each row-major.
  [[nodiscard]] Eigen::VectorXd blocks_flat() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(k_) * b_ * b_);
    for (int k = 0; k < k_; ++k) {
      for (int i = 0; i < b_; ++i) {
        for (int j = 0; j < b_; ++j) {
          flat[(static_cast<Eigen::Index>(k) * b_ + i) * b_ + j] =
              blocks_[static_cast<std::size_t>(k)](i, j);
        }
      }
    }
    return flat;
  }

  void set_blocks_flat(const Eigen::VectorXd& flat) {
    if (flat.size() != static_cast<Eigen::Index>(k_) * b_ * b_) {
      throw std::invalid_argument("set_blocks_flat size mismatch");
    }
    for (int k = 0; k < k_; ++k) {
      for (int i = 0; i < b_; ++i) {
        for (int j = 0; j < b_; ++j) {
          blocks_[static_cast<std::size_t>(k)](i, j) =
              flat[(static_cast<Eigen::Index>(k) * b_ + i) * b_ + j];
        }
      }
    }
  }

  // Restrict every block to its diagonal (the strictly-diagonal variant).
  void restrict_to_diagonal() {
    for (auto& block : blocks_) {
      block = block.diagonal().asDiagonal();
    }
  }

  // y = S·u, applied block by block.
  [[nodiscard]] Eigen::VectorXd apply(const Eigen::VectorXd& u) const {
    check_dim(u.size());
    Eigen::VectorXd out(u.size());
    for (int k = 0; k < k_; ++k) {
      out.segment(static_cast<Eigen::Index>(k) * b_, b_).noalias() =
          blocks_[static_cast<std::size_t>(k)] *
          u.segment(static_cast<Eigen::Index>(k) * b_, b_);
    }
    return out;
  }

  // y = Sᵀ·u, the adjoint used by gradient pullbacks.
  [[nodiscard]] Eigen::VectorXd apply_transpose(const Eigen::VectorXd& u) const {
    check_dim(u.size());
    Eigen::VectorXd out(u.size());
    for (int k = 0; k < k_; ++k) {
      out.segment(static_cast<Eigen::Index>(k) * b_, b_).noalias() =
          blocks_[static_cast<std::size_t>(k)].transpose() *
          u.segment(static_cast<Eigen::Index>(k) * b_, b_);
    }
    return out;
  }

 private:
  void check_dim(Eigen::Index size) const {
    if (size != dim()) {
      throw std::invalid_argument("vector dimension does not match scaling");
    }
  }

  int b_ = 0;
  int k_ = 0;
  std::vector<Eigen::MatrixXd> blocks_;
};

/**
 * @brief q = S ⊗_c h: Möbius product with the block-diagonal S.
 *
 * The numerator matvec S·h runs block by block; the radial factor is the
 * shared Möbius core, so the result equals exp_0(S·log_0(h)) and clamps at
 * the boundary under the common projection policy. S·h = 0 returns the
 * origin.
 */
[[nodiscard]] inline PoincarePoint scale_point(const BlockScaling& params,
                                               const PoincarePoint& h) {
  if (params.dim() != h.dim()) {
    throw std::invalid_argument("scaling/point dimension mismatch");
  }
  return detail::mobius_from_matvec(params.apply(h.coords()), h);
}

struct ScaleGrads {
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::VectorXd point;
};

/**
 * @brief Pullback of a gradient through scale_point, for both the block
 * entries and the input point.
 *
 * Differentiates the factorized form exp_0(S·log_0(h)), which is the same
 * function: with u = log_0(h) and w = S·u,
 *   w̄ = exp-VJP(w, ḡ),   S̄_k = w̄_k·u_kᵀ,   ū = Sᵀ·w̄,   h̄ = log-VJP(h, ū).
 */
[[nodiscard]] inline ScaleGrads scale_vjp(const BlockScaling& params,
                                          const PoincarePoint& h,
                                          const Eigen::VectorXd& grad_out) {
  if (params.dim() != h.dim() || grad_out.size() != h.dim()) {
    throw std::invalid_argument("scale_vjp shape mismatch");
  }
  const Curvature c = h.curvature();
  const Eigen::VectorXd u = log_map_origin(h);
  const Eigen::VectorXd w = params.apply(u);
  const Eigen::VectorXd wbar = exp_map_origin_vjp(w, grad_out, c);

  ScaleGrads grads;
  const int b = params.block_size();
  grads.blocks.reserve(static_cast<std::size_t>(params.num_blocks()));
  for (int k = 0; k < params.num_blocks(); ++k) {
    grads.blocks.push_back(
        wbar.segment(static_cast<Eigen::Index>(k) * b, b) *
        u.segment(static_cast<Eigen::Index>(k) * b, b).transpose());
  }
  grads.point = log_map_origin_vjp(h, params.apply_transpose(wbar));
  return grads;
}

}  // namespace hyro
