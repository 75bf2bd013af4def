// include/hyro/costvolume.hpp
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "hyro/pipeline.hpp"

namespace hyro {

// Cosine entries live in [−1, 1]; this slack absorbs roundoff overshoot.
inline constexpr double kCosineSlack = 1e-12;

using CostVolume = Eigen::MatrixXd;  // rows × classes, entries in [−1, 1]
using Labels = std::vector<int>;     // one 0-based class index per row

/**
 * @brief Cosine similarity between every visual row and every textual row.
 *
 * C(i, n) = ⟨v_i, t_n⟩ / (‖v_i‖·‖t_n‖). Zero-norm rows have no direction
 * and are rejected.
 */
[[nodiscard]] inline CostVolume cost_volume(const EmbeddingBatch& visual,
                                            const EmbeddingBatch& textual) {
  if (visual.rows.cols() != textual.rows.cols()) {
    throw std::invalid_argument("embedding dimensions must match");
  }
  const Eigen::VectorXd vn = visual.rows.rowwise().norm();
  const Eigen::VectorXd tn = textual.rows.rowwise().norm();
  if ((vn.array() == 0.0).any() || (tn.array() == 0.0).any()) {
    throw std::domain_error("zero-norm embedding row has no direction");
  }
  CostVolume c = visual.rows * textual.rows.transpose();
  c.array().colwise() /= vn.array();
  c.array().rowwise() /= tn.transpose().array();
  return c;
}

struct CostGrads {
  Eigen::MatrixXd visual;
  Eigen::MatrixXd textual;
};

/**
 * @brief Pullback of a gradient on the cost volume to both embedding sets.
 *
 * Per entry, ∂C(i,n)/∂v_i = (t̂_n − C(i,n)·v̂_i)/‖v_i‖ and symmetrically for
 * t_n, which accumulates to
 *   v̄_i = (Σ_n Ḡ(i,n)·t̂_n − (Σ_n Ḡ(i,n)·C(i,n))·v̂_i) / ‖v_i‖.
 */
[[nodiscard]] inline CostGrads cost_volume_vjp(const EmbeddingBatch& visual,
                                               const EmbeddingBatch& textual,
                                               const Eigen::MatrixXd& upstream) {
  const CostVolume c = cost_volume(visual, textual);
  if (upstream.rows() != c.rows() || upstream.cols() != c.cols()) {
    throw std::invalid_argument("upstream shape does not match cost volume");
  }
  const Eigen::VectorXd vn = visual.rows.rowwise().norm();
  const Eigen::VectorXd tn = textual.rows.rowwise().norm();
  const Eigen::MatrixXd vhat = visual.rows.array().colwise() / vn.array();
  const Eigen::MatrixXd that = textual.rows.array().colwise() / tn.array();

  CostGrads grads;
  grads.visual =
      (upstream * that - ((upstream.array() * c.array()).rowwise().sum().matrix())
                             .asDiagonal() *
                             vhat)
          .array()
          .colwise() /
      vn.array();
  grads.textual =
      (upstream.transpose() * vhat -
       ((upstream.array() * c.array()).colwise().sum().transpose().matrix())
               .asDiagonal() *
           that)
          .array()
          .colwise() /
      tn.array();
  return grads;
}

struct CeResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_on_cost;
};

/**
 * @brief Temperature-scaled softmax cross-entropy over cost rows.
 *
 * loss = −(1/N)·Σ_i log softmax(C(i,·)/τ)[y_i], evaluated through a
 * log-sum-exp so saturated rows stay exact; the gradient per row is
 * (softmax − onehot)/(N·τ). τ = 1 recovers the plain formula.
 */
[[nodiscard]] inline CeResult ce_loss(const CostVolume& cost,
                                      const Labels& labels, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("temperature must be positive");
  }
  if (static_cast<Eigen::Index>(labels.size()) != cost.rows()) {
    throw std::invalid_argument("one label per cost row required");
  }
  if ((cost.array().abs() > 1.0 + kCosineSlack).any()) {
    throw std::invalid_argument("cost entries must be cosines in [-1, 1]");
  }
  const Eigen::Index n = cost.rows();
  const Eigen::Index classes = cost.cols();
  CeResult result;
  result.grad_on_cost.resize(n, classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes) {
      throw std::invalid_argument("label index out of range");
    }
    const Eigen::VectorXd z = cost.row(i) / temperature;
    const double zmax = z.maxCoeff();
    const Eigen::VectorXd shifted = (z.array() - zmax).exp();
    const double denom = shifted.sum();
    result.loss += (zmax + std::log(denom)) - z[y];
    result.grad_on_cost.row(i) = shifted.transpose() / denom;
    result.grad_on_cost(i, y) -= 1.0;
  }
  result.loss /= static_cast<double>(n);
  result.grad_on_cost /= static_cast<double>(n) * temperature;
  return result;
}

/**
 * @brief Fraction of rows whose argmax matches the label; ties break toward
 * the lowest class index.
 */
[[nodiscard]] inline double accuracy(const CostVolume& cost,
                                     const Labels& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != cost.rows()) {
    throw std::invalid_argument("one label per cost row required");
  }
  for (const int label : labels) {
    if (label < 0 || static_cast<Eigen::Index>(label) >= cost.cols()) {
      throw std::invalid_argument("label outside the cost-volume columns");
    }
  }
  if (cost.rows() == 0) return 0.0;
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < cost.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < cost.cols(); ++j) {
      if (cost(i, j) > cost(i, best)) best = j;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(cost.rows());
}

}  // namespace hyro
