// include/hyro/pipeline.hpp
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyro/ball.hpp"
#include "hyro/rotation.hpp"
#include "hyro/scaling.hpp"

namespace hyro {

inline constexpr int kParamsFormatVersion = 1;

/**
 * @brief Parameters of the refinement transform x' = log_0(R·(S ⊗_c exp_0(x))).
 *
 * Rotation and scaling act on the same d coordinates; their block sizes may
 * differ. Freshly constructed parameters are the identity transform
 * (Θ = 0, S = I).
 */
class HyroParams {
 public:
  HyroParams(Curvature c, BlockOrthogonal rotation, BlockScaling scaling)
      : c_(c), rotation_(std::move(rotation)), scaling_(std::move(scaling)) {
    if (rotation_.dim() != scaling_.dim()) {
      throw std::invalid_argument(
          "rotation and scaling must share the same dimension");
    }
  }

  HyroParams(Curvature c, int dim, int rotation_block, int scaling_block)
      : HyroParams(c, BlockOrthogonal(dim, rotation_block),
                   BlockScaling(dim, scaling_block)) {}

  [[nodiscard]] Curvature curvature() const noexcept { return c_; }
  [[nodiscard]] int dim() const noexcept { return rotation_.dim(); }
  [[nodiscard]] const BlockOrthogonal& rotation() const noexcept {
    return rotation_;
  }
  [[nodiscard]] BlockOrthogonal& rotation() noexcept { return rotation_; }
  [[nodiscard]] const BlockScaling& scaling() const noexcept {
    return scaling_;
  }
  [[nodiscard]] BlockScaling& scaling() noexcept { return scaling_; }

 private:
  Curvature c_;
  BlockOrthogonal rotation_;
  BlockScaling scaling_;
};

struct EmbeddingBatch {
  enum class Role { visual, textual };

  Eigen::MatrixXd rows;  // N × d, one embedding per row
  Role role = Role::visual;
};

/**
 * @brief Apply the transform to one tangent row.
 *
 * exp into the ball (projection included), Möbius-scale, rotate, log back
 * to the tangent space at the origin.
 */
[[nodiscard]] inline Eigen::VectorXd hyro_forward_row(const HyroParams& params,
                                                      const Eigen::VectorXd& x) {
  const PoincarePoint lifted = exp_map_origin(x, params.curvature());
  const PoincarePoint scaled = scale_point(params.scaling(), lifted);
  const PoincarePoint rotated = params.rotation().rotate_point(scaled);
  return log_map_origin(rotated);
}

/**
 * @brief Transform every row of a batch. Rows are independent: the batch
 * result is exactly the per-row results stacked.
 */
[[nodiscard]] inline EmbeddingBatch hyro_forward(const HyroParams& params,
                                                 const EmbeddingBatch& batch) {
  if (batch.rows.cols() != params.dim()) {
    throw std::invalid_argument("batch dimension does not match parameters");
  }
  if (!batch.rows.allFinite()) {
    throw std::invalid_argument("batch must be finite");
  }
  EmbeddingBatch out;
  out.role = batch.role;
  out.rows.resize(batch.rows.rows(), batch.rows.cols());
  for (Eigen::Index i = 0; i < batch.rows.rows(); ++i) {
    out.rows.row(i) = hyro_forward_row(params, batch.rows.row(i)).transpose();
  }
  return out;
}

// Forward pass that also reports the hyperbolic radius of every row after
// the scaling stage and after the rotation stage. The rotation is an
// isometry fixing the origin, so the two columns agree to roundoff; the
// training log's drift metric is their mean absolute difference.
struct PipelineTrace {
  Eigen::MatrixXd out;
  Eigen::VectorXd radius_after_scale;
  Eigen::VectorXd radius_after_rotation;
};

[[nodiscard]] inline PipelineTrace hyro_forward_traced(
    const HyroParams& params, const EmbeddingBatch& batch) {
  if (batch.rows.cols() != params.dim()) {
    throw std::invalid_argument("batch dimension does not match parameters");
  }
  if (!batch.rows.allFinite()) {
    throw std::invalid_argument("batch must be finite");
  }
  PipelineTrace trace;
  const Eigen::Index n = batch.rows.rows();
  trace.out.resize(n, batch.rows.cols());
  trace.radius_after_scale.resize(n);
  trace.radius_after_rotation.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const PoincarePoint lifted =
        exp_map_origin(batch.rows.row(i), params.curvature());
    const PoincarePoint scaled = scale_point(params.scaling(), lifted);
    const PoincarePoint rotated = params.rotation().rotate_point(scaled);
    trace.radius_after_scale[i] = hyperbolic_radius(scaled);
    trace.radius_after_rotation[i] = hyperbolic_radius(rotated);
    trace.out.row(i) = log_map_origin(rotated).transpose();
  }
  return trace;
}

struct HyroGrads {
  std::vector<Eigen::MatrixXd> theta_blocks;
  std::vector<Eigen::MatrixXd> scaling_blocks;
  Eigen::MatrixXd batch;
};

/**
 * @brief Pullback of per-row upstream gradients through the whole transform.
 *
 * Chains the log, rotation, scaling, and exp pullbacks per row; parameter
 * gradients accumulate over rows. For the rotation stage the gradient on
 * block R_k is the outer product of the pulled-back row segment with the
 * pre-rotation segment, which then maps to Θ_k through the Cayley pullback.
 */
[[nodiscard]] inline HyroGrads hyro_vjp(const HyroParams& params,
                                        const EmbeddingBatch& batch,
                                        const Eigen::MatrixXd& upstream) {
  if (batch.rows.cols() != params.dim() ||
      upstream.rows() != batch.rows.rows() ||
      upstream.cols() != batch.rows.cols()) {
    throw std::invalid_argument("hyro_vjp shape mismatch");
  }
  const Curvature c = params.curvature();
  const BlockOrthogonal& rot = params.rotation();
  const BlockScaling& sc = params.scaling();
  const int n = rot.block_size();

  HyroGrads grads;
  grads.theta_blocks.assign(static_cast<std::size_t>(rot.num_blocks()),
                            Eigen::MatrixXd::Zero(n, n));
  std::vector<Eigen::MatrixXd> r_grads(
      static_cast<std::size_t>(rot.num_blocks()), Eigen::MatrixXd::Zero(n, n));
  grads.scaling_blocks.assign(
      static_cast<std::size_t>(sc.num_blocks()),
      Eigen::MatrixXd::Zero(sc.block_size(), sc.block_size()));
  grads.batch.resize(batch.rows.rows(), batch.rows.cols());

  for (Eigen::Index i = 0; i < batch.rows.rows(); ++i) {
    const Eigen::VectorXd x = batch.rows.row(i);
    const PoincarePoint lifted = exp_map_origin(x, c);
    const PoincarePoint scaled = scale_point(sc, lifted);
    const PoincarePoint rotated = rot.rotate_point(scaled);

    const Eigen::VectorXd gbar = upstream.row(i);
    const Eigen::VectorXd ybar = log_map_origin_vjp(rotated, gbar);
    for (int b = 0; b < rot.num_blocks(); ++b) {
      r_grads[static_cast<std::size_t>(b)].noalias() +=
          ybar.segment(static_cast<Eigen::Index>(b) * n, n) *
          scaled.coords().segment(static_cast<Eigen::Index>(b) * n, n)
              .transpose();
    }
    const Eigen::VectorXd qbar = rot.apply_transpose(ybar);
    const ScaleGrads sgrads = scale_vjp(sc, lifted, qbar);
    for (std::size_t k = 0; k < sgrads.blocks.size(); ++k) {
      grads.scaling_blocks[k].noalias() += sgrads.blocks[k];
    }
    grads.batch.row(i) = exp_map_origin_vjp(x, sgrads.point, c).transpose();
  }

  for (int b = 0; b < rot.num_blocks(); ++b) {
    grads.theta_blocks[static_cast<std::size_t>(b)] = cayley_vjp(
        rot.theta()[static_cast<std::size_t>(b)],
        r_grads[static_cast<std::size_t>(b)]);
  }
  return grads;
}

namespace detail {

[[nodiscard]] inline nlohmann::json blocks_to_json(
    const std::vector<Eigen::MatrixXd>& blocks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& block : blocks) {
    nlohmann::json flat = nlohmann::json::array();
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      for (Eigen::Index j = 0; j < block.cols(); ++j) {
        flat.push_back(block(i, j));
      }
    }
    arr.push_back(std::move(flat));
  }
  return arr;
}

[[nodiscard]] inline std::vector<Eigen::MatrixXd> blocks_from_json(
    const nlohmann::json& arr, int block_size, int expected_count,
    const std::string& what) {
  if (!arr.is_array() || static_cast<int>(arr.size()) != expected_count) {
    throw std::invalid_argument(what + ": expected " +
                                std::to_string(expected_count) + " blocks");
  }
  std::vector<Eigen::MatrixXd> blocks;
  blocks.reserve(arr.size());
  for (const auto& flat : arr) {
    if (!flat.is_array() ||
        static_cast<int>(flat.size()) != block_size * block_size) {
      throw std::invalid_argument(what + ": block entry count must be " +
                                  std::to_string(block_size * block_size));
    }
    Eigen::MatrixXd block(block_size, block_size);
    int idx = 0;
    for (Eigen::Index i = 0; i < block_size; ++i) {
      for (Eigen::Index j = 0; j < block_size; ++j) {
        if (!flat[idx].is_number()) {
          throw std::invalid_argument(what + ": block entries must be numbers");
        }
        block(i, j) = flat[idx].get<double>();
        ++idx;
      }
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

}  // namespace detail

/**
 * @brief Serialize parameters. Blocks are stored row-major; numbers print
 * with shortest-round-trip precision, so a parse of the output recovers
 * every double bit-exactly.
 */
[[nodiscard]] inline nlohmann::json params_to_json(const HyroParams& params) {
  nlohmann::json j;
  j["format_version"] = kParamsFormatVersion;
  j["curvature"] = params.curvature().value();
  j["dim"] = params.dim();
  j["rotation"] = {{"block_size", params.rotation().block_size()},
                   {"theta_blocks", detail::blocks_to_json(params.rotation().theta())}};
  j["scaling"] = {{"block_size", params.scaling().block_size()},
                  {"blocks", detail::blocks_to_json(params.scaling().blocks())}};
  return j;
}

[[nodiscard]] inline HyroParams params_from_json(const nlohmann::json& j) {
  for (const char* field :
       {"format_version", "curvature", "dim", "rotation", "scaling"}) {
    if (!j.contains(field)) {
      throw std::invalid_argument(std::string("missing field: ") + field);
    }
  }
  if (!j["format_version"].is_number_integer() ||
      j["format_version"].get<int>() != kParamsFormatVersion) {
    throw std::invalid_argument("unsupported format_version, expected " +
                                std::to_string(kParamsFormatVersion));
  }
  if (!j["curvature"].is_number() || !j["dim"].is_number_integer()) {
    throw std::invalid_argument("curvature must be a number and dim an integer");
  }
  const Curvature c(j["curvature"].get<double>());
  const int dim = j["dim"].get<int>();

  const auto& jr = j["rotation"];
  const auto& js = j["scaling"];
  if (!jr.contains("block_size") || !jr.contains("theta_blocks")) {
    throw std::invalid_argument("rotation: missing block_size or theta_blocks");
  }
  if (!js.contains("block_size") || !js.contains("blocks")) {
    throw std::invalid_argument("scaling: missing block_size or blocks");
  }
  const int n = jr["block_size"].get<int>();
  const int b = js["block_size"].get<int>();
  if (n <= 0 || b <= 0 || dim % n != 0 || dim % b != 0) {
    throw std::invalid_argument(
        "dim must be a positive multiple of both block sizes");
  }

  BlockOrthogonal rotation(dim, n);
  const auto theta =
      detail::blocks_from_json(jr["theta_blocks"], n, dim / n, "rotation");
  for (int k = 0; k < dim / n; ++k) {
    rotation.set_theta(k, theta[static_cast<std::size_t>(k)]);
  }
  BlockScaling scaling(dim, b);
  const auto blocks =
      detail::blocks_from_json(js["blocks"], b, dim / b, "scaling");
  for (int k = 0; k < dim / b; ++k) {
    scaling.set_block(k, blocks[static_cast<std::size_t>(k)]);
  }
  return HyroParams(c, std::move(rotation), std::move(scaling));
}

}  // namespace hyro
