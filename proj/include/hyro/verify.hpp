// include/hyro/verify.hpp
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hyro/ball.hpp"
#include "hyro/costvolume.hpp"
#include "hyro/gradcheck.hpp"
#include "hyro/pipeline.hpp"
#include "hyro/rotation.hpp"
#include "hyro/scaling.hpp"

namespace hyro {

// Runtime invariant suite behind the `verify` subcommand: each property
// samples randomized cases and reports its worst observed error against the
// documented tolerance.
struct PropertyResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;
  double tolerance = 0.0;
};

struct VerifyOptions {
  int dim = 8;
  int rotation_block = 4;
  int scaling_block = 4;
  double curvature = 0.01;
  int cases = 300;
  std::uint64_t seed = 42;
};

namespace detail {

struct PropertyRecorder {
  std::vector<PropertyResult> results;

  void record(const std::string& name, double worst, double tolerance) {
    results.push_back({name, worst <= tolerance, worst, tolerance});
  }
};

[[nodiscard]] inline double rel_norm_diff(const Eigen::VectorXd& a,
                                          const Eigen::VectorXd& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-8});
}

}  // namespace detail

[[nodiscard]] inline std::vector<PropertyResult> run_verify_suite(
    const VerifyOptions& opts) {
  if (opts.dim <= 0 || opts.rotation_block <= 0 || opts.scaling_block <= 0 ||
      opts.dim % opts.rotation_block != 0 ||
      opts.dim % opts.scaling_block != 0) {
    throw std::invalid_argument(
        "dim must be a positive multiple of both block sizes");
  }
  if (opts.cases <= 0) {
    throw std::invalid_argument("cases must be positive");
  }
  const Curvature c(opts.curvature);
  const int d = opts.dim;
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto gauss = [&](Eigen::Index size) {
    Eigen::VectorXd v(size);
    for (Eigen::Index i = 0; i < size; ++i) v[i] = normal(rng);
    return v;
  };
  detail::PropertyRecorder rec;

  {  // exp/log round trip across moderate norms (unclamped by construction)
    double worst = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      Eigen::VectorXd v = gauss(d);
      v *= (unit(rng) * 5.0 / c.sqrt()) / v.norm();
      const Eigen::VectorXd back = log_map_origin(exp_map_origin(v, c));
      worst = std::max(worst, (back - v).norm() / (1.0 + v.norm()));
    }
    rec.record("ball.round_trip", worst, 1e-6);
  }
  {  // containment of exp outputs, including boundary-clamped inputs
    double worst = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      Eigen::VectorXd v = gauss(d);
      v *= (unit(rng) * 100.0) / v.norm();
      const PoincarePoint p = exp_map_origin(v, c);
      worst = std::max(worst, c.value() * p.norm() * p.norm());
    }
    rec.record("ball.containment", worst, 1.0 - 1e-12);
  }
  {  // Möbius product equals exp∘matvec∘log
    double worst = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      Eigen::MatrixXd m(d, d);
      for (Eigen::Index r = 0; r < d; ++r) m.row(r) = gauss(d).transpose();
      Eigen::VectorXd x = gauss(d);
      x *= (unit(rng) * 0.9 / c.sqrt()) / x.norm();
      const PoincarePoint p(x, c);
      worst = std::max(
          worst, detail::rel_norm_diff(
                     mobius_matvec(m, p).coords(),
                     exp_map_origin(m * log_map_origin(p), c).coords()));
    }
    rec.record("ball.mobius_factorization", worst, 1e-9);
  }
  {  // scalar-diagonal law: λI ⊗ exp(v) = exp(λv)
    double worst = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      Eigen::VectorXd v = gauss(d);
      v *= (unit(rng) * 2.0) / v.norm();
      const double lambda = 0.25 + 2.0 * unit(rng);
      const Eigen::MatrixXd m = lambda * Eigen::MatrixXd::Identity(d, d);
      worst = std::max(
          worst, detail::rel_norm_diff(
                     mobius_matvec(m, exp_map_origin(v, c)).coords(),
                     exp_map_origin(lambda * v, c).coords()));
    }
    rec.record("ball.scalar_diagonal_law", worst, 1e-9);
  }
  {  // conformality: angles at the origin equal Euclidean tangent angles
    double worst = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      Eigen::VectorXd u = gauss(d);
      Eigen::VectorXd v = gauss(d);
      u *= (0.1 + unit(rng)) / u.norm();
      v *= (0.1 + unit(rng)) / v.norm();
      const double tangent =
          std::acos(std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0));
      const double ball_angle =
          angle_at_origin(exp_map_origin(u, c), exp_map_origin(v, c));
      worst = std::max(worst, std::abs(tangent - ball_angle));
    }
    rec.record("ball.conformality", worst, 1e-9);
  }
  {  // hyperbolic radius strictly increasing in the Euclidean norm
    double worst = 0.0;
    const Eigen::VectorXd dir = gauss(d).normalized();
    double prev = -1.0;
    for (int i = 0; i < 200; ++i) {
      const double r =
          (static_cast<double>(i + 1) / 201.0) * (1.0 - kBallMargin) *
          c.ball_radius();
      const double rad = hyperbolic_radius(PoincarePoint(r * dir, c));
      worst = std::max(worst, prev - rad);
      prev = rad;
    }
    rec.record("ball.radius_monotonic", worst, 0.0);
  }
  {  // Cayley image orthogonality and unit determinant
    double worst = 0.0;
    std::uniform_real_distribution<double> entries(-2.0, 2.0);
    for (int i = 0; i < opts.cases; ++i) {
      const int n = opts.rotation_block;
      Eigen::MatrixXd theta(n, n);
      for (int r = 0; r < n; ++r) {
        for (int q = 0; q < n; ++q) theta(r, q) = entries(rng);
      }
      const Eigen::MatrixXd r = cayley_block(theta);
      worst = std::max(
          worst,
          (r.transpose() * r - Eigen::MatrixXd::Identity(n, n)).norm());
      worst = std::max(worst, std::abs(r.determinant() - 1.0) * 1e-2);
    }
    rec.record("rotation.orthogonality", worst, 1e-10);
  }
  {  // rotation preserves the Euclidean norm and hyperbolic radius
    double worst_norm = 0.0;
    double worst_rad = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      BlockOrthogonal rot(d, opts.rotation_block);
      rot.set_theta_flat(gauss(rot.theta_flat().size()));
      Eigen::VectorXd v = gauss(d);
      v *= (unit(rng) * 5.0 / c.sqrt()) / v.norm();
      const PoincarePoint q = exp_map_origin(v, c);
      const PoincarePoint rq = rot.rotate_point(q);
      worst_norm = std::max(worst_norm, std::abs(rq.norm() - q.norm()));
      worst_rad = std::max(
          worst_rad, std::abs(hyperbolic_radius(rq) - hyperbolic_radius(q)));
    }
    rec.record("rotation.norm_preservation", worst_norm, 1e-12);
    rec.record("rotation.radius_invariance", worst_rad, 1e-10);
  }
  {  // exp commutes with rotation: exp(Rv) = R·exp(v)
    double worst = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      BlockOrthogonal rot(d, opts.rotation_block);
      rot.set_theta_flat(gauss(rot.theta_flat().size()));
      Eigen::VectorXd v = gauss(d);
      v *= (unit(rng) * 5.0 / c.sqrt()) / v.norm();
      worst = std::max(
          worst,
          detail::rel_norm_diff(
              exp_map_origin(rot.apply(v), c).coords(),
              rot.rotate_point(exp_map_origin(v, c)).coords()));
    }
    rec.record("rotation.exp_commutation", worst, 1e-10);
  }
  {  // block structure: materialization cost is num_blocks·n³ model flops
    opcount::reset();
    BlockOrthogonal rot(d, opts.rotation_block);
    rot.set_theta_flat(gauss(rot.theta_flat().size()));
    rot.materialize();
    const auto n64 = static_cast<std::uint64_t>(opts.rotation_block);
    const auto expected =
        static_cast<std::uint64_t>(rot.num_blocks()) * n64 * n64 * n64;
    rec.record("rotation.block_structure",
               opcount::cayley_flops == expected ? 0.0 : 1.0, 0.0);
  }
  {  // scaling factorizes through exp/log and moves radius directionally
    double worst = 0.0;
    for (int i = 0; i < opts.cases; ++i) {
      BlockScaling sc(d, opts.scaling_block);
      Eigen::VectorXd flat = sc.blocks_flat();
      flat += 0.3 * gauss(flat.size());
      sc.set_blocks_flat(flat);
      Eigen::VectorXd v = gauss(d);
      v *= (unit(rng) * 2.0) / v.norm();
      const PoincarePoint h = exp_map_origin(v, c);
      Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(d, d);
      for (int k = 0; k < sc.num_blocks(); ++k) {
        dense.block(k * opts.scaling_block, k * opts.scaling_block,
                    opts.scaling_block, opts.scaling_block) =
            sc.blocks()[static_cast<std::size_t>(k)];
      }
      worst = std::max(
          worst,
          detail::rel_norm_diff(
              scale_point(sc, h).coords(),
              exp_map_origin(dense * log_map_origin(h), c).coords()));
    }
    rec.record("scaling.factorization", worst, 1e-9);

    double worst_dir = 0.0;
    bool radius_ok = true;
    for (int i = 0; i < 50; ++i) {
      Eigen::VectorXd v = gauss(d);
      v *= (0.5 + unit(rng)) / v.norm();
      const PoincarePoint h = exp_map_origin(v, c);
      BlockScaling up(d, opts.scaling_block);
      BlockScaling down(d, opts.scaling_block);
      Eigen::VectorXd uflat = up.blocks_flat() * 1.7;
      Eigen::VectorXd dflat = down.blocks_flat() * 0.6;
      up.set_blocks_flat(uflat);
      down.set_blocks_flat(dflat);
      radius_ok = radius_ok &&
                  hyperbolic_radius(scale_point(up, h)) > hyperbolic_radius(h) &&
                  hyperbolic_radius(scale_point(down, h)) < hyperbolic_radius(h);
      const Eigen::VectorXd scaled = scale_point(up, h).coords();
      worst_dir = std::max(
          worst_dir,
          (scaled / scaled.norm() - h.coords() / h.norm()).norm());
    }
    rec.record("scaling.radius_direction", radius_ok ? 0.0 : 1.0, 0.0);
    rec.record("scaling.direction_preserved", worst_dir, 1e-12);
  }
  {  // identity parameters give the identity pipeline
    HyroParams params(c, d, opts.rotation_block, opts.scaling_block);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      Eigen::VectorXd v = gauss(d);
      v *= (unit(rng) * 2.0) / v.norm();
      worst = std::max(worst,
                       (hyro_forward_row(params, v) - v).norm() /
                           (1.0 + v.norm()));
    }
    rec.record("pipeline.identity", worst, 1e-9);
  }
  {  // radius decoupling: rotation leaves the post-scaling radius unchanged
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      HyroParams params(c, d, opts.rotation_block, opts.scaling_block);
      params.rotation().set_theta_flat(
          gauss(params.rotation().theta_flat().size()));
      Eigen::VectorXd flat = params.scaling().blocks_flat();
      flat += 0.3 * gauss(flat.size());
      params.scaling().set_blocks_flat(flat);
      EmbeddingBatch batch;
      batch.rows.resize(4, d);
      for (int r = 0; r < 4; ++r) {
        Eigen::VectorXd v = gauss(d);
        batch.rows.row(r) = (v * (unit(rng) * 2.0) / v.norm()).transpose();
      }
      const PipelineTrace trace = hyro_forward_traced(params, batch);
      worst = std::max(worst, (trace.radius_after_rotation -
                               trace.radius_after_scale)
                                  .cwiseAbs()
                                  .maxCoeff());
    }
    rec.record("pipeline.radius_decoupling", worst, 1e-10);
  }
  {  // batch equals stacked rows, and repeated runs are bit-identical
    HyroParams params(c, d, opts.rotation_block, opts.scaling_block);
    params.rotation().set_theta_flat(
        gauss(params.rotation().theta_flat().size()));
    Eigen::VectorXd flat = params.scaling().blocks_flat();
    flat += 0.3 * gauss(flat.size());
    params.scaling().set_blocks_flat(flat);
    EmbeddingBatch batch;
    batch.rows.resize(6, d);
    for (int r = 0; r < 6; ++r) {
      batch.rows.row(r) = gauss(d).transpose();
    }
    const EmbeddingBatch out1 = hyro_forward(params, batch);
    const EmbeddingBatch out2 = hyro_forward(params, batch);
    double worst_rows = 0.0;
    for (Eigen::Index r = 0; r < batch.rows.rows(); ++r) {
      worst_rows = std::max(
          worst_rows, (hyro_forward_row(params, batch.rows.row(r)) -
                       out1.rows.row(r).transpose())
                          .norm());
    }
    rec.record("pipeline.batch_equivariance", worst_rows, 0.0);
    rec.record("pipeline.determinism",
               (out1.rows - out2.rows).cwiseAbs().maxCoeff(), 0.0);
  }
  {  // softmax gradient rows sum to zero; cosine ignores row rescaling
    std::uniform_real_distribution<double> uniform(-0.9, 0.9);
    Eigen::MatrixXd cost(6, 4);
    for (Eigen::Index i = 0; i < cost.size(); ++i) {
      cost(i / 4, i % 4) = uniform(rng);
    }
    Labels labels = {0, 1, 2, 3, 0, 1};
    const CeResult ce = ce_loss(cost, labels, 0.07);
    rec.record("cost.grad_rows_sum_zero",
               ce.grad_on_cost.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);

    EmbeddingBatch visual;
    EmbeddingBatch textual;
    visual.rows.resize(5, d);
    textual.rows.resize(3, d);
    for (int r = 0; r < 5; ++r) visual.rows.row(r) = gauss(d).transpose();
    for (int r = 0; r < 3; ++r) textual.rows.row(r) = gauss(d).transpose();
    EmbeddingBatch rescaled = visual;
    for (int r = 0; r < 5; ++r) rescaled.rows.row(r) *= 0.1 + 3.0 * unit(rng);
    rec.record("cost.rescale_invariance",
               (cost_volume(visual, textual) - cost_volume(rescaled, textual))
                   .cwiseAbs()
                   .maxCoeff(),
               1e-12);

    BlockOrthogonal rot(d, opts.rotation_block);
    rot.set_theta_flat(gauss(rot.theta_flat().size()));
    EmbeddingBatch rot_v = visual;
    EmbeddingBatch rot_t = textual;
    for (int r = 0; r < 5; ++r) rot_v.rows.row(r) = rot.apply(visual.rows.row(r)).transpose();
    for (int r = 0; r < 3; ++r) rot_t.rows.row(r) = rot.apply(textual.rows.row(r)).transpose();
    rec.record("cost.rotation_invariance",
               (cost_volume(visual, textual) - cost_volume(rot_v, rot_t))
                   .cwiseAbs()
                   .maxCoeff(),
               1e-9);
  }
  return rec.results;
}

}  // namespace hyro
