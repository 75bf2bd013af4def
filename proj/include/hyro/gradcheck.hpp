// include/hyro/gradcheck.hpp
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyro/ball.hpp"
#include "hyro/costvolume.hpp"
#include "hyro/pipeline.hpp"
#include "hyro/rotation.hpp"
#include "hyro/scaling.hpp"

namespace hyro {

// Central-difference defaults: step 1e−6 balances truncation against
// rounding in 64-bit arithmetic; 1e−5 relative is the pass tolerance.
inline constexpr double kGradCheckStep = 1e-6;
inline constexpr double kGradCheckTolerance = 1e-5;

struct GradCheckOptions {
  int dim = 8;
  int rotation_block = 4;
  int scaling_block = 4;
  double curvature = 0.01;
  double temperature = 0.07;
  double step = kGradCheckStep;
  double tolerance = kGradCheckTolerance;
};

struct OpReport {
  std::string op;
  int trials = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool pass = false;
};

struct GradReport {
  double step = kGradCheckStep;
  double tolerance = kGradCheckTolerance;
  std::uint64_t seed = 0;
  int trials = 0;
  std::vector<OpReport> ops;
  bool passed = false;
};

// |a − f| / max(|a|, |f|, 1e−8), the relative-error definition every report
// uses.
[[nodiscard]] inline double relative_error(double analytic, double fd) noexcept {
  return std::abs(analytic - fd) /
         std::max({std::abs(analytic), std::abs(fd), 1e-8});
}

/**
 * @brief Central finite differences of a scalar loss, one coordinate at a
 * time: (L(p + δe_i) − L(p − δe_i)) / (2δ).
 *
 * Calls only the forward path. A non-finite loss at either probe marks that
 * coordinate NaN so the caller reports it as a failure.
 */
[[nodiscard]] inline Eigen::VectorXd finite_diff_grad(
    const std::function<double(const Eigen::VectorXd&)>& loss,
    const Eigen::VectorXd& params, double step) {
  if (!(step > 0.0)) {
    throw std::invalid_argument("finite-difference step must be positive");
  }
  Eigen::VectorXd grad(params.size());
  Eigen::VectorXd probe = params;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    probe[i] = params[i] + step;
    const double up = loss(probe);
    probe[i] = params[i] - step;
    const double down = loss(probe);
    probe[i] = params[i];
    grad[i] = (std::isfinite(up) && std::isfinite(down))
                  ? (up - down) / (2.0 * step)
                  : std::numeric_limits<double>::quiet_NaN();
  }
  return grad;
}

namespace detail {

[[nodiscard]] inline Eigen::VectorXd gaussian_vector(std::mt19937_64& rng,
                                                     Eigen::Index size) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = normal(rng);
  return v;
}

// Random direction with norm drawn in [0.2, 1.0]: well inside the ball for
// every supported curvature, keeping the maps smooth around the probe.
[[nodiscard]] inline Eigen::VectorXd interior_tangent(std::mt19937_64& rng,
                                                      Eigen::Index size) {
  std::uniform_real_distribution<double> radius(0.2, 1.0);
  Eigen::VectorXd v = gaussian_vector(rng, size);
  return v * (radius(rng) / v.norm());
}

// Sign-symmetric components with |entry| in [0.5, 1.5]. Central differences
// on a unit-scale loss carry ~1e-10 of rounding noise, so probes whose
// gradient coordinates can land near zero turn that noise into large
// relative errors; bounding the draw keeps every coordinate measurable.
[[nodiscard]] inline Eigen::VectorXd bounded_vector(std::mt19937_64& rng,
                                                    Eigen::Index size) {
  std::uniform_real_distribution<double> mag(0.5, 1.5);
  std::bernoulli_distribution flip(0.5);
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    v[i] = (flip(rng) ? 1.0 : -1.0) * mag(rng);
  }
  return v;
}

// Interior point whose coordinates are all bounded away from zero, for
// trials whose gradient entries scale with individual coordinates.
[[nodiscard]] inline Eigen::VectorXd bounded_interior(std::mt19937_64& rng,
                                                      Eigen::Index size) {
  std::uniform_real_distribution<double> radius(0.2, 1.0);
  Eigen::VectorXd v = bounded_vector(rng, size);
  return v * (radius(rng) / v.norm());
}

[[nodiscard]] inline Eigen::MatrixXd unflatten(const Eigen::VectorXd& flat,
                                               int rows, int cols,
                                               Eigen::Index offset) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      m(i, j) = flat[offset + static_cast<Eigen::Index>(i) * cols + j];
    }
  }
  return m;
}

inline void accumulate(OpReport& report, const Eigen::VectorXd& analytic,
                       const Eigen::VectorXd& fd) {
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    if (!std::isfinite(fd[i]) || !std::isfinite(analytic[i])) {
      report.max_rel_error = std::numeric_limits<double>::infinity();
      continue;
    }
    report.max_rel_error =
        std::max(report.max_rel_error, relative_error(analytic[i], fd[i]));
    report.max_abs_error =
        std::max(report.max_abs_error, std::abs(analytic[i] - fd[i]));
  }
}

}  // namespace detail

[[nodiscard]] inline std::vector<std::string> registered_ops() {
  return {"exp", "log", "cayley", "scale", "hyro", "ce", "e2e"};
}

/**
 * @brief Compare one operation's hand-derived pullback against central
 * finite differences over randomized trials.
 *
 * Vector-valued operations are scalarized as L(p) = ⟨w, op(p)⟩ with a fixed
 * random w, whose exact gradient is the pullback of w. The "exp" and "hyro"
 * entries additionally probe boundary-clamped inputs and require only finite
 * gradients there (the clamp is not differentiable at the crossing itself).
 */
[[nodiscard]] inline OpReport check_op_vjp(const std::string& op_name,
                                           int trial_count, std::uint64_t seed,
                                           const GradCheckOptions& opts = {}) {
  if (trial_count <= 0) {
    throw std::invalid_argument("trial count must be positive");
  }
  const Curvature c(opts.curvature);
  const int d = opts.dim;
  const int n = opts.rotation_block;
  const int b = opts.scaling_block;
  if (d <= 0 || n <= 0 || b <= 0 || d % n != 0 || d % b != 0) {
    throw std::invalid_argument(
        "dim must be a positive multiple of both block sizes");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  OpReport report;
  report.op = op_name;
  report.trials = trial_count;

  for (int trial = 0; trial < trial_count; ++trial) {
    if (op_name == "exp") {
      const Eigen::VectorXd v = detail::interior_tangent(rng, d);
      const Eigen::VectorXd w = detail::gaussian_vector(rng, d);
      const auto loss = [&](const Eigen::VectorXd& p) {
        return w.dot(exp_map_origin(p, c).coords());
      };
      detail::accumulate(report, exp_map_origin_vjp(v, w, c),
                         finite_diff_grad(loss, v, opts.step));
    } else if (op_name == "log") {
      const Eigen::VectorXd x =
          exp_map_origin(detail::interior_tangent(rng, d), c).coords();
      const Eigen::VectorXd w = detail::gaussian_vector(rng, d);
      const auto loss = [&](const Eigen::VectorXd& p) {
        return w.dot(log_map_origin(PoincarePoint(p, c)));
      };
      detail::accumulate(report, log_map_origin_vjp(PoincarePoint(x, c), w),
                         finite_diff_grad(loss, x, opts.step));
    } else if (op_name == "cayley") {
      Eigen::MatrixXd theta(n, n);
      Eigen::MatrixXd w(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          theta(i, j) = normal(rng);
          w(i, j) = normal(rng);
        }
      }
      const auto loss = [&](const Eigen::VectorXd& p) {
        return (w.array() * cayley_block(detail::unflatten(p, n, n, 0)).array())
            .sum();
      };
      Eigen::VectorXd flat(n * n);
      Eigen::VectorXd analytic(n * n);
      const Eigen::MatrixXd grad = cayley_vjp(theta, w);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          flat[static_cast<Eigen::Index>(i) * n + j] = theta(i, j);
          analytic[static_cast<Eigen::Index>(i) * n + j] = grad(i, j);
        }
      }
      detail::accumulate(report, analytic,
                         finite_diff_grad(loss, flat, opts.step));
    } else if (op_name == "scale") {
      BlockScaling scaling(d, b);
      for (int k = 0; k < scaling.num_blocks(); ++k) {
        Eigen::MatrixXd block = Eigen::MatrixXd::Identity(b, b);
        for (int i = 0; i < b; ++i) {
          for (int j = 0; j < b; ++j) block(i, j) += 0.3 * normal(rng);
        }
        scaling.set_block(k, block);
      }
      const PoincarePoint h =
          exp_map_origin(detail::bounded_interior(rng, d), c);
      const Eigen::VectorXd w = detail::bounded_vector(rng, d);
      const Eigen::Index nblocks = scaling.blocks_flat().size();
      Eigen::VectorXd flat(nblocks + d);
      flat << scaling.blocks_flat(), h.coords();
      const auto loss = [&](const Eigen::VectorXd& p) {
        BlockScaling s(d, b);
        s.set_blocks_flat(p.head(nblocks));
        return w.dot(
            scale_point(s, PoincarePoint(p.tail(d), c)).coords());
      };
      const ScaleGrads grads = scale_vjp(scaling, h, w);
      Eigen::VectorXd analytic(nblocks + d);
      Eigen::Index at = 0;
      for (const auto& g : grads.blocks) {
        for (int i = 0; i < b; ++i) {
          for (int j = 0; j < b; ++j) analytic[at++] = g(i, j);
        }
      }
      analytic.tail(d) = grads.point;
      detail::accumulate(report, analytic,
                         finite_diff_grad(loss, flat, opts.step));
    } else if (op_name == "hyro") {
      HyroParams params(c, d, n, b);
      Eigen::VectorXd theta = 0.5 * detail::gaussian_vector(rng, (d / n) * n * n);
      Eigen::VectorXd sblocks = params.scaling().blocks_flat() +
                                0.3 * detail::gaussian_vector(rng, (d / b) * b * b);
      params.rotation().set_theta_flat(theta);
      params.scaling().set_blocks_flat(sblocks);
      const Eigen::VectorXd x = detail::bounded_interior(rng, d);
      const Eigen::VectorXd w = detail::bounded_vector(rng, d);
      const Eigen::Index nt = theta.size();
      const Eigen::Index ns = sblocks.size();
      Eigen::VectorXd flat(nt + ns + d);
      flat << theta, sblocks, x;
      const auto loss = [&](const Eigen::VectorXd& p) {
        HyroParams probe(c, d, n, b);
        probe.rotation().set_theta_flat(p.head(nt));
        probe.scaling().set_blocks_flat(p.segment(nt, ns));
        return w.dot(hyro_forward_row(probe, p.tail(d)));
      };
      EmbeddingBatch batch;
      batch.rows = x.transpose();
      const HyroGrads grads = hyro_vjp(params, batch, w.transpose());
      Eigen::VectorXd analytic(nt + ns + d);
      Eigen::Index at = 0;
      for (const auto& g : grads.theta_blocks) {
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) analytic[at++] = g(i, j);
        }
      }
      for (const auto& g : grads.scaling_blocks) {
        for (int i = 0; i < b; ++i) {
          for (int j = 0; j < b; ++j) analytic[at++] = g(i, j);
        }
      }
      analytic.tail(d) = grads.batch.row(0);
      detail::accumulate(report, analytic,
                         finite_diff_grad(loss, flat, opts.step));
    } else if (op_name == "ce") {
      const int rows = 5;
      const int classes = 4;
      // A contrastive temperature turns wide cosine gaps into softmax tails
      // far below what central differences resolve in 64-bit arithmetic, so
      // the probe keeps the entries in a narrow band: every class retains
      // measurable probability mass while the formula under test is the same.
      std::uniform_real_distribution<double> narrow(-0.12, 0.12);
      Eigen::MatrixXd cost(rows, classes);
      Labels labels(rows);
      std::uniform_int_distribution<int> pick(0, classes - 1);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < classes; ++j) cost(i, j) = narrow(rng);
        labels[static_cast<std::size_t>(i)] = pick(rng);
      }
      const auto loss = [&](const Eigen::VectorXd& p) {
        return ce_loss(detail::unflatten(p, rows, classes, 0), labels,
                       opts.temperature)
            .loss;
      };
      const CeResult ce = ce_loss(cost, labels, opts.temperature);
      Eigen::VectorXd flat(rows * classes);
      Eigen::VectorXd analytic(rows * classes);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < classes; ++j) {
          flat[static_cast<Eigen::Index>(i) * classes + j] = cost(i, j);
          analytic[static_cast<Eigen::Index>(i) * classes + j] =
              ce.grad_on_cost(i, j);
        }
      }
      detail::accumulate(report, analytic,
                         finite_diff_grad(loss, flat, opts.step));
    } else if (op_name == "e2e") {
      // End-to-end training gradient: pipeline into cosine cost into CE,
      // differentiated with respect to every transform parameter.
      const int classes = 4;
      const int per_class = 2;
      const int rows = classes * per_class;
      EmbeddingBatch anchors;
      anchors.role = EmbeddingBatch::Role::textual;
      anchors.rows.resize(classes, d);
      for (int k = 0; k < classes; ++k) {
        Eigen::VectorXd a = detail::gaussian_vector(rng, d);
        anchors.rows.row(k) = a.transpose() / a.norm();
      }
      EmbeddingBatch batch;
      batch.rows.resize(rows, d);
      Labels labels(static_cast<std::size_t>(rows));
      for (int i = 0; i < rows; ++i) {
        labels[static_cast<std::size_t>(i)] = i / per_class;
        batch.rows.row(i) =
            2.0 * anchors.rows.row(i / per_class) +
            0.1 * detail::gaussian_vector(rng, d).transpose();
      }
      HyroParams params(c, d, n, b);
      Eigen::VectorXd theta = 0.5 * detail::gaussian_vector(rng, (d / n) * n * n);
      Eigen::VectorXd sblocks = params.scaling().blocks_flat() +
                                0.3 * detail::gaussian_vector(rng, (d / b) * b * b);
      params.rotation().set_theta_flat(theta);
      params.scaling().set_blocks_flat(sblocks);
      const Eigen::Index nt = theta.size();
      const Eigen::Index ns = sblocks.size();
      Eigen::VectorXd flat(nt + ns);
      flat << theta, sblocks;
      const auto loss = [&](const Eigen::VectorXd& p) {
        HyroParams probe(c, d, n, b);
        probe.rotation().set_theta_flat(p.head(nt));
        probe.scaling().set_blocks_flat(p.tail(ns));
        return ce_loss(cost_volume(hyro_forward(probe, batch), anchors),
                       labels, opts.temperature)
            .loss;
      };
      const EmbeddingBatch out = hyro_forward(params, batch);
      const CeResult ce =
          ce_loss(cost_volume(out, anchors), labels, opts.temperature);
      const CostGrads cgrads = cost_volume_vjp(out, anchors, ce.grad_on_cost);
      const HyroGrads grads = hyro_vjp(params, batch, cgrads.visual);
      Eigen::VectorXd analytic(nt + ns);
      Eigen::Index at = 0;
      for (const auto& g : grads.theta_blocks) {
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) analytic[at++] = g(i, j);
        }
      }
      for (const auto& g : grads.scaling_blocks) {
        for (int i = 0; i < b; ++i) {
          for (int j = 0; j < b; ++j) analytic[at++] = g(i, j);
        }
      }
      detail::accumulate(report, analytic,
                         finite_diff_grad(loss, flat, opts.step));
    } else {
      throw std::invalid_argument("unknown gradcheck op: " + op_name);
    }
  }

  // Boundary probes: clamped inputs must still produce finite pullbacks.
  if (op_name == "exp" || op_name == "hyro") {
    for (int probe = 0; probe < 3; ++probe) {
      Eigen::VectorXd v = detail::gaussian_vector(rng, d);
      v *= (7.0 / (c.sqrt() * v.norm()));
      const Eigen::VectorXd w = detail::gaussian_vector(rng, d);
      Eigen::VectorXd pullback;
      if (op_name == "exp") {
        pullback = exp_map_origin_vjp(v, w, c);
      } else {
        HyroParams params(c, d, n, b);
        EmbeddingBatch batch;
        batch.rows = v.transpose();
        pullback = hyro_vjp(params, batch, w.transpose()).batch.row(0);
      }
      if (!pullback.allFinite()) {
        report.max_rel_error = std::numeric_limits<double>::infinity();
      }
    }
  }

  report.pass = report.max_rel_error <= opts.tolerance;
  return report;
}

[[nodiscard]] inline GradReport check_all_ops(int trial_count,
                                              std::uint64_t seed,
                                              const GradCheckOptions& opts = {}) {
  GradReport report;
  report.step = opts.step;
  report.tolerance = opts.tolerance;
  report.seed = seed;
  report.trials = trial_count;
  report.passed = true;
  for (const auto& op : registered_ops()) {
    report.ops.push_back(check_op_vjp(op, trial_count, seed, opts));
    report.passed = report.passed && report.ops.back().pass;
  }
  return report;
}

[[nodiscard]] inline nlohmann::json report_to_json(const GradReport& report) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["step"] = report.step;
  j["tolerance"] = report.tolerance;
  j["seed"] = report.seed;
  j["trials"] = report.trials;
  j["passed"] = report.passed;
  j["ops"] = nlohmann::json::array();
  for (const auto& op : report.ops) {
    j["ops"].push_back({{"name", op.op},
                        {"trials", op.trials},
                        {"max_rel_error", op.max_rel_error},
                        {"max_abs_error", op.max_abs_error},
                        {"pass", op.pass}});
  }
  return j;
}

}  // namespace hyro
