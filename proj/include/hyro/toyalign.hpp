// include/hyro/toyalign.hpp
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyro/ball.hpp"
#include "hyro/costvolume.hpp"
#include "hyro/pipeline.hpp"
#include "hyro/rotation.hpp"
#include "hyro/scaling.hpp"

namespace hyro {

// Class anchors come in pairs separated by twice this angle. Two forces pin
// the value: pairs close enough that the hidden rotation misclassifies a
// visible share of untrained rows (far-apart anchors make the task trivial
// before training), yet far enough apart that the contrastive margin between
// pair members saturates within the training budget; with a tight pair the
// late-training margin pressure keeps steering outputs toward the
// pair-difference direction, away from the matched anchor, and the mean
// matched-pair angle climbs instead of settling.
inline constexpr double kAnchorPairHalfAngle = 0.40;

struct ToyTaskConfig {
  int dim = 32;
  int rotation_block = 8;
  int scaling_block = 8;
  double curvature = 0.01;
  int num_classes = 8;
  int samples_per_class = 16;
  double radius_multiplier = 3.0;
  double hidden_angle = std::numbers::pi / 4.0;
  double noise = 0.02;
  std::uint64_t seed = 42;

  void validate() const {
    if (dim <= 0 || rotation_block <= 0 || scaling_block <= 0 ||
        dim % rotation_block != 0 || dim % scaling_block != 0) {
      throw std::invalid_argument(
          "dim must be a positive multiple of both block sizes");
    }
    if (!(curvature > 0.0)) {
      throw std::invalid_argument("curvature must be positive");
    }
    if (num_classes < 2) {
      throw std::invalid_argument("at least two classes required");
    }
    if (num_classes > dim) {
      throw std::invalid_argument("anchors need at most dim classes");
    }
    if (samples_per_class < 1) {
      throw std::invalid_argument("at least one sample per class required");
    }
    if (noise < 0.0) {
      throw std::invalid_argument("noise scale must be nonnegative");
    }
  }
};

struct ToyTask {
  EmbeddingBatch visual;
  EmbeddingBatch textual;
  Labels labels;
  BlockOrthogonal hidden;
};

namespace detail {

[[nodiscard]] inline Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng,
                                                     Eigen::Index rows,
                                                     Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  }
  return m;
}

// Orthonormal frame: thin Q of a Gaussian matrix with column signs fixed by
// the R diagonal so the frame is a deterministic function of the draw.
[[nodiscard]] inline Eigen::MatrixXd orthonormal_frame(std::mt19937_64& rng,
                                                       int dim, int count) {
  const Eigen::MatrixXd g = gaussian_matrix(rng, dim, count);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q =
      qr.householderQ() * Eigen::MatrixXd::Identity(dim, count);
  const Eigen::MatrixXd r =
      qr.matrixQR().topRows(count).triangularView<Eigen::Upper>();
  for (int j = 0; j < count; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace detail

/**
 * @brief Build the synthetic alignment task.
 *
 * Anchors: an orthonormal frame folded into close pairs, a_{2m} = cos(γ)u ±
 * sin(γ)w with γ = kAnchorPairHalfAngle (an odd trailing class keeps its
 * frame vector). Visual rows apply a hidden block rotation to the labeled
 * anchor, scale by the radius multiplier, and add Gaussian noise. Each block
 * of the hidden rotation turns every planar component by exactly the budget
 * angle around a random plane basis, displacing the whole batch by the
 * budget; odd block sizes keep one fixed axis, and budget 0 is the identity.
 * Bit-identical for equal seeds.
 */
[[nodiscard]] inline ToyTask generate_task(const ToyTaskConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const int d = cfg.dim;
  const int nc = cfg.num_classes;

  const Eigen::MatrixXd frame = detail::orthonormal_frame(rng, d, nc);
  Eigen::MatrixXd anchors(nc, d);
  const double cg = std::cos(kAnchorPairHalfAngle);
  const double sg = std::sin(kAnchorPairHalfAngle);
  for (int m = 0; m + 1 < nc; m += 2) {
    anchors.row(m) = (cg * frame.col(m) + sg * frame.col(m + 1)).transpose();
    anchors.row(m + 1) =
        (cg * frame.col(m) - sg * frame.col(m + 1)).transpose();
  }
  if (nc % 2 == 1) anchors.row(nc - 1) = frame.col(nc - 1).transpose();

  BlockOrthogonal hidden(d, cfg.rotation_block);
  const int n = cfg.rotation_block;
  for (int k = 0; k < hidden.num_blocks(); ++k) {
    if (cfg.hidden_angle == 0.0 || n < 2) {
      hidden.set_theta(k, Eigen::MatrixXd::Zero(n, n));
      continue;
    }
    // The Cayley map antisymmetrizes its argument as A = Θ − Θᵀ, and for a
    // complex structure J (J² = −I on the rotated planes) the image of
    // A = tan(φ/2)·J rotates each of those planes by exactly φ. Conjugating
    // the canonical plane pairing by a random orthogonal Q randomizes the
    // plane basis while keeping every planar angle at the budget.
    const Eigen::MatrixXd q = detail::orthonormal_frame(rng, n, n);
    Eigen::MatrixXd pairs = Eigen::MatrixXd::Zero(n, n);
    for (int p = 0; p + 1 < n; p += 2) {
      pairs(p, p + 1) = 1.0;
      pairs(p + 1, p) = -1.0;
    }
    const Eigen::MatrixXd j = q * pairs * q.transpose();
    hidden.set_theta(k, 0.5 * std::tan(cfg.hidden_angle / 2.0) * j);
  }

  ToyTask task{.visual = {}, .textual = {}, .labels = {}, .hidden = hidden};
  task.textual.role = EmbeddingBatch::Role::textual;
  task.textual.rows = anchors;

  const int total = nc * cfg.samples_per_class;
  task.visual.role = EmbeddingBatch::Role::visual;
  task.visual.rows.resize(total, d);
  task.labels.resize(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    const int label = i / cfg.samples_per_class;
    task.labels[static_cast<std::size_t>(i)] = label;
    const Eigen::VectorXd rotated = hidden.apply(anchors.row(label));
    task.visual.rows.row(i) =
        (cfg.radius_multiplier * rotated +
         cfg.noise * detail::gaussian_matrix(rng, d, 1).col(0))
            .transpose();
  }
  return task;
}

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

// First/second–moment accumulators for one parameter group.
struct OptimizerState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
  AdamWConfig hyper;

  explicit OptimizerState(Eigen::Index size, AdamWConfig cfg = {})
      : m(Eigen::VectorXd::Zero(size)), v(Eigen::VectorXd::Zero(size)),
        hyper(cfg) {}
};

/**
 * @brief One decoupled-weight-decay adaptive update with bias correction:
 *   m ← β₁m + (1−β₁)g,  v ← β₂v + (1−β₂)g²,
 *   p ← p − lr·( m̂/(√v̂ + ε) + λ·p )   with m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ).
 */
inline void adamw_step(OptimizerState& state, Eigen::VectorXd& params,
                       const Eigen::VectorXd& grads) {
  if (params.size() != state.m.size() || grads.size() != state.m.size()) {
    throw std::invalid_argument("adamw_step shape mismatch");
  }
  if (!grads.allFinite()) {
    throw std::invalid_argument("adamw_step requires finite gradients");
  }
  const AdamWConfig& h = state.hyper;
  state.step += 1;
  state.m = h.beta1 * state.m + (1.0 - h.beta1) * grads;
  state.v = h.beta2 * state.v + (1.0 - h.beta2) * grads.cwiseProduct(grads);
  const double mc = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double vc = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  params -= h.lr * ((state.m / mc).array() /
                        ((state.v / vc).array().sqrt() + h.epsilon) +
                    h.weight_decay * params.array())
                       .matrix();
}

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double mean_angle = 0.0;
  double radius_drift = 0.0;
};

// Row t holds the metrics of the parameters after t update steps, so row 0
// is the untrained model and a steps-step run has steps+1 rows.
struct TrainLog {
  std::vector<TrainLogRow> rows;
};

struct TrainOptions {
  int steps = 2000;
  double temperature = 0.07;
  bool train_rotation = true;
  bool train_scaling = true;
  bool two_stream = false;
  AdamWConfig optimizer;
};

struct TrainResult {
  TrainLog log;
  HyroParams params;
  bool diverged = false;
};

namespace detail {

[[nodiscard]] inline Eigen::VectorXd theta_grads_flat(const HyroGrads& grads,
                                                      int n) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(grads.theta_blocks.size()) *
                       n * n);
  Eigen::Index at = 0;
  for (const auto& g : grads.theta_blocks) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) flat[at++] = g(i, j);
    }
  }
  return flat;
}

[[nodiscard]] inline Eigen::VectorXd scaling_grads_flat(const HyroGrads& grads,
                                                        int b) {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(grads.scaling_blocks.size()) *
                       b * b);
  Eigen::Index at = 0;
  for (const auto& g : grads.scaling_blocks) {
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < b; ++j) flat[at++] = g(i, j);
    }
  }
  return flat;
}

}  // namespace detail

/**
 * @brief Train the transform on a pre-built task.
 *
 * Per step: forward the visual batch, cosine cost against the (optionally
 * co-transformed) textual anchors, cross-entropy, pull gradients back
 * through the transform, and update the active parameter groups. Metrics
 * log before each update; a non-finite loss or gradient stops training with
 * the log intact up to the last good step.
 */
[[nodiscard]] inline TrainResult train(const ToyTask& task,
                                       const ToyTaskConfig& cfg,
                                       const TrainOptions& options) {
  cfg.validate();
  if (options.steps < 0) {
    throw std::invalid_argument("steps must be nonnegative");
  }
  if (task.visual.rows.cols() != cfg.dim ||
      task.textual.rows.cols() != cfg.dim ||
      task.labels.size() !=
          static_cast<std::size_t>(task.visual.rows.rows())) {
    throw std::invalid_argument("task does not match its config");
  }
  const Curvature c(cfg.curvature);
  const int n = cfg.rotation_block;
  const int b = cfg.scaling_block;

  TrainResult result{
      .log = {},
      .params = HyroParams(c, cfg.dim, n, b),
      .diverged = false};
  HyroParams textual_params(c, cfg.dim, n, b);

  OptimizerState theta_state(result.params.rotation().theta_flat().size(),
                             options.optimizer);
  OptimizerState scale_state(result.params.scaling().blocks_flat().size(),
                             options.optimizer);
  OptimizerState theta_state_t = theta_state;
  OptimizerState scale_state_t = scale_state;

  const bool any_active = options.train_rotation || options.train_scaling;

  for (int step = 0; step <= options.steps; ++step) {
    const PipelineTrace trace = hyro_forward_traced(result.params, task.visual);
    EmbeddingBatch out{.rows = trace.out, .role = EmbeddingBatch::Role::visual};
    const EmbeddingBatch textual_eff =
        options.two_stream ? hyro_forward(textual_params, task.textual)
                           : task.textual;
    const CostVolume cost = cost_volume(out, textual_eff);
    const CeResult ce = ce_loss(cost, task.labels, options.temperature);
    if (!std::isfinite(ce.loss)) {
      result.diverged = true;
      break;
    }

    double angle_sum = 0.0;
    for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
      const auto label = task.labels[static_cast<std::size_t>(i)];
      angle_sum += angle_at_origin(
          exp_map_origin(out.rows.row(i), c),
          exp_map_origin(textual_eff.rows.row(label), c));
    }
    const double drift =
        (trace.radius_after_rotation - trace.radius_after_scale)
            .cwiseAbs()
            .mean();
    result.log.rows.push_back(
        {.step = step,
         .loss = ce.loss,
         .accuracy = accuracy(cost, task.labels),
         .mean_angle = angle_sum / static_cast<double>(out.rows.rows()),
         .radius_drift = drift});

    if (step == options.steps || !any_active) continue;

    const CostGrads cgrads = cost_volume_vjp(out, textual_eff, ce.grad_on_cost);
    const HyroGrads vgrads = hyro_vjp(result.params, task.visual, cgrads.visual);
    Eigen::VectorXd theta_grad = detail::theta_grads_flat(vgrads, n);
    Eigen::VectorXd scale_grad = detail::scaling_grads_flat(vgrads, b);
    Eigen::VectorXd theta_grad_t;
    Eigen::VectorXd scale_grad_t;
    if (options.two_stream) {
      const HyroGrads tgrads =
          hyro_vjp(textual_params, task.textual, cgrads.textual);
      theta_grad_t = detail::theta_grads_flat(tgrads, n);
      scale_grad_t = detail::scaling_grads_flat(tgrads, b);
    }
    if (!theta_grad.allFinite() || !scale_grad.allFinite() ||
        (options.two_stream &&
         (!theta_grad_t.allFinite() || !scale_grad_t.allFinite()))) {
      result.diverged = true;
      break;
    }

    if (options.train_rotation) {
      Eigen::VectorXd flat = result.params.rotation().theta_flat();
      adamw_step(theta_state, flat, theta_grad);
      result.params.rotation().set_theta_flat(flat);
      if (options.two_stream) {
        Eigen::VectorXd tflat = textual_params.rotation().theta_flat();
        adamw_step(theta_state_t, tflat, theta_grad_t);
        textual_params.rotation().set_theta_flat(tflat);
      }
    }
    if (options.train_scaling) {
      Eigen::VectorXd flat = result.params.scaling().blocks_flat();
      adamw_step(scale_state, flat, scale_grad);
      result.params.scaling().set_blocks_flat(flat);
      if (options.two_stream) {
        Eigen::VectorXd tflat = textual_params.scaling().blocks_flat();
        adamw_step(scale_state_t, tflat, scale_grad_t);
        textual_params.scaling().set_blocks_flat(tflat);
      }
    }
  }
  return result;
}

// Generate-and-train convenience: the task is rebuilt from the config seed.
[[nodiscard]] inline TrainResult train(const ToyTaskConfig& cfg,
                                       const TrainOptions& options) {
  cfg.validate();
  return train(generate_task(cfg), cfg, options);
}

struct AblationRow {
  std::string name;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
};

/**
 * @brief Train the four freeze configurations on one task and tabulate the
 * final accuracy of each.
 */
[[nodiscard]] inline std::vector<AblationRow> ablate(const ToyTaskConfig& cfg,
                                                     const TrainOptions& options) {
  std::vector<AblationRow> table;
  const std::pair<const char*, std::pair<bool, bool>> configs[] = {
      {"neither", {false, false}},
      {"radius-only", {false, true}},
      {"rotation-only", {true, false}},
      {"both", {true, true}},
  };
  for (const auto& [name, active] : configs) {
    TrainOptions run = options;
    run.train_rotation = active.first;
    run.train_scaling = active.second;
    const TrainResult result = train(cfg, run);
    table.push_back({.name = name,
                     .final_accuracy = result.log.rows.back().accuracy,
                     .final_loss = result.log.rows.back().loss});
  }
  return table;
}

namespace detail {

[[nodiscard]] inline std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

}  // namespace detail

// CSV with the exact header step,loss,accuracy,mean_angle,radius_drift and
// shortest-precision-stable numbers, so identical runs emit identical bytes.
[[nodiscard]] inline std::string train_log_to_csv(const TrainLog& log) {
  std::string out = "step,loss,accuracy,mean_angle,radius_drift\n";
  for (const auto& row : log.rows) {
    out += std::to_string(row.step);
    out += ',';
    out += detail::format_double(row.loss);
    out += ',';
    out += detail::format_double(row.accuracy);
    out += ',';
    out += detail::format_double(row.mean_angle);
    out += ',';
    out += detail::format_double(row.radius_drift);
    out += '\n';
  }
  return out;
}

[[nodiscard]] inline nlohmann::json train_log_to_json(const TrainLog& log) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["columns"] = {"step", "loss", "accuracy", "mean_angle", "radius_drift"};
  j["rows"] = nlohmann::json::array();
  for (const auto& row : log.rows) {
    j["rows"].push_back(
        {row.step, row.loss, row.accuracy, row.mean_angle, row.radius_drift});
  }
  return j;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open for writing: " + path);
  }
  out << text;
  if (!out) {
    throw std::runtime_error("write failed: " + path);
  }
}

}  // namespace hyro
