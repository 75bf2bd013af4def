// tests/test_toyalign.cpp

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <stdexcept>

#include <catch2/catch_amalgamated.hpp>

#include "hyro/costvolume.hpp"
#include "hyro/toyalign.hpp"

namespace {

hyro::ToyTaskConfig small_config() {
  hyro::ToyTaskConfig cfg;
  cfg.dim = 8;
  cfg.rotation_block = 4;
  cfg.scaling_block = 4;
  cfg.num_classes = 2;
  cfg.samples_per_class = 4;
  return cfg;
}

}  // namespace

TEST_CASE("task config validation", "[toyalign]") {
  hyro::ToyTaskConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.dim = 10;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.noise = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.num_classes = 64;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.curvature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("generated batches have the advertised shapes", "[toyalign]") {
  hyro::ToyTaskConfig cfg;
  const hyro::ToyTask task = hyro::generate_task(cfg);
  CHECK(task.textual.rows.rows() == cfg.num_classes);
  CHECK(task.textual.rows.cols() == cfg.dim);
  CHECK(task.visual.rows.rows() == cfg.num_classes * cfg.samples_per_class);
  CHECK(task.labels.size() ==
        static_cast<std::size_t>(task.visual.rows.rows()));
  CHECK(task.textual.role == hyro::EmbeddingBatch::Role::textual);
  CHECK(task.visual.role == hyro::EmbeddingBatch::Role::visual);
  for (int i = 0; i < task.visual.rows.rows(); ++i) {
    CHECK(task.labels[static_cast<std::size_t>(i)] ==
          i / cfg.samples_per_class);
  }
}

TEST_CASE("anchors are unit paired directions", "[toyalign]") {
  hyro::ToyTaskConfig cfg;
  const hyro::ToyTask task = hyro::generate_task(cfg);
  const Eigen::MatrixXd& a = task.textual.rows;
  for (int i = 0; i < a.rows(); ++i) {
    CHECK(a.row(i).norm() == Catch::Approx(1.0).epsilon(1e-12));
  }
  // Anchors come in close pairs; distinct pairs are orthogonal.
  const double pair_cos = std::cos(2.0 * hyro::kAnchorPairHalfAngle);
  for (int m = 0; m + 1 < a.rows(); m += 2) {
    CHECK(a.row(m).dot(a.row(m + 1)) == Catch::Approx(pair_cos).epsilon(1e-9));
  }
  for (int i = 0; i < a.rows(); i += 2) {
    for (int j = i + 2; j < a.rows(); j += 2) {
      CHECK(std::abs(a.row(i).dot(a.row(j))) <= 1e-9);
    }
  }
}

TEST_CASE("hidden rotation honors the angle budget", "[toyalign]") {
  hyro::ToyTaskConfig cfg;
  cfg.hidden_angle = 0.4;
  const hyro::ToyTask task = hyro::generate_task(cfg);
  double top = 0.0;
  double bottom = std::numbers::pi;
  for (const auto& theta : task.hidden.theta()) {
    const Eigen::MatrixXd r = hyro::cayley_block(theta);
    Eigen::EigenSolver<Eigen::MatrixXd> eigs(r);
    for (Eigen::Index i = 0; i < eigs.eigenvalues().size(); ++i) {
      const double angle = std::abs(std::arg(eigs.eigenvalues()[i]));
      top = std::max(top, angle);
      bottom = std::min(bottom, angle);
    }
  }
  CHECK(top == Catch::Approx(0.4).epsilon(1e-9));
  // Even block sizes rotate every plane by the budget, so the whole spectrum
  // sits at the budget angle.
  CHECK(bottom == Catch::Approx(0.4).epsilon(1e-9));

  cfg.hidden_angle = 0.0;
  const hyro::ToyTask flat = hyro::generate_task(cfg);
  CHECK((flat.hidden.to_dense() -
         Eigen::MatrixXd::Identity(cfg.dim, cfg.dim))
            .norm() == 0.0);
}

TEST_CASE("visual rows sit near the scaled rotated anchors", "[toyalign]") {
  hyro::ToyTaskConfig cfg;
  const hyro::ToyTask task = hyro::generate_task(cfg);
  const Eigen::MatrixXd r = task.hidden.to_dense();
  for (int i = 0; i < task.visual.rows.rows(); ++i) {
    const int label = task.labels[static_cast<std::size_t>(i)];
    const Eigen::VectorXd center =
        cfg.radius_multiplier * r * task.textual.rows.row(label).transpose();
    const double dist = (task.visual.rows.row(i).transpose() - center).norm();
    CHECK(dist <= 6.0 * cfg.noise * std::sqrt(double(cfg.dim)));
  }
}

TEST_CASE("generation is deterministic in the seed", "[toyalign]") {
  hyro::ToyTaskConfig cfg;
  const hyro::ToyTask a = hyro::generate_task(cfg);
  const hyro::ToyTask b = hyro::generate_task(cfg);
  CHECK((a.visual.rows - b.visual.rows).norm() == 0.0);
  CHECK((a.textual.rows - b.textual.rows).norm() == 0.0);
  cfg.seed = 43;
  const hyro::ToyTask c = hyro::generate_task(cfg);
  CHECK((a.visual.rows - c.visual.rows).norm() > 0.0);
}

TEST_CASE("aligned generation starts at full accuracy", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  cfg.noise = 0.0;
  cfg.radius_multiplier = 1.0;
  cfg.hidden_angle = 0.0;
  const hyro::ToyTask task = hyro::generate_task(cfg);
  const hyro::CostVolume cost =
      hyro::cost_volume(task.visual, task.textual);
  CHECK(hyro::accuracy(cost, task.labels) == 1.0);
}

TEST_CASE("a planar quarter turn misplaces half the rows", "[toyalign]") {
  // A rotation cannot swap two anchors outright: it carries one onto the
  // other and the other onto the first one's antipode, leaving half the
  // rows correctly classified before training.
  hyro::ToyTaskConfig cfg;
  cfg.dim = 2;
  cfg.rotation_block = 2;
  cfg.scaling_block = 2;
  cfg.num_classes = 2;
  cfg.samples_per_class = 4;
  cfg.noise = 0.0;
  cfg.radius_multiplier = 1.0;
  cfg.hidden_angle = std::numbers::pi / 2.0;
  const hyro::ToyTask task = hyro::generate_task(cfg);
  const hyro::CostVolume cost =
      hyro::cost_volume(task.visual, task.textual);
  CHECK(hyro::accuracy(cost, task.labels) == 0.5);
}

TEST_CASE("adamw first step moves by roughly the learning rate", "[toyalign]") {
  hyro::AdamWConfig hyper;
  hyper.lr = 0.1;
  hyper.weight_decay = 0.0;
  hyro::OptimizerState state(1, hyper);
  Eigen::VectorXd p(1);
  p << 1.0;
  Eigen::VectorXd g(1);
  g << 2.0;
  hyro::adamw_step(state, p, g);
  CHECK(p[0] == Catch::Approx(0.9000000005).epsilon(1e-12));
  CHECK(state.step == 1);
}

TEST_CASE("zero gradients leave parameters to the decay", "[toyalign]") {
  hyro::AdamWConfig hyper;
  hyper.lr = 0.1;
  hyper.weight_decay = 0.0;
  hyro::OptimizerState state(3, hyper);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 2.0);
  const Eigen::VectorXd before = p;
  hyro::adamw_step(state, p, Eigen::VectorXd::Zero(3));
  CHECK((p - before).norm() == 0.0);

  hyper.weight_decay = 0.01;
  hyro::OptimizerState decay_state(3, hyper);
  hyro::adamw_step(decay_state, p, Eigen::VectorXd::Zero(3));
  CHECK((p - (1.0 - 0.1 * 0.01) * before).norm() <= 1e-15);

  Eigen::VectorXd bad = Eigen::VectorXd::Zero(3);
  bad[0] = std::nan("");
  CHECK_THROWS_AS(hyro::adamw_step(decay_state, p, bad),
                  std::invalid_argument);
  CHECK_THROWS_AS(hyro::adamw_step(decay_state, p, Eigen::VectorXd::Zero(2)),
                  std::invalid_argument);
}

TEST_CASE("zero steps emit exactly the initial row", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  hyro::TrainOptions options;
  options.steps = 0;
  const hyro::TrainResult result = hyro::train(cfg, options);
  REQUIRE(result.log.rows.size() == 1);
  CHECK(result.log.rows[0].step == 0);
  CHECK_FALSE(result.diverged);
  // Parameters equal initialization.
  CHECK((result.params.rotation().to_dense() -
         Eigen::MatrixXd::Identity(cfg.dim, cfg.dim))
            .norm() == 0.0);
}

TEST_CASE("training logs one row per step", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  hyro::TrainOptions options;
  options.steps = 40;
  const hyro::TrainResult result = hyro::train(cfg, options);
  REQUIRE(result.log.rows.size() == 41);
  for (int t = 0; t <= 40; ++t) {
    CHECK(result.log.rows[static_cast<std::size_t>(t)].step == t);
  }
}

TEST_CASE("aligned task trains without loss increase", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  cfg.noise = 0.0;
  cfg.radius_multiplier = 1.0;
  cfg.hidden_angle = 0.0;
  hyro::TrainOptions options;
  options.steps = 50;
  const hyro::TrainResult result = hyro::train(cfg, options);
  for (std::size_t t = 1; t < result.log.rows.size(); ++t) {
    CHECK(result.log.rows[t].loss <= result.log.rows[t - 1].loss + 1e-6);
  }
}

TEST_CASE("frozen scaling keeps the radius drift at zero", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  hyro::TrainOptions options;
  options.steps = 30;
  options.train_scaling = false;
  const hyro::TrainResult result = hyro::train(cfg, options);
  for (const auto& row : result.log.rows) {
    CHECK(row.radius_drift <= 1e-8);
  }
}

TEST_CASE("training is deterministic", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  hyro::TrainOptions options;
  options.steps = 25;
  const hyro::TrainResult a = hyro::train(cfg, options);
  const hyro::TrainResult b = hyro::train(cfg, options);
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  for (std::size_t t = 0; t < a.log.rows.size(); ++t) {
    CHECK(a.log.rows[t].loss == b.log.rows[t].loss);
    CHECK(a.log.rows[t].accuracy == b.log.rows[t].accuracy);
    CHECK(a.log.rows[t].mean_angle == b.log.rows[t].mean_angle);
  }
  CHECK((a.params.rotation().theta_flat() -
         b.params.rotation().theta_flat())
            .norm() == 0.0);
}

TEST_CASE("two stream training transforms both populations", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  hyro::TrainOptions options;
  options.steps = 30;
  options.two_stream = true;
  const hyro::TrainResult result = hyro::train(cfg, options);
  CHECK_FALSE(result.diverged);
  for (const auto& row : result.log.rows) {
    CHECK(std::isfinite(row.loss));
    CHECK(std::isfinite(row.mean_angle));
  }
}

TEST_CASE("ablation reports the four configurations in order", "[toyalign]") {
  hyro::ToyTaskConfig cfg = small_config();
  hyro::TrainOptions options;
  options.steps = 10;
  const auto table = hyro::ablate(cfg, options);
  REQUIRE(table.size() == 4);
  CHECK(table[0].name == "neither");
  CHECK(table[1].name == "radius-only");
  CHECK(table[2].name == "rotation-only");
  CHECK(table[3].name == "both");
  for (const auto& row : table) {
    CHECK(row.final_accuracy >= 0.0);
    CHECK(row.final_accuracy <= 1.0);
    CHECK(std::isfinite(row.final_loss));
  }
}

TEST_CASE("default task trends toward alignment", "[toyalign][slow]") {
  const hyro::ToyTaskConfig cfg;
  const hyro::TrainOptions options;
  const hyro::TrainResult result = hyro::train(cfg, options);
  REQUIRE_FALSE(result.diverged);
  const auto& rows = result.log.rows;
  REQUIRE(rows.size() == 2001);

  // Exponentially smoothed loss (window 100) keeps falling through the
  // second half of training.
  const double alpha = 1.0 / 100.0;
  std::vector<double> ema(rows.size());
  ema[0] = rows[0].loss;
  for (std::size_t t = 1; t < rows.size(); ++t) {
    ema[t] = (1.0 - alpha) * ema[t - 1] + alpha * rows[t].loss;
  }
  CHECK(ema.back() < ema[rows.size() / 2]);
  CHECK(rows.back().accuracy >= 0.95);
  CHECK(rows.back().mean_angle < rows.front().mean_angle);
}

TEST_CASE("csv serialization round trips exactly", "[toyalign]") {
  hyro::TrainLog log;
  log.rows.push_back({0, 0.1 + 1e-17, 0.5, std::numbers::pi, 1e-300});
  log.rows.push_back({1, 2.0 / 3.0, 1.0, 0.0, 0.0});
  const std::string csv = hyro::train_log_to_csv(log);
  REQUIRE(csv.rfind("step,loss,accuracy,mean_angle,radius_drift\n", 0) == 0);
  // Doubles are printed with enough digits to reparse bit for bit.
  const std::size_t line_start = csv.find('\n') + 1;
  const std::size_t comma = csv.find(',', line_start);
  const std::string loss_text =
      csv.substr(comma + 1, csv.find(',', comma + 1) - comma - 1);
  CHECK(std::strtod(loss_text.c_str(), nullptr) == 0.1 + 1e-17);

  const nlohmann::json j = hyro::train_log_to_json(log);
  CHECK(j.at("format_version") == 1);
  CHECK(j.at("columns")[1].get<std::string>() == "loss");
  REQUIRE(j.at("rows").size() == 2);
  CHECK(j.at("rows")[1][1].get<double>() == 2.0 / 3.0);
}
