// tests/test_pipeline.cpp

#include <cmath>
#include <random>
#include <stdexcept>

#include <catch2/catch_amalgamated.hpp>

#include "hyro/pipeline.hpp"

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols,
                              double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

hyro::HyroParams random_params(std::mt19937_64& rng, double curvature, int dim,
                               int rot_block, int scale_block) {
  hyro::HyroParams params(hyro::Curvature(curvature), dim, rot_block,
                          scale_block);
  for (int b = 0; b < params.rotation().num_blocks(); ++b) {
    params.rotation().set_theta(b,
                                random_matrix(rng, rot_block, rot_block, 0.6));
  }
  for (int b = 0; b < params.scaling().num_blocks(); ++b) {
    params.scaling().set_block(
        b, Eigen::MatrixXd::Identity(scale_block, scale_block) +
               random_matrix(rng, scale_block, scale_block, 0.2));
  }
  return params;
}

}  // namespace

TEST_CASE("identity parameters act as the identity", "[pipeline]") {
  const hyro::HyroParams params(hyro::Curvature(0.01), 8, 4, 4);
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd batch = random_matrix(rng, 5, 8, 1.0);
  const hyro::EmbeddingBatch in{batch, hyro::EmbeddingBatch::Role::visual};
  const auto out = hyro::hyro_forward(params, in);
  CHECK((out.rows - batch).norm() <= 1e-9 * (1.0 + batch.norm()));
  CHECK(out.role == hyro::EmbeddingBatch::Role::visual);
}

TEST_CASE("parameter dimensions must agree", "[pipeline]") {
  CHECK_THROWS_AS(
      hyro::HyroParams(hyro::Curvature(0.01), hyro::BlockOrthogonal(8, 4),
                       hyro::BlockScaling(12, 4)),
      std::invalid_argument);
  CHECK_THROWS_AS(hyro::HyroParams(hyro::Curvature(0.01), 10, 3, 5),
                  std::invalid_argument);
}

TEST_CASE("interior pipeline collapses to a linear map", "[pipeline]") {
  // exp then scale then rotate then log equals R*S on tangent vectors while
  // every intermediate stays interior.
  std::mt19937_64 rng(5);
  const auto params = random_params(rng, 0.01, 8, 4, 4);
  Eigen::MatrixXd dense_s = Eigen::MatrixXd::Zero(8, 8);
  for (int b = 0; b < 2; ++b) {
    dense_s.block(4 * b, 4 * b, 4, 4) = params.scaling().blocks()[b];
  }
  const Eigen::MatrixXd linear = params.rotation().to_dense() * dense_s;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd x = random_matrix(rng, 8, 1, 1.2).col(0);
    const Eigen::VectorXd out = hyro::hyro_forward_row(params, x);
    CHECK((out - linear * x).norm() <= 1e-10 * (1.0 + out.norm()));
  }
}

TEST_CASE("rotation stage never moves the radius", "[pipeline]") {
  std::mt19937_64 rng(7);
  const auto params = random_params(rng, 0.05, 8, 4, 4);
  const Eigen::MatrixXd batch = random_matrix(rng, 16, 8, 1.5);
  const hyro::EmbeddingBatch in{batch, hyro::EmbeddingBatch::Role::visual};
  const auto trace = hyro::hyro_forward_traced(params, in);
  CHECK((trace.radius_after_rotation - trace.radius_after_scale)
            .cwiseAbs()
            .maxCoeff() <= 1e-10);
}

TEST_CASE("batch forward equals row forward", "[pipeline]") {
  std::mt19937_64 rng(9);
  const auto params = random_params(rng, 0.01, 8, 4, 4);
  const Eigen::MatrixXd batch = random_matrix(rng, 6, 8, 1.0);
  const hyro::EmbeddingBatch in{batch, hyro::EmbeddingBatch::Role::textual};
  const auto out = hyro::hyro_forward(params, in);
  for (int i = 0; i < 6; ++i) {
    const Eigen::VectorXd row =
        hyro::hyro_forward_row(params, batch.row(i).transpose());
    CHECK((out.rows.row(i).transpose() - row).norm() == 0.0);
  }
  const auto again = hyro::hyro_forward(params, in);
  CHECK((again.rows - out.rows).norm() == 0.0);
}

TEST_CASE("pipeline pullback matches finite differences", "[pipeline]") {
  std::mt19937_64 rng(11);
  const double step = 1e-6;
  const auto params = random_params(rng, 0.05, 6, 3, 3);
  const Eigen::MatrixXd batch = random_matrix(rng, 2, 6, 0.8);
  const Eigen::MatrixXd w = random_matrix(rng, 2, 6, 1.0);

  const auto loss = [&](const hyro::HyroParams& p, const Eigen::MatrixXd& b) {
    const hyro::EmbeddingBatch in{b, hyro::EmbeddingBatch::Role::visual};
    return (w.array() * hyro::hyro_forward(p, in).rows.array()).sum();
  };
  const hyro::EmbeddingBatch in{batch, hyro::EmbeddingBatch::Role::visual};
  const hyro::HyroGrads grads = hyro::hyro_vjp(params, in, w);

  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        hyro::HyroParams pp = params;
        hyro::HyroParams pm = params;
        Eigen::MatrixXd tp = params.rotation().theta()[b];
        Eigen::MatrixXd tm = tp;
        tp(i, j) += step;
        tm(i, j) -= step;
        pp.rotation().set_theta(b, tp);
        pm.rotation().set_theta(b, tm);
        const double fd = (loss(pp, batch) - loss(pm, batch)) / (2.0 * step);
        CHECK(grads.theta_blocks[b](i, j) == Catch::Approx(fd).margin(1e-6));

        Eigen::MatrixXd sp = params.scaling().blocks()[b];
        Eigen::MatrixXd sm = sp;
        sp(i, j) += step;
        sm(i, j) -= step;
        hyro::HyroParams qp = params;
        hyro::HyroParams qm = params;
        qp.scaling().set_block(b, sp);
        qm.scaling().set_block(b, sm);
        const double fds = (loss(qp, batch) - loss(qm, batch)) / (2.0 * step);
        CHECK(grads.scaling_blocks[b](i, j) == Catch::Approx(fds).margin(1e-6));
      }
    }
  }
  for (int r = 0; r < 2; ++r) {
    for (int k = 0; k < 6; ++k) {
      Eigen::MatrixXd bp = batch;
      Eigen::MatrixXd bm = batch;
      bp(r, k) += step;
      bm(r, k) -= step;
      const double fd = (loss(params, bp) - loss(params, bm)) / (2.0 * step);
      CHECK(grads.batch(r, k) == Catch::Approx(fd).margin(1e-6));
    }
  }
}
