// tests/test_params.cpp

#include <cstring>
#include <random>
#include <stdexcept>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include "hyro/pipeline.hpp"

namespace {

hyro::HyroParams random_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  hyro::HyroParams params(hyro::Curvature(0.01), 8, 4, 2);
  Eigen::VectorXd theta(params.rotation().theta_flat().size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = normal(rng);
  params.rotation().set_theta_flat(theta);
  Eigen::VectorXd blocks = params.scaling().blocks_flat();
  for (Eigen::Index i = 0; i < blocks.size(); ++i) {
    blocks[i] += 0.3 * normal(rng);
  }
  params.scaling().set_blocks_flat(blocks);
  return params;
}

}  // namespace

TEST_CASE("json round trip is bit exact", "[params]") {
  const hyro::HyroParams params = random_params(42);
  const nlohmann::json j = hyro::params_to_json(params);
  const hyro::HyroParams back = hyro::params_from_json(j);

  CHECK(back.curvature() == params.curvature());
  CHECK(back.dim() == params.dim());
  const Eigen::VectorXd t0 = params.rotation().theta_flat();
  const Eigen::VectorXd t1 = back.rotation().theta_flat();
  REQUIRE(t0.size() == t1.size());
  for (Eigen::Index i = 0; i < t0.size(); ++i) {
    CHECK(std::memcmp(&t0[i], &t1[i], sizeof(double)) == 0);
  }
  const Eigen::VectorXd s0 = params.scaling().blocks_flat();
  const Eigen::VectorXd s1 = back.scaling().blocks_flat();
  REQUIRE(s0.size() == s1.size());
  for (Eigen::Index i = 0; i < s0.size(); ++i) {
    CHECK(std::memcmp(&s0[i], &s1[i], sizeof(double)) == 0);
  }
  // A second serialization of the reloaded parameters is textually stable.
  CHECK(hyro::params_to_json(back).dump() == j.dump());
}

TEST_CASE("forward outputs survive the round trip unchanged", "[params]") {
  const hyro::HyroParams params = random_params(7);
  const hyro::HyroParams back =
      hyro::params_from_json(hyro::params_to_json(params));
  std::mt19937_64 rng(99);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd batch(3, 8);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j) batch(i, j) = normal(rng);
  const hyro::EmbeddingBatch in{batch, hyro::EmbeddingBatch::Role::visual};
  const auto a = hyro::hyro_forward(params, in);
  const auto b = hyro::hyro_forward(back, in);
  CHECK((a.rows - b.rows).norm() == 0.0);
}

TEST_CASE("malformed parameter documents are rejected", "[params]") {
  const nlohmann::json good = hyro::params_to_json(random_params(1));

  SECTION("missing field") {
    for (const char* field : {"format_version", "curvature", "dim", "rotation",
                              "scaling"}) {
      nlohmann::json j = good;
      j.erase(field);
      CHECK_THROWS_AS(hyro::params_from_json(j), std::invalid_argument);
    }
  }
  SECTION("unsupported format version") {
    nlohmann::json j = good;
    j["format_version"] = 2;
    CHECK_THROWS_WITH(hyro::params_from_json(j),
                      Catch::Matchers::ContainsSubstring("format_version") &&
                          Catch::Matchers::ContainsSubstring("1"));
  }
  SECTION("wrong block count") {
    nlohmann::json j = good;
    j["rotation"]["theta_blocks"].erase(0);
    CHECK_THROWS_AS(hyro::params_from_json(j), std::invalid_argument);
  }
  SECTION("wrong entry count inside a block") {
    nlohmann::json j = good;
    j["scaling"]["blocks"][0].erase(0);
    CHECK_THROWS_AS(hyro::params_from_json(j), std::invalid_argument);
  }
  SECTION("non numeric entry") {
    nlohmann::json j = good;
    j["rotation"]["theta_blocks"][0][0] = "zero";
    CHECK_THROWS_AS(hyro::params_from_json(j), std::invalid_argument);
  }
  SECTION("indivisible block size") {
    nlohmann::json j = good;
    j["rotation"]["block_size"] = 3;
    CHECK_THROWS_AS(hyro::params_from_json(j), std::invalid_argument);
  }
  SECTION("invalid curvature") {
    nlohmann::json j = good;
    j["curvature"] = 0.0;
    CHECK_THROWS_AS(hyro::params_from_json(j), std::invalid_argument);
  }
}
