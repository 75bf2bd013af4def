// tools/hyro.cpp
//
// Command-line front end: invariant verification, gradient checking, toy
// training and ablation, parameter import/export, and a materialization
// microbenchmark. Exit codes: 0 success, 1 validation/usage error,
// 2 invariant or tolerance failure, 3 divergence.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hyro/ball.hpp"
#include "hyro/costvolume.hpp"
#include "hyro/gradcheck.hpp"
#include "hyro/pipeline.hpp"
#include "hyro/rotation.hpp"
#include "hyro/scaling.hpp"
#include "hyro/toyalign.hpp"
#include "hyro/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCheckFailed = 2;
constexpr int kExitDiverged = 3;

std::string fmt(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

std::string fmt_full(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

struct TrainCli {
  hyro::ToyTaskConfig task;
  hyro::TrainOptions options;
  std::string config_path;
  std::string log_csv;
  std::string log_json;
  std::string params_out;
  bool run_ablation = false;
};

// Flags, then config-file values, then defaults. A JSON config holds the
// same keys as the long flag names; any flag given on the command line wins.
void apply_config_file(CLI::App* cmd, TrainCli& cli) {
  if (cli.config_path.empty()) return;
  std::ifstream in(cli.config_path);
  if (!in) {
    throw std::invalid_argument("cannot open config file: " + cli.config_path);
  }
  const nlohmann::json j = nlohmann::json::parse(in);
  if (!j.is_object()) {
    throw std::invalid_argument("config file must hold a JSON object");
  }
  const auto absent = [&](const char* flag) {
    return cmd->get_option(flag)->count() == 0;
  };
  const auto load_int = [&](const char* key, const char* flag, int& field) {
    if (j.contains(key) && absent(flag)) field = j.at(key).get<int>();
  };
  const auto load_double = [&](const char* key, const char* flag,
                               double& field) {
    if (j.contains(key) && absent(flag)) field = j.at(key).get<double>();
  };
  load_int("dim", "--dim", cli.task.dim);
  load_int("block", "--block", cli.task.rotation_block);
  load_int("scale-block", "--scale-block", cli.task.scaling_block);
  load_double("curvature", "--curvature", cli.task.curvature);
  load_int("classes", "--classes", cli.task.num_classes);
  load_int("samples-per-class", "--samples-per-class",
           cli.task.samples_per_class);
  load_double("radius-multiplier", "--radius-multiplier",
              cli.task.radius_multiplier);
  load_double("hidden-angle", "--hidden-angle", cli.task.hidden_angle);
  load_double("noise", "--noise", cli.task.noise);
  if (j.contains("seed") && absent("--seed")) {
    cli.task.seed = j.at("seed").get<std::uint64_t>();
  }
  load_int("steps", "--steps", cli.options.steps);
  load_double("lr", "--lr", cli.options.optimizer.lr);
  load_double("temperature", "--temperature", cli.options.temperature);
  load_double("weight-decay", "--weight-decay",
              cli.options.optimizer.weight_decay);
  if (j.contains("two-stream") && absent("--two-stream")) {
    cli.options.two_stream = j.at("two-stream").get<bool>();
  }
}

void add_task_flags(CLI::App* cmd, TrainCli& cli) {
  cmd->add_option("--dim", cli.task.dim, "Embedding dimension")
      ->capture_default_str();
  cmd->add_option("--block", cli.task.rotation_block, "Rotation block size")
      ->capture_default_str();
  cmd->add_option("--scale-block", cli.task.scaling_block,
                  "Scaling block size")
      ->capture_default_str();
  cmd->add_option("--curvature", cli.task.curvature, "Ball curvature c")
      ->capture_default_str();
  cmd->add_option("--classes", cli.task.num_classes, "Number of classes")
      ->capture_default_str();
  cmd->add_option("--samples-per-class", cli.task.samples_per_class,
                  "Visual samples per class")
      ->capture_default_str();
  cmd->add_option("--radius-multiplier", cli.task.radius_multiplier,
                  "Visual radius multiplier")
      ->capture_default_str();
  cmd->add_option("--hidden-angle", cli.task.hidden_angle,
                  "Hidden per-block rotation angle budget (radians)")
      ->capture_default_str();
  cmd->add_option("--noise", cli.task.noise, "Gaussian noise scale")
      ->capture_default_str();
  cmd->add_option("--seed", cli.task.seed, "Task seed")
      ->capture_default_str();
  cmd->add_option("--steps", cli.options.steps, "Optimizer steps")
      ->capture_default_str();
  cmd->add_option("--lr", cli.options.optimizer.lr, "Learning rate")
      ->capture_default_str();
  cmd->add_option("--temperature", cli.options.temperature,
                  "Softmax temperature")
      ->capture_default_str();
  cmd->add_option("--weight-decay", cli.options.optimizer.weight_decay,
                  "Decoupled weight decay")
      ->capture_default_str();
  cmd->add_flag("--two-stream", cli.options.two_stream,
                "Transform the textual stream with its own parameters");
  cmd->add_option("--config", cli.config_path,
                  "JSON config file; explicit flags override its values");
  cmd->add_option("--log-csv", cli.log_csv, "Write the training log as CSV");
  cmd->add_option("--log-json", cli.log_json,
                  "Write the training log (or ablation table) as JSON");
  cmd->add_option("--params-out", cli.params_out,
                  "Write the final parameters as JSON");
}

int run_train(CLI::App* cmd, TrainCli& cli) {
  apply_config_file(cmd, cli);
  cli.task.validate();

  if (cli.run_ablation) {
    const auto table = hyro::ablate(cli.task, cli.options);
    std::cout << "configuration    accuracy      loss\n";
    for (const auto& row : table) {
      std::printf("%-15s  %8.4f  %8.5f\n", row.name.c_str(),
                  row.final_accuracy, row.final_loss);
    }
    if (!cli.log_json.empty()) {
      nlohmann::json j;
      j["format_version"] = 1;
      j["rows"] = nlohmann::json::array();
      for (const auto& row : table) {
        j["rows"].push_back({{"name", row.name},
                             {"accuracy", row.final_accuracy},
                             {"loss", row.final_loss}});
      }
      hyro::write_text_file(cli.log_json, j.dump(2) + "\n");
    }
    return kExitOk;
  }

  const hyro::TrainResult result = hyro::train(cli.task, cli.options);
  if (!cli.log_csv.empty()) {
    hyro::write_text_file(cli.log_csv, hyro::train_log_to_csv(result.log));
  }
  if (!cli.log_json.empty()) {
    hyro::write_text_file(cli.log_json,
                          hyro::train_log_to_json(result.log).dump(2) + "\n");
  }
  if (!cli.params_out.empty()) {
    hyro::write_text_file(cli.params_out,
                          hyro::params_to_json(result.params).dump(2) + "\n");
  }
  const auto& last = result.log.rows.back();
  std::cout << "steps=" << last.step << " loss=" << fmt(last.loss)
            << " accuracy=" << fmt(last.accuracy)
            << " mean_angle=" << fmt(last.mean_angle)
            << " radius_drift=" << fmt(last.radius_drift) << "\n";
  if (result.diverged) {
    std::cerr << "training diverged; last good step " << last.step << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

int run_bench(const std::vector<int>& dims, const std::vector<int>& blocks,
              int repeats, std::uint64_t seed) {
  struct Cell {
    int dim;
    int block;
    double median_ms;
  };
  std::vector<Cell> cells;
  std::cout << "dim   block   median_ms (over " << repeats << " repeats)\n";
  for (int d : dims) {
    for (int n : blocks) {
      if (n <= 0 || d % n != 0) continue;
      hyro::BlockOrthogonal proto(d, n);
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::VectorXd flat(proto.theta_flat().size());
      for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = normal(rng);
      std::vector<double> times;
      times.reserve(static_cast<std::size_t>(repeats));
      for (int r = 0; r < repeats; ++r) {
        hyro::BlockOrthogonal rot(d, n);
        rot.set_theta_flat(flat);
        const auto start = std::chrono::steady_clock::now();
        rot.materialize();
        const auto stop = std::chrono::steady_clock::now();
        times.push_back(
            std::chrono::duration<double, std::milli>(stop - start).count());
      }
      std::sort(times.begin(), times.end());
      const double median = times[times.size() / 2];
      cells.push_back({d, n, median});
      std::printf("%-5d %-7d %.3f\n", d, n, median);
    }
  }
  // Directional claim: at large dimension, block materialization beats the
  // single full-size block.
  for (int d : dims) {
    if (d < 512) continue;
    const auto full = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) {
      return c.dim == d && c.block == d;
    });
    const auto quarter =
        std::find_if(cells.begin(), cells.end(), [&](const Cell& c) {
          return c.dim == d && c.block == d / 4;
        });
    if (full == cells.end() || quarter == cells.end()) continue;
    if (!(quarter->median_ms < full->median_ms)) {
      std::cerr << "block materialization at d=" << d
                << " was not faster than the full block\n";
      return kExitCheckFailed;
    }
    std::cout << "d=" << d << ": block " << d / 4 << " faster than " << d
              << " (" << fmt(quarter->median_ms) << " ms < "
              << fmt(full->median_ms) << " ms)\n";
  }
  return kExitOk;
}

hyro::HyroParams make_params(int dim, int block, int scale_block,
                             double curvature, bool random,
                             std::uint64_t seed) {
  hyro::HyroParams params(hyro::Curvature(curvature), dim, block, scale_block);
  if (random) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd theta(params.rotation().theta_flat().size());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      theta[i] = 0.5 * normal(rng);
    }
    params.rotation().set_theta_flat(theta);
    Eigen::VectorXd blocks = params.scaling().blocks_flat();
    for (Eigen::Index i = 0; i < blocks.size(); ++i) {
      blocks[i] += 0.3 * normal(rng);
    }
    params.scaling().set_blocks_flat(blocks);
  }
  return params;
}

// Deterministic probe batch used by `import` to exercise a freshly loaded
// parameter file end to end.
Eigen::MatrixXd probe_batch(int dim, int rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd batch(rows, dim);
  for (int i = 0; i < rows; ++i) {
    Eigen::VectorXd v(dim);
    for (int j = 0; j < dim; ++j) v[j] = normal(rng);
    batch.row(i) = (v / v.norm()).transpose();
  }
  return batch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperbolic refinement transform toolkit"};
  app.require_subcommand(1);

  // verify
  hyro::VerifyOptions verify_opts;
  auto* verify_cmd =
      app.add_subcommand("verify", "Run the runtime invariant suite");
  verify_cmd->add_option("--dim", verify_opts.dim, "Embedding dimension")
      ->capture_default_str();
  verify_cmd->add_option("--block", verify_opts.rotation_block,
                         "Rotation block size")
      ->capture_default_str();
  verify_cmd->add_option("--scale-block", verify_opts.scaling_block,
                         "Scaling block size")
      ->capture_default_str();
  verify_cmd->add_option("--curvature", verify_opts.curvature,
                         "Ball curvature c")
      ->capture_default_str();
  verify_cmd->add_option("--cases", verify_opts.cases,
                         "Randomized cases per property")
      ->capture_default_str();
  verify_cmd->add_option("--seed", verify_opts.seed, "Sampling seed")
      ->capture_default_str();

  // gradcheck
  hyro::GradCheckOptions grad_opts;
  int grad_trials = 20;
  std::uint64_t grad_seed = 42;
  std::string grad_json;
  auto* grad_cmd = app.add_subcommand(
      "gradcheck", "Compare every pullback against finite differences");
  grad_cmd->add_option("--dim", grad_opts.dim, "Embedding dimension")
      ->capture_default_str();
  grad_cmd->add_option("--block", grad_opts.rotation_block,
                       "Rotation block size")
      ->capture_default_str();
  grad_cmd->add_option("--scale-block", grad_opts.scaling_block,
                       "Scaling block size")
      ->capture_default_str();
  grad_cmd->add_option("--curvature", grad_opts.curvature, "Ball curvature c")
      ->capture_default_str();
  grad_cmd->add_option("--seed", grad_seed, "Trial seed")
      ->capture_default_str();
  grad_cmd->add_option("--trials", grad_trials, "Randomized trials per op")
      ->capture_default_str();
  grad_cmd->add_option("--step", grad_opts.step, "Finite-difference step")
      ->capture_default_str();
  grad_cmd->add_option("--tolerance", grad_opts.tolerance,
                       "Maximum relative error")
      ->capture_default_str();
  grad_cmd->add_option("--json", grad_json, "Write the JSON report here");

  // train and its ablate alias
  TrainCli train_cli;
  auto* train_cmd = app.add_subcommand("train", "Train on the synthetic task");
  add_task_flags(train_cmd, train_cli);
  train_cmd->add_flag("--ablate", train_cli.run_ablation,
                      "Run the four freeze configurations instead");

  TrainCli ablate_cli;
  ablate_cli.run_ablation = true;
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "Train the four freeze configurations and tabulate accuracy");
  add_task_flags(ablate_cmd, ablate_cli);

  // bench
  std::vector<int> bench_dims{512};
  std::vector<int> bench_blocks{128, 512};
  int bench_repeats = 5;
  std::uint64_t bench_seed = 42;
  auto* bench_cmd = app.add_subcommand(
      "bench", "Time block-diagonal materialization across block sizes");
  bench_cmd->add_option("--dims", bench_dims, "Dimensions to measure")
      ->capture_default_str();
  bench_cmd->add_option("--blocks", bench_blocks, "Block sizes to measure")
      ->capture_default_str();
  bench_cmd->add_option("--repeats", bench_repeats, "Repeats per cell (median)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench_seed, "Parameter seed")
      ->capture_default_str();

  // export
  std::string export_path;
  int export_dim = 32;
  int export_block = 8;
  int export_scale_block = 8;
  double export_curvature = 0.01;
  bool export_random = false;
  std::uint64_t export_seed = 42;
  auto* export_cmd =
      app.add_subcommand("export", "Write a parameter file");
  export_cmd->add_option("--out", export_path, "Output path")->required();
  export_cmd->add_option("--dim", export_dim, "Embedding dimension")
      ->capture_default_str();
  export_cmd->add_option("--block", export_block, "Rotation block size")
      ->capture_default_str();
  export_cmd->add_option("--scale-block", export_scale_block,
                         "Scaling block size")
      ->capture_default_str();
  export_cmd->add_option("--curvature", export_curvature, "Ball curvature c")
      ->capture_default_str();
  export_cmd->add_flag("--random", export_random,
                       "Draw random parameters instead of the identity");
  export_cmd->add_option("--seed", export_seed, "Seed for --random")
      ->capture_default_str();

  // import
  std::string import_path;
  std::string import_out;
  std::string probe_out;
  int probe_rows = 4;
  std::uint64_t probe_seed = 7;
  auto* import_cmd = app.add_subcommand(
      "import", "Load a parameter file, validate it, and run a probe batch");
  import_cmd->add_option("--in", import_path, "Parameter file")->required();
  import_cmd->add_option("--out", import_out, "Re-export the parameters here");
  import_cmd->add_option("--probe-out", probe_out,
                         "Write the probe forward outputs as CSV");
  import_cmd->add_option("--probe-rows", probe_rows, "Probe batch rows")
      ->capture_default_str();
  import_cmd->add_option("--probe-seed", probe_seed, "Probe batch seed")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (verify_cmd->parsed()) {
      const auto results = hyro::run_verify_suite(verify_opts);
      bool all_pass = true;
      for (const auto& r : results) {
        std::printf("%s  %-28s worst=%.3g tol=%.3g\n",
                    r.pass ? "PASS" : "FAIL", r.name.c_str(), r.worst,
                    r.tolerance);
        all_pass = all_pass && r.pass;
      }
      return all_pass ? kExitOk : kExitCheckFailed;
    }
    if (grad_cmd->parsed()) {
      const hyro::GradReport report =
          hyro::check_all_ops(grad_trials, grad_seed, grad_opts);
      std::printf("%-8s %-7s %-14s %-14s %s\n", "op", "trials", "max_rel",
                  "max_abs", "status");
      for (const auto& op : report.ops) {
        std::printf("%-8s %-7d %-14.3e %-14.3e %s\n", op.op.c_str(),
                    op.trials, op.max_rel_error, op.max_abs_error,
                    op.pass ? "pass" : "FAIL");
      }
      if (!grad_json.empty()) {
        hyro::write_text_file(grad_json,
                              hyro::report_to_json(report).dump(2) + "\n");
      }
      return report.passed ? kExitOk : kExitCheckFailed;
    }
    if (train_cmd->parsed()) {
      return run_train(train_cmd, train_cli);
    }
    if (ablate_cmd->parsed()) {
      return run_train(ablate_cmd, ablate_cli);
    }
    if (bench_cmd->parsed()) {
      return run_bench(bench_dims, bench_blocks, bench_repeats, bench_seed);
    }
    if (export_cmd->parsed()) {
      const hyro::HyroParams params =
          make_params(export_dim, export_block, export_scale_block,
                      export_curvature, export_random, export_seed);
      hyro::write_text_file(export_path,
                            hyro::params_to_json(params).dump(2) + "\n");
      std::cout << "wrote " << export_path << "\n";
      return kExitOk;
    }
    if (import_cmd->parsed()) {
      std::ifstream in(import_path);
      if (!in) {
        std::cerr << "error: cannot open " << import_path << "\n";
        return kExitUsage;
      }
      const nlohmann::json j = nlohmann::json::parse(in);
      const hyro::HyroParams params = hyro::params_from_json(j);
      const Eigen::MatrixXd probe =
          probe_batch(params.dim(), probe_rows, probe_seed);
      hyro::EmbeddingBatch batch{.rows = probe,
                                 .role = hyro::EmbeddingBatch::Role::visual};
      const hyro::EmbeddingBatch out = hyro::hyro_forward(params, batch);
      double digest = 0.0;
      for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
        for (Eigen::Index k = 0; k < out.rows.cols(); ++k) {
          digest += out.rows(i, k) * static_cast<double>(i + 2 * k + 1);
        }
      }
      std::cout << "dim=" << params.dim()
                << " curvature=" << fmt_full(params.curvature().value())
                << " probe_digest=" << fmt_full(digest) << "\n";
      if (!probe_out.empty()) {
        std::string csv;
        for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
          for (Eigen::Index k = 0; k < out.rows.cols(); ++k) {
            csv += fmt_full(out.rows(i, k));
            csv += (k + 1 == out.rows.cols()) ? '\n' : ',';
          }
        }
        hyro::write_text_file(probe_out, csv);
      }
      if (!import_out.empty()) {
        hyro::write_text_file(import_out,
                              hyro::params_to_json(params).dump(2) + "\n");
      }
      return kExitOk;
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
