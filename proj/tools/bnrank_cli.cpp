// SPDX-License-Identifier: Apache-2.0
// bnrank <experiment> [--flags] [--config PATH]
// bnrank summarize <aggregate.csv>...
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bnrank/errors.hpp"
#include "bnrank/experiments.hpp"
#include "bnrank/network.hpp"

namespace {

constexpr int kUsageError = 2;

std::string experiment_list() {
  std::string s;
  for (const auto& n : bnrank::experiment_names()) s += "  " + n + "\n";
  return s;
}

double parse_gamma(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw bnrank::InvalidInput("bad gamma '" + s + "'");
  return v;
}

int run_summarize(int argc, char** argv) {
  CLI::App app{"Fit log-log slopes and check thresholds on aggregate CSVs", "bnrank summarize"};
  std::vector<std::string> files;
  app.add_option("files", files, "aggregate.csv files")->required()->check(CLI::ExistingFile);
  try {
    app.parse(argc - 1, argv + 1);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  try {
    std::vector<std::filesystem::path> paths(files.begin(), files.end());
    const auto report = bnrank::summarize(paths);
    std::cout << bnrank::format_summary(report);
    for (const auto& v : report.verdicts)
      if (!v.pass) return 1;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc >= 2 && std::string(argv[1]) == "summarize") return run_summarize(argc, argv);

  CLI::App app{"Rank dynamics of deep networks with and without batch normalization"};
  app.footer("experiments:\n" + experiment_list() + "\nbnrank summarize <aggregate.csv>... fits and checks saved aggregates");
  app.set_config("--config", "", "flat key=value file; command-line flags take precedence");

  bnrank::ExperimentConfig cfg;
  std::uint64_t seed = 0;
  long n = 0, depth = 0;
  int mlp_depth = 0;
  std::vector<std::string> gammas;
  std::vector<long> dims;
  std::string init = "gaussian", placement = "pre_bn";
  bool serial = false;

  app.add_option("experiment", cfg.experiment, "experiment name")->required();
  auto* seed_opt = app.add_option("--seed", seed, "master seed (else $" + std::string(bnrank::kSeedEnvVar) + ", else 0)");
  app.add_option("--replicates", cfg.replicates, "independent runs")->capture_default_str();
  app.add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
  app.add_flag("--serial", serial, "run replicates one after another");

  app.add_option("--d", cfg.d, "width of the chain / input dimension")->capture_default_str();
  auto* n_opt = app.add_option("--n", n, "batch size of the chain (default d)");
  auto* depth_opt = app.add_option("--depth", depth, "chain depth (default per experiment)");
  auto* gammas_opt = app.add_option("--gammas", gammas, "skip strengths; 'inf' drops the identity branch");
  auto* dims_opt = app.add_option("--dims", dims, "widths for sweeps over d");
  app.add_option("--init", init, "gaussian | uniform_symmetric | uniform_asymmetric")->capture_default_str();
  app.add_option("--relu-placement", placement, "pre_bn | post_bn")->capture_default_str();
  app.add_flag("--centering", cfg.centering, "subtract the row mean inside BN");
  app.add_option("--bn-epsilon", cfg.bn_epsilon, "BN epsilon for linear chains")->capture_default_str();
  app.add_option("--relu-bn-epsilon", cfg.relu_bn_epsilon, "BN epsilon for ReLU chains and nets")->capture_default_str();
  app.add_option("--tau", cfg.tau, "soft-rank threshold")->capture_default_str();
  app.add_option("--record-every", cfg.record_every, "trajectory thinning (0 = auto)")->capture_default_str();
  app.add_option("--epsilon", cfg.epsilon, "collinear input noise")->capture_default_str();
  app.add_option("--collapse-by", cfg.collapse_by, "vanilla collapse horizon")->capture_default_str();

  auto* mlp_depth_opt = app.add_option("--mlp-depth", mlp_depth, "hidden layers of the MLP (default per experiment)");
  app.add_option("--width", cfg.width, "MLP hidden width")->capture_default_str();
  app.add_option("--samples", cfg.samples, "blob samples")->capture_default_str();
  app.add_option("--classes", cfg.classes, "number of classes")->capture_default_str();
  app.add_option("--separation", cfg.separation, "blob mean separation")->capture_default_str();
  app.add_option("--init-gain", cfg.init_gain, "MLP weight std times sqrt(fan_in)")->capture_default_str();
  app.add_option("--epochs", cfg.epochs, "SGD epochs")->capture_default_str();
  app.add_option("--batch-size", cfg.batch_size, "SGD minibatch")->capture_default_str();
  app.add_option("--lr", cfg.lr, "SGD learning rate")->capture_default_str();
  app.add_option("--pretrain-steps", cfg.pretrain_steps, "gradient steps per minibatch")->capture_default_str();
  app.add_option("--pretrain-batch", cfg.pretrain_batch, "pretraining minibatch size")->capture_default_str();
  app.add_option("--pretrain-minibatches", cfg.pretrain_minibatches, "pretraining minibatches")->capture_default_str();
  app.add_option("--pretrain-mode", cfg.pretrain_mode, "layer_wise | end_to_end")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;
  }
  if (!bnrank::is_known_experiment(cfg.experiment)) {
    std::cerr << "unknown experiment '" << cfg.experiment << "'\n\n" << app.help();
    return kUsageError;
  }

  try {
    cfg.seed = bnrank::resolve_seed(seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt);
    cfg.parallel = !serial;
    if (n_opt->count()) cfg.n = n;
    if (depth_opt->count()) cfg.depth = depth;
    if (mlp_depth_opt->count()) cfg.mlp_depth = mlp_depth;
    if (gammas_opt->count()) {
      cfg.gammas.emplace();
      for (const auto& g : gammas) cfg.gammas->push_back(parse_gamma(g));
    }
    if (dims_opt->count()) cfg.dims.emplace(dims.begin(), dims.end());
    cfg.init = bnrank::parse_init_kind(init);
    cfg.relu_placement = bnrank::parse_relu_placement(placement);
    cfg.validate();
  } catch (const bnrank::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    const auto res = bnrank::run_experiment(cfg);
    std::cout << cfg.experiment << " (seed " << cfg.seed << ", " << cfg.replicates << " replicates): "
              << res.files.size() << " files under " << (cfg.out_dir / cfg.experiment).string() << "\n"
              << bnrank::format_verdicts(res.verdicts);
    if (!res.invariants_ok) {
      std::cerr << "invariant violation: " << res.error << "\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
