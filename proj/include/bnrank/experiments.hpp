// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bnrank/chain_sim.hpp"
#include "bnrank/csv.hpp"

namespace bnrank {

/// Fields left unset take the per-experiment default listed in the README.
struct ExperimentConfig {
  std::string experiment;
  std::uint64_t seed = 0;
  int replicates = 5;
  std::filesystem::path out_dir = "results";
  bool parallel = true;

  // chain parameters
  Index d = 32;
  std::optional<Index> n;  // defaults to d
  std::optional<long> depth;
  std::optional<std::vector<double>> gammas;
  std::optional<std::vector<Index>> dims;
  InitKind init = InitKind::gaussian;
  ReluPlacement relu_placement = ReluPlacement::pre_bn;
  bool centering = false;
  double bn_epsilon = 0.0;
  /// BN epsilon for ReLU chains and nets; without it pre-BN ReLU rows die.
  double relu_bn_epsilon = 1e-5;
  double tau = 0.5;
  long record_every = 0;
  double epsilon = 0.01;
  /// Vanilla collapse horizon checked by rank-vs-depth.
  long collapse_by = 200;

  // network parameters
  std::optional<int> mlp_depth;
  Index width = 32;
  Index samples = 256;
  int classes = 2;
  double separation = 6.0;
  double init_gain = 1.0;
  int epochs = 100;
  Index batch_size = 32;
  double lr = 0.02;
  int pretrain_steps = 75;
  Index pretrain_batch = 64;
  int pretrain_minibatches = 1;
  std::string pretrain_mode = "layer_wise";

  void validate() const;
};

const std::vector<std::string>& experiment_names();
bool is_known_experiment(const std::string& name);

struct Verdict {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ExperimentResult {
  std::vector<std::filesystem::path> files;
  std::vector<Verdict> verdicts;
  /// False if an InvariantViolation stopped the run.
  bool invariants_ok = true;
  std::string error;
};

/// Runs one named experiment, writing per-replicate CSVs and
/// <out_dir>/<experiment>/aggregate.csv. Errors other than invariant
/// violations propagate.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double rms_residual = 0.0;
  double max_abs_residual = 0.0;
};

/// Least squares of log y on log x. Needs two distinct positive x and positive y.
LogLogFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

struct SeriesFit {
  std::string file;
  std::string series;
  std::string metric;
  LogLogFit fit;
};

struct SummaryReport {
  std::vector<SeriesFit> fits;
  std::vector<Verdict> verdicts;
};

/// Log-log fits of every (series, metric) group whose x values are all
/// positive, plus the threshold checks tied to known metric names.
SummaryReport summarize(const std::vector<std::filesystem::path>& aggregate_csvs);

std::string format_summary(const SummaryReport& report);
std::string format_verdicts(const std::vector<Verdict>& verdicts);

std::string gamma_label(double gamma);

}  // namespace bnrank
