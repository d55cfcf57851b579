// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

#include "bnrank/chain_sim.hpp"
#include "bnrank/datasets.hpp"
#include "bnrank/random_init.hpp"

namespace bnrank {

/// Bias-free MLP. Hidden layer l maps h_{l-1} to
///   z = h + gamma W h   (finite gamma and square W)   or   z = W h,
///   h_l = BN(phi(z)) with BN, phi(z) without.
/// The output layer is plain logits = W_{L+1} h_L.
struct MlpModel {
  /// d_0 (input), d_1..d_L (hidden), d_out.
  std::vector<Index> layer_dims;
  /// L hidden weights followed by the output weight; W_l is d_l x d_{l-1}.
  std::vector<Matrix> weights;
  Activation activation = Activation::relu;
  /// One flag per hidden layer.
  std::vector<bool> use_bn;
  double gamma = kNoSkip;
  bool centering = false;
  double bn_epsilon = 0.0;

  int hidden_layers() const noexcept { return static_cast<int>(layer_dims.size()) - 2; }
  bool has_bn() const noexcept;
  bool has_skip(int layer) const noexcept;
  /// Throws InvalidInput on inconsistent shapes or non-finite weights.
  void validate() const;
};

/// Per-layer weight std is gain / sqrt(fan_in) for the symmetric kinds;
/// uniform_asymmetric keeps its U[0, 2/sqrt(fan_in)] support.
struct MlpInit {
  InitKind kind = InitKind::gaussian;
  double gain = 1.0;
};

/// Builds an MLP of `depth` hidden layers of width `width`.
MlpModel make_mlp(Index input_dim, Index width, int depth, Index output_dim, Activation act, bool use_bn,
                  const MlpInit& init, RngHandle& rng, double gamma = kNoSkip);

struct LayerCache {
  Matrix input;  // h_{l-1}
  Matrix pre;    // z
  Matrix act;    // phi(z)
  Matrix centered;
  Vector scale;  // per-row BN divisor
  Matrix output; // h_l
};

struct ForwardPass {
  std::vector<LayerCache> layers;
  Matrix logits;

  /// h_l for l in 1..L; hidden(0) is the input.
  const Matrix& hidden(int l) const;
};

/// Runs up to hidden layer `stop_layer` (default: all, plus logits).
ForwardPass forward(const MlpModel& model, const Matrix& x, int stop_layer = -1);

/// Per-layer gradients matching model.weights.
struct Gradients {
  std::vector<Matrix> weights;
};

struct LossResult {
  Gradients grads;
  double loss = 0.0;
};

/// Mean softmax cross-entropy over the batch.
double softmax_ce_loss(const Matrix& logits, const std::vector<int>& labels);

LossResult backward_loss(const MlpModel& model, const Matrix& x, const std::vector<int>& labels);

struct RankObjectiveResult {
  Gradients grads;  // zero for layers that were not asked for
  double r = 0.0;
};

/// d r / d H for r = Tr(M)^2 / ||M||_F^2, M = H H^T / N.
Matrix rank_objective_grad_h(const Matrix& h, double* r_out = nullptr);

/// Gradient of r(H_layer) with respect to W_1..W_layer, or only W_layer when
/// `only_top` is set. `layer` < 0 means the last hidden layer.
RankObjectiveResult backward_rank_objective(const MlpModel& model, const Matrix& x, int layer = -1,
                                            bool only_top = false);

enum class PretrainMode { end_to_end, layer_wise };

std::string_view to_string(PretrainMode mode) noexcept;
PretrainMode parse_pretrain_mode(std::string_view name);

struct PretrainConfig {
  Index minibatch_size = 64;
  int num_minibatches = 1;
  /// Ascent steps per minibatch (per layer in layer_wise mode).
  int steps_per_minibatch = 75;
  double step_size = 0.1;
  /// Halve the step until r increases. Without it, 10 consecutive
  /// decreasing steps raise StepSizeError.
  bool line_search = true;
  int max_halvings = 30;
  PretrainMode mode = PretrainMode::layer_wise;
  /// layer_wise only: update W_l alone instead of W_1..W_l.
  bool only_top_layer = false;
  /// After the ascent, rescale each hidden W_l so that H_l keeps the input's
  /// mean-square entry (see calibrate_activation_scale).
  bool calibrate_scale = true;

  void validate() const;
};

struct PretrainStep {
  int layer = 0;
  int minibatch = 0;
  int step = 0;
  double r = 0.0;
  double step_size = 0.0;
};

struct PretrainReport {
  std::vector<PretrainStep> trace;
  /// r(H_L) on the first minibatch before and after.
  double r_initial = 0.0;
  double r_final = 0.0;
  /// Layer-wise sweeps that lowered an earlier r(H_j) by more than 10%.
  std::vector<std::pair<int, int>> interference;  // (trained layer, affected layer)
};

/// Scales W_1..W_L in turn so every hidden layer's mean-square activation on
/// `x` equals that of `x`. For ReLU or linear nets without skips this leaves
/// r(H_l) unchanged at every layer, since r ignores per-layer positive scale.
void calibrate_activation_scale(MlpModel& model, const Matrix& x);

/// Rank-ascent pretraining of a BN-free model on minibatches drawn
/// i.i.d. from the columns of `data`.
PretrainReport pretrain(MlpModel& model, const Matrix& data, const PretrainConfig& cfg, RngHandle& rng);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  long hard_rank_last = 0;
};

struct SgdConfig {
  int epochs = 50;
  Index batch_size = 32;
  double lr = 0.01;
};

/// Plain minibatch SGD on softmax cross-entropy, shuffled each epoch.
/// Stats are evaluated on the full set after each epoch (epoch 0 = before training).
std::vector<EpochStats> sgd_train(MlpModel& model, const Dataset& data, const SgdConfig& cfg, RngHandle& rng);

double accuracy(const Matrix& logits, const std::vector<int>& labels);

struct AlignmentStats {
  /// Over all output neurons and sample pairs.
  double mean_abs_cos = 0.0;
  double min_abs_cos = 0.0;
  std::vector<double> per_neuron_mean;
  std::vector<double> per_neuron_min;
  /// Per-sample gradients that were (numerically) zero and skipped.
  long excluded = 0;
};

/// Pairwise |cos| of the per-sample output-layer row gradients
/// (softmax_i - onehot_i)_k * h_{L,i}.
AlignmentStats gradient_alignment_from_hidden(const Matrix& h_last, const Matrix& w_out, const std::vector<int>& labels);
AlignmentStats gradient_alignment(const MlpModel& model, const Matrix& x, const std::vector<int>& labels);

/// Text checkpoint, see README for the layout.
void save_checkpoint(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_checkpoint(const std::filesystem::path& path);

}  // namespace bnrank
