// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <string_view>
#include <utility>
#include <vector>

#include "bnrank/random_init.hpp"
#include "bnrank/rank_metrics.hpp"

namespace bnrank {

/// gamma = kNoSkip drops the identity branch: H+ = BN(W H).
inline constexpr double kNoSkip = std::numeric_limits<double>::infinity();
inline bool is_no_skip(double gamma) noexcept { return std::isinf(gamma); }

enum class Activation { linear, relu };
/// Where the ReLU sits relative to BN inside one block.
enum class ReluPlacement { pre_bn, post_bn };

std::string_view to_string(Activation a) noexcept;
Activation parse_activation(std::string_view name);
ReluPlacement parse_relu_placement(std::string_view name);

struct BnChainConfig {
  Index d = 32;
  Index n = 32;
  double gamma = 1.0;
  long depth = 10000;
  InitSpec init{};
  Activation activation = Activation::linear;
  ReluPlacement relu_placement = ReluPlacement::pre_bn;
  bool centering = false;
  double bn_epsilon = 0.0;
  /// 0 selects 1 for depth <= 1e4, else depth / 1e4. Ergodic sums always
  /// use every layer; this only thins the stored trajectory.
  long record_every = 0;
  double tau = 0.5;
  double rank_tol_factor = kDefaultRankTolFactor;
  /// Reject inputs with hard_rank(X) < d (PreconditionError).
  bool require_full_rank_input = false;
  /// Evolve linear chains in H-space too (the row-space factor path is the default).
  bool force_hspace = false;
  /// Check unit diagonal and |M_ij| <= 1 on every layer.
  bool check_invariants = true;
  /// Number of top singular values kept per recorded layer (0 = none).
  int top_k = 0;

  long effective_record_every() const noexcept;
  /// Throws InvalidInput on out-of-range fields.
  void validate() const;
};

struct HiddenState {
  Matrix h;
  long layer = 0;
};

struct SecondMoment {
  Matrix m;
};

/// One row of a chain trajectory CSV.
struct LayerRecord {
  long layer = 0;
  int replicate = 0;
  long hard_rank = 0;
  long soft_rank = 0;
  double r_lower = 0.0;
  double fro_m_sq = 0.0;
  double tr_m3 = 0.0;
  double tr_diag_m2_sq = 0.0;
};

/// Streaming depth-averages along one chain. Off-diagonal entries are
/// tracked for all pairs when d <= 64, else for a fixed subsample of 1024.
struct ErgodicStats {
  long count = 0;
  double sum_soft_rank = 0.0;
  double sum_hard_rank = 0.0;
  double sum_r_lower = 0.0;
  double sum_fro_m_sq = 0.0;
  double sum_tr_m3 = 0.0;
  double sum_tr_diag_m2_sq = 0.0;
  long min_hard_rank = std::numeric_limits<long>::max();
  long min_soft_rank = std::numeric_limits<long>::max();
  std::vector<std::pair<Index, Index>> pairs;
  std::vector<double> pair_sums;

  static constexpr Index kAllPairsMaxDim = 64;
  static constexpr std::size_t kSubsampledPairs = 1024;

  static ErgodicStats for_dimension(Index d);

  void add(const RankReport& report, const Matrix& m);
  /// Combine two accumulators over the same pair set.
  void merge(const ErgodicStats& other);

  double mean_soft_rank() const;
  double mean_hard_rank() const;
  double mean_r_lower() const;
  double mean_fro_m_sq() const;
  double mean_tr_m3() const;
  double mean_tr_diag_m2_sq() const;
};

/// Row-wise BN with alpha = 0, beta = 1: row i is divided by
/// sqrt(||row_i||^2 / N + eps), after optional mean-centering.
/// Throws ZeroRowError for a zero row when eps == 0.
Matrix bn_op(const Matrix& h, bool centering = false, double eps = 0.0);

/// One layer of H+ = BN(H + gamma W H) (or BN(W H) for kNoSkip), with the
/// ReLU inserted according to cfg.relu_placement.
Matrix bn_chain_step(const Matrix& h, const Matrix& w, const BnChainConfig& cfg);

/// The same linear step on M = H H^T / N:
/// M_g = (I + gamma W) M (I + gamma W)^T, M+ = diag(M_g)^(-1/2) M_g diag(M_g)^(-1/2).
Matrix bn_chain_step_mspace(const Matrix& m, const Matrix& w, double gamma);

/// Allocation-free M-space stepper. Rounding erodes positive semidefiniteness
/// over long chains, so run_bn_chain uses the factor path instead.
class MSpaceStepper {
 public:
  explicit MSpaceStepper(Index d);
  void step(Matrix& m, const Matrix& w, double gamma);

 private:
  Matrix a_, t_, mg_;
};

/// Throws InvariantViolation unless |M_ij| <= 1 off the diagonal and the
/// diagonal is exactly 1 (`unit_diag`) or within [0, 1]. Unit diagonal holds
/// only for eps = 0 without a trailing ReLU; otherwise BN can only shrink it.
void check_chain_invariants(const Matrix& m, long layer, bool unit_diag);

struct ChainResult {
  ErgodicStats stats;
  std::vector<LayerRecord> records;
  /// Top-k singular values of H at each recorded layer (cfg.top_k > 0).
  std::vector<std::vector<double>> top_singular;
  Matrix final_m;
};

/// Evolve the BN chain from X for cfg.depth layers. X is passed through one
/// bn_op first; layer 0 is recorded but excluded from the ergodic sums.
/// Linear chains without centering run on a d x r factor F of the row space
/// of bn_op(X), r = hard rank, with M = F F^T / N.
ChainResult run_bn_chain(const BnChainConfig& cfg, const Matrix& x, RngHandle& rng, int replicate = 0);

/// Ratio of accumulated Tr(diag(M^2)^2) to accumulated Tr(M^3).
/// PreconditionError below 1000 samples, DegenerateStats for a zero denominator.
double estimate_regularity(const ErgodicStats& stats);

struct VanillaResult {
  std::vector<LayerRecord> records;
  std::vector<std::vector<double>> top_singular;
  /// First recorded layer with hard_rank == 1, or -1.
  long collapse_depth = -1;
};

/// H~_l = B_l X / (||B_l|| ||X||) with B_l = prod (I + gamma W_k) (or prod W_k).
/// The accumulated map is renormalised every layer by a power-iteration
/// estimate of its spectral norm. ReLU chains renormalise H~ directly.
VanillaResult run_vanilla_chain(const BnChainConfig& cfg, const Matrix& x, RngHandle& rng,
                                int replicate = 0, int top_k = 10);

/// Spectral norm by power iteration on A^T A. `v` is the warm start and
/// receives the final right singular vector estimate.
double power_iteration_norm(const Matrix& a, Vector& v, int max_iter = 50, double tol = 1e-10);

/// BN chain from the near-collinear input u v^T + eps G. Records the top 10
/// singular values of H at every recorded layer.
ChainResult collinear_amplification(const BnChainConfig& cfg, double epsilon, RngHandle& rng);

/// Mean of the tracked off-diagonal M_ij over all samples.
double offdiag_mean_track(const ErgodicStats& stats);

}  // namespace bnrank
