// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace bnrank {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative cut-off of the numerical rank: singular values at or below
/// sigma_max * d * factor count as zero (numpy / torch matrix_rank rule).
inline constexpr double kDefaultRankTolFactor = 1e-7;

/// Singular values of a d x n matrix H, sorted descending, together with the
/// batch size used for the sigma^2 / n scaling of the soft rank.
struct SingularSpectrum {
  std::vector<double> values;
  /// sigma_i^2 / n, aligned with `values`. Kept separately so that spectra
  /// built from eigenvalues of M count exact ties against tau correctly.
  std::vector<double> energies;
  Index d = 0;
  Index n = 0;

  /// Full SVD of H.
  static SingularSpectrum from_matrix(const Matrix& h);

  /// Spectrum of H recovered from M = H H^T / n with a symmetric
  /// eigensolver: sigma_i = sqrt(n * lambda_i). O(d^3), independent of n.
  static SingularSpectrum from_second_moment(const Matrix& m, Index n);

  /// Same, from already computed eigenvalues of M (any order).
  static SingularSpectrum from_eigenvalues(std::span<const double> lambda, Index d, Index n);
};

/// All rank functionals of one state, as written to the trajectory CSVs.
struct RankReport {
  long hard_rank = 0;
  long soft_rank = 0;
  double r_lower = 0.0;
  double tau = 0.5;
  double frobenius_m_sq = 0.0;
  double trace_m = 0.0;
  double trace_m3 = 0.0;
  double trace_diag_m2_sq = 0.0;
};

/// M(H) = H H^T / N. Throws InvalidInput on empty or non-finite H.
Matrix second_moment(const Matrix& h);

long hard_rank(const SingularSpectrum& spec, double tol_factor = kDefaultRankTolFactor);

/// Number of singular values with sigma^2 / n >= tau. Equality counts, with a
/// relative slack of 1e-12 so that rounding does not drop exact ties.
long soft_rank(const SingularSpectrum& spec, double tau);

/// Tr(M)^2 / ||M||_F^2. Throws DegenerateInput for the zero matrix.
double r_lower_bound(const Matrix& m);

/// First-order (in gamma^2) expected change of ||M||_F^2 per BN step:
/// 2 d^2 - 2 ||M||_F^2 - 8 Tr(M^3) + 8 Tr(diag(M^2)^2).
double delta_f_poly(const Matrix& m);

/// The same polynomial expressed through the eigenvalues of an equal-row-norm M:
/// 2 d^2 - 2 ||l||_2^2 - 8 ||l||_3^3 + 8 ||l||_2^4 / d.
/// Throws InvalidInput when sum(lambda) differs from d by more than 1e-8
/// or when an eigenvalue is negative.
double spectral_delta_f(std::span<const double> lambda);

/// Tr(M^3) for symmetric M.
double trace_cube(const Matrix& m);

/// Tr(diag(M^2)^2) = sum_i (sum_k M_ik^2)^2.
double trace_diag_square_sq(const Matrix& m);

/// Everything in one pass from the second moment; the spectrum comes from
/// the symmetric eigensolver.
RankReport rank_report(const Matrix& m, Index n, double tau,
                       double tol_factor = kDefaultRankTolFactor);

/// Reusable workspace for the hot loop of long chains.
class RankProbe {
 public:
  explicit RankProbe(Index d);

  RankReport measure(const Matrix& m, Index n, double tau,
                     double tol_factor = kDefaultRankTolFactor);

  /// Eigenvalues from the last `measure` call, ascending.
  const Vector& eigenvalues() const { return solver_.eigenvalues(); }

 private:
  Eigen::SelfAdjointEigenSolver<Matrix> solver_;
};

}  // namespace bnrank
