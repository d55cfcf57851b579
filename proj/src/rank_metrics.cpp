// SPDX-License-Identifier: Apache-2.0
#include "bnrank/rank_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "bnrank/errors.hpp"

namespace bnrank {

namespace {

SingularSpectrum spectrum_from_sorted_energies(std::vector<double> energies, Index d, Index n) {
  SingularSpectrum spec;
  spec.d = d;
  spec.n = n;
  const auto keep = static_cast<std::size_t>(std::min(d, n));
  std::sort(energies.begin(), energies.end(), std::greater<>());
  energies.resize(std::min(keep, energies.size()));
  for (double& e : energies) e = std::max(e, 0.0);
  spec.values.reserve(energies.size());
  for (double e : energies) spec.values.push_back(std::sqrt(e * static_cast<double>(n)));
  spec.energies = std::move(energies);
  return spec;
}

}  // namespace

SingularSpectrum SingularSpectrum::from_matrix(const Matrix& h) {
  if (h.size() == 0) throw InvalidInput("empty matrix");
  if (!h.allFinite()) throw InvalidInput("non-finite entries");
  Eigen::JacobiSVD<Matrix> svd(h);
  const Vector& sv = svd.singularValues();
  SingularSpectrum spec;
  spec.d = h.rows();
  spec.n = h.cols();
  spec.values.assign(sv.data(), sv.data() + sv.size());
  std::sort(spec.values.begin(), spec.values.end(), std::greater<>());
  spec.energies.reserve(spec.values.size());
  for (double s : spec.values) spec.energies.push_back(s * s / static_cast<double>(spec.n));
  return spec;
}

SingularSpectrum SingularSpectrum::from_second_moment(const Matrix& m, Index n) {
  if (m.rows() != m.cols() || m.size() == 0) throw InvalidInput("second moment must be square");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m, Eigen::EigenvaluesOnly);
  const Vector& ev = solver.eigenvalues();
  return from_eigenvalues({ev.data(), static_cast<std::size_t>(ev.size())}, m.rows(), n);
}

SingularSpectrum SingularSpectrum::from_eigenvalues(std::span<const double> lambda, Index d, Index n) {
  if (n < 1) throw InvalidInput("batch size must be positive");
  return spectrum_from_sorted_energies({lambda.begin(), lambda.end()}, d, n);
}

Matrix second_moment(const Matrix& h) {
  if (h.rows() < 1 || h.cols() < 1) throw InvalidInput("H must have at least one row and column");
  if (!h.allFinite()) throw InvalidInput("non-finite entries in H");
  Matrix m(h.rows(), h.rows());
  m.setZero();
  m.selfadjointView<Eigen::Lower>().rankUpdate(h, 1.0 / static_cast<double>(h.cols()));
  m.triangularView<Eigen::StrictlyUpper>() = m.transpose();
  return m;
}

long hard_rank(const SingularSpectrum& spec, double tol_factor) {
  if (spec.values.empty()) return 0;
  const double smax = spec.values.front();
  if (!(smax > 0.0)) return 0;
  const double cut = smax * static_cast<double>(spec.d) * tol_factor;
  return std::count_if(spec.values.begin(), spec.values.end(), [cut](double s) { return s > cut; });
}

long soft_rank(const SingularSpectrum& spec, double tau) {
  if (tau < 0.0) throw InvalidInput("tau must be non-negative");
  // Slack for energies that equal tau up to rounding, e.g. sqrt(N)^2 / N.
  const double cut = tau * (1.0 - 1e-12);
  return std::count_if(spec.energies.begin(), spec.energies.end(), [cut](double e) { return e >= cut; });
}

double r_lower_bound(const Matrix& m) {
  const double fro_sq = m.squaredNorm();
  if (!(fro_sq > 0.0)) throw DegenerateInput("r(M) undefined for the zero matrix");
  const double tr = m.trace();
  return tr * tr / fro_sq;
}

double trace_cube(const Matrix& m) {
  // Tr(M^3) = sum_ij (M^2)_ij M_ji
  const Matrix m2 = m * m;
  return m2.cwiseProduct(m.transpose()).sum();
}

double trace_diag_square_sq(const Matrix& m) {
  // diag(M^2)_i = ||row_i||^2 for symmetric M
  return m.rowwise().squaredNorm().squaredNorm();
}

double delta_f_poly(const Matrix& m) {
  if (m.rows() != m.cols()) throw InvalidInput("M must be square");
  const double d = static_cast<double>(m.rows());
  return 2.0 * d * d - 2.0 * m.squaredNorm() - 8.0 * trace_cube(m) + 8.0 * trace_diag_square_sq(m);
}

double spectral_delta_f(std::span<const double> lambda) {
  if (lambda.empty()) throw InvalidInput("empty spectrum");
  const double d = static_cast<double>(lambda.size());
  double l1 = 0.0, l2 = 0.0, l3 = 0.0;
  for (double l : lambda) {
    if (l < 0.0) throw InvalidInput("eigenvalues must be non-negative");
    l1 += l;
    l2 += l * l;
    l3 += l * l * l;
  }
  if (std::abs(l1 - d) > 1e-8) throw InvalidInput("eigenvalues must sum to d");
  return 2.0 * d * d - 2.0 * l2 - 8.0 * l3 + 8.0 * l2 * l2 / d;
}

RankProbe::RankProbe(Index d) : solver_(d) {}

RankReport RankProbe::measure(const Matrix& m, Index n, double tau, double tol_factor) {
  solver_.compute(m, Eigen::EigenvaluesOnly);
  const Vector& ev = solver_.eigenvalues();
  const auto spec = SingularSpectrum::from_eigenvalues({ev.data(), static_cast<std::size_t>(ev.size())},
                                                       m.rows(), n);
  RankReport rep;
  rep.tau = tau;
  rep.hard_rank = hard_rank(spec, tol_factor);
  rep.soft_rank = soft_rank(spec, tau);
  rep.frobenius_m_sq = m.squaredNorm();
  rep.trace_m = m.trace();
  rep.r_lower = rep.frobenius_m_sq > 0.0 ? rep.trace_m * rep.trace_m / rep.frobenius_m_sq : 0.0;
  // eigenvalues are cheaper and as accurate as a third matmul here
  rep.trace_m3 = ev.array().cube().sum();
  rep.trace_diag_m2_sq = trace_diag_square_sq(m);
  return rep;
}

RankReport rank_report(const Matrix& m, Index n, double tau, double tol_factor) {
  RankProbe probe(m.rows());
  return probe.measure(m, n, tau, tol_factor);
}

}  // namespace bnrank
