// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "bnrank/chain_sim.hpp"
#include "bnrank/errors.hpp"
#include "bnrank/rank_metrics.hpp"
#include "oracles.hpp"

using namespace bnrank;

namespace {

SingularSpectrum spectrum_of(std::vector<double> sigma, Index d, Index n) {
  SingularSpectrum s;
  s.values = sigma;
  for (double v : sigma) s.energies.push_back(v * v / static_cast<double>(n));
  s.d = d;
  s.n = n;
  return s;
}

Matrix gaussian(Index r, Index c, std::uint64_t seed) {
  RngHandle rng(seed, 0);
  return sample_weight(InitSpec{}, r, c, rng);
}

}  // namespace

TEST_CASE("second moment of scaled identity is the identity") {
  const Matrix h = 2.0 * Matrix::Identity(4, 4);
  CHECK((second_moment(h) - Matrix::Identity(4, 4)).norm() == doctest::Approx(0.0));
}

TEST_CASE("second moment of an all-ones matrix is all ones") {
  const Matrix m = second_moment(Matrix::Ones(3, 5));
  CHECK(m.rows() == 3);
  CHECK((m - Matrix::Ones(3, 3)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("eigenvalues of M match squared singular values over N") {
  const Matrix h = gaussian(8, 8, 11);
  const Matrix m = second_moment(h);
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector sv = oracle::jacobi_singular_values(h);
  for (Index i = 0; i < 8; ++i) CHECK(es.eigenvalues()[7 - i] == doctest::Approx(sv[i] * sv[i] / 8.0).epsilon(1e-9));
}

TEST_CASE("second moment rejects empty and non-finite input") {
  CHECK_THROWS_AS(second_moment(Matrix(0, 3)), InvalidInput);
  Matrix h = Matrix::Ones(2, 2);
  h(1, 1) = std::nan("");
  CHECK_THROWS_AS(second_moment(h), InvalidInput);
}

TEST_CASE("hard rank threshold rule") {
  CHECK(hard_rank(spectrum_of({1.0, 5e-7}, 2, 2)) == 2);
  CHECK(hard_rank(spectrum_of({1.0, 1e-8}, 2, 2)) == 1);
}

TEST_CASE("hard rank of a Gaussian 16x16 agrees with exact elimination") {
  const Matrix h = gaussian(16, 16, 3);
  const long exact = oracle::exact_rank(h);
  CHECK(exact == 16);
  CHECK(hard_rank(SingularSpectrum::from_matrix(h)) == exact);
  CHECK(hard_rank(SingularSpectrum::from_second_moment(second_moment(h), 16)) == exact);
}

TEST_CASE("hard rank of low-rank products agrees with exact elimination") {
  for (Index k : {1, 3, 7}) {
    // Integer factors keep the product exactly representable, so the
    // elimination oracle sees a matrix of rank exactly k.
    RngHandle rng(40 + static_cast<std::uint64_t>(k), 0);
    Matrix a(10, k), b(k, 12);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = static_cast<double>(rng.below(7)) - 3.0;
    for (Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<double>(rng.below(7)) - 3.0;
    const Matrix h = a * b;
    const long exact = oracle::exact_rank(h);
    CHECK(hard_rank(SingularSpectrum::from_matrix(h)) == exact);
  }
}

TEST_CASE("soft rank counts energies at or above tau") {
  const std::vector<double> lambda{2.0, 0.6, 0.1};
  CHECK(soft_rank(SingularSpectrum::from_eigenvalues(lambda, 3, 10), 0.5) == 2);
  const Matrix h = std::sqrt(6.0) * Matrix::Identity(6, 6);
  CHECK(soft_rank(SingularSpectrum::from_matrix(h), 1.0) == 6);
  CHECK(soft_rank(SingularSpectrum::from_second_moment(second_moment(h), 6), 1.0) == 6);
}

TEST_CASE("soft rank of a chain state is at least (1 - tau)^2 r") {
  BnChainConfig cfg;
  cfg.d = cfg.n = 16;
  cfg.depth = 200;
  RngHandle rng(5, 0);
  const Matrix x = sample_weight(InitSpec{}, 16, 16, rng);
  const auto res = run_bn_chain(cfg, x, rng);
  const auto spec = SingularSpectrum::from_second_moment(res.final_m, 16);
  CHECK(static_cast<double>(soft_rank(spec, 0.5)) >= 0.25 * r_lower_bound(res.final_m));
}

TEST_CASE("r of the identity and of the rank-one fixed point") {
  CHECK(r_lower_bound(Matrix::Identity(7, 7)) == doctest::Approx(7.0));
  CHECK(r_lower_bound(Matrix::Ones(7, 7)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(r_lower_bound(Matrix::Zero(3, 3)), DegenerateInput);
}

TEST_CASE("r never exceeds the rank of a PSD matrix") {
  for (Index k : {1, 4, 12}) {
    const Matrix b = gaussian(12, k, 100 + static_cast<std::uint64_t>(k));
    const Matrix m = b * b.transpose();
    const Vector sv = oracle::jacobi_singular_values(m);
    long rank = 0;
    for (Index i = 0; i < sv.size(); ++i) rank += sv[i] > sv[0] * 12 * 1e-10;
    CHECK(rank == k);
    CHECK(r_lower_bound(m) <= static_cast<double>(rank) + 1e-12);
  }
}

TEST_CASE("delta_F polynomial at the identity and the rank-one state") {
  CHECK(delta_f_poly(Matrix::Identity(4, 4)) == doctest::Approx(24.0));
  CHECK(delta_f_poly(Matrix::Ones(4, 4)) == doctest::Approx(0.0));
}

TEST_CASE("trace helpers match their definitions") {
  const Matrix b = gaussian(5, 5, 9);
  const Matrix m = second_moment(b);
  CHECK(trace_cube(m) == doctest::Approx((m * m * m).trace()).epsilon(1e-12));
  const Matrix m2 = m * m;
  CHECK(trace_diag_square_sq(m) == doctest::Approx(m2.diagonal().squaredNorm()).epsilon(1e-12));
}

TEST_CASE("spectral delta_F") {
  const std::vector<double> ones{1, 1, 1, 1};
  CHECK(spectral_delta_f(ones) == doctest::Approx(24.0));
  CHECK(spectral_delta_f(ones) == doctest::Approx(delta_f_poly(Matrix::Identity(4, 4))));
  const std::vector<double> spike{6, 0, 0, 0, 0, 0};
  CHECK(spectral_delta_f(spike) == doctest::Approx(0.0));
  CHECK_THROWS_AS(spectral_delta_f(std::vector<double>{1, 1, 2}), InvalidInput);
  CHECK_THROWS_AS(spectral_delta_f(std::vector<double>{2, 2, -1}), InvalidInput);
}

TEST_CASE("spectral delta_F on the near-rank-one fixture is strongly negative") {
  const double d = 32, g = 0.1;
  std::vector<double> lambda(32, g * g);
  lambda[0] = d - g * g * (d - 1);
  CHECK(spectral_delta_f(lambda) < -g * g * d * d * 0.5);
}

TEST_CASE("spectral and matrix delta_F share the power-sum terms on a chain state") {
  BnChainConfig cfg;
  cfg.d = cfg.n = 8;
  cfg.depth = 50;
  RngHandle rng(21, 0);
  const Matrix x = sample_weight(InitSpec{}, 8, 8, rng);
  const Matrix m = run_bn_chain(cfg, x, rng).final_m;
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  std::vector<double> lambda(es.eigenvalues().data(), es.eigenvalues().data() + 8);
  for (double& l : lambda) l = std::max(l, 0.0);
  // The last term needs equal row norms of M^2; compare the rest.
  const double shared = 2 * 64.0 - 2 * m.squaredNorm() - 8 * trace_cube(m);
  double l2 = 0, l3 = 0;
  for (double l : lambda) {
    l2 += l * l;
    l3 += l * l * l;
  }
  CHECK(shared == doctest::Approx(2 * 64.0 - 2 * l2 - 8 * l3).epsilon(1e-9));
}

TEST_CASE("rank report from M agrees with the SVD of H") {
  const Matrix h = gaussian(6, 20, 31);
  const Matrix m = second_moment(h);
  const RankReport rep = rank_report(m, 20, 0.5);
  const auto spec = SingularSpectrum::from_matrix(h);
  CHECK(rep.hard_rank == hard_rank(spec));
  CHECK(rep.soft_rank == soft_rank(spec, 0.5));
  CHECK(rep.r_lower == doctest::Approx(r_lower_bound(m)));
  CHECK(rep.frobenius_m_sq == doctest::Approx(m.squaredNorm()));
  RankProbe probe(6);
  const RankReport again = probe.measure(m, 20, 0.5);
  CHECK(again.hard_rank == rep.hard_rank);
  CHECK(again.trace_m3 == doctest::Approx(rep.trace_m3));
}
