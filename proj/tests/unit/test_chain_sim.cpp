// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "bnrank/chain_sim.hpp"
#include "bnrank/datasets.hpp"
#include "bnrank/errors.hpp"
#include "bnrank/sweep.hpp"
#include "oracles.hpp"

using namespace bnrank;

namespace {

Matrix gaussian(Index r, Index c, std::uint64_t seed) {
  RngHandle rng(seed, 0);
  return sample_weight(InitSpec{}, r, c, rng);
}

BnChainConfig linear_cfg(Index d, double gamma, long depth) {
  BnChainConfig c;
  c.d = c.n = d;
  c.gamma = gamma;
  c.depth = depth;
  return c;
}

}  // namespace

TEST_CASE("bn_op leaves rows of norm sqrt(N) alone") {
  Matrix h = gaussian(5, 9, 1);
  for (Index i = 0; i < 5; ++i) h.row(i) *= 3.0 / h.row(i).norm();
  CHECK((bn_op(h) - h).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bn_op is invariant to positive row scaling") {
  const Matrix h = gaussian(4, 6, 2);
  Matrix scaled = h;
  scaled.row(2) *= 17.5;
  CHECK((bn_op(h) - bn_op(scaled)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((bn_op(h, true) - bn_op(scaled, true)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bn_op with centering rejects constant rows") {
  CHECK_THROWS_AS(bn_op(Matrix::Ones(2, 4), true), ZeroRowError);
  CHECK_THROWS_AS(bn_op(Matrix::Zero(2, 4)), ZeroRowError);
  CHECK(bn_op(Matrix::Zero(2, 4), false, 1e-5).isZero());
}

TEST_CASE("a step with gamma 0 or identity weight is plain BN") {
  const Matrix h = gaussian(6, 6, 3);
  const Matrix w = gaussian(6, 6, 4);
  BnChainConfig cfg = linear_cfg(6, 0.0, 1);
  CHECK((bn_chain_step(h, w, cfg) - bn_op(h)).cwiseAbs().maxCoeff() < 1e-12);
  cfg.gamma = kNoSkip;
  CHECK((bn_chain_step(h, Matrix::Identity(6, 6), cfg) - bn_op(h)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("relu placement") {
  const Matrix h = gaussian(4, 8, 5);
  const Matrix w = gaussian(4, 4, 6);
  BnChainConfig cfg = linear_cfg(4, kNoSkip, 1);
  cfg.activation = Activation::relu;
  cfg.bn_epsilon = 1e-5;
  const Matrix z = w * h;
  cfg.relu_placement = ReluPlacement::pre_bn;
  CHECK((bn_chain_step(h, w, cfg) - bn_op(z.cwiseMax(0.0), false, 1e-5)).cwiseAbs().maxCoeff() < 1e-12);
  cfg.relu_placement = ReluPlacement::post_bn;
  CHECK((bn_chain_step(h, w, cfg) - bn_op(z, false, 1e-5).cwiseMax(0.0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("M-space step fixes the identity when W = 0") {
  const Matrix m = bn_chain_step_mspace(Matrix::Identity(5, 5), Matrix::Zero(5, 5), 0.7);
  CHECK((m - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("M-space step matches the written-out update") {
  const Matrix m = second_moment(bn_op(gaussian(7, 7, 8)));
  const Matrix w = gaussian(7, 7, 9);
  for (double g : {0.1, 1.0}) CHECK((bn_chain_step_mspace(m, w, g) - oracle::naive_mstep(m, w, g)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("factor-path and H-space trajectories agree") {
  BnChainConfig cfg = linear_cfg(16, 0.5, 50);
  const Matrix x = gaussian(16, 16, 10);
  RngHandle a(3, 0), b(3, 0);
  const ChainResult ms = run_bn_chain(cfg, x, a);
  cfg.force_hspace = true;
  const ChainResult hs = run_bn_chain(cfg, x, b);
  CHECK((ms.final_m - hs.final_m).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE(ms.records.size() == hs.records.size());
  for (std::size_t i = 0; i < ms.records.size(); ++i) CHECK(ms.records[i].soft_rank == hs.records[i].soft_rank);
}

TEST_CASE("rank-deficient input runs on a row-space factor that matches H-space") {
  BnChainConfig cfg = linear_cfg(10, 0.5, 10);
  const Matrix x = gaussian(10, 3, 30) * gaussian(3, 10, 31);
  RngHandle a(5, 0), b(5, 0);
  const ChainResult fac = run_bn_chain(cfg, x, a);
  cfg.force_hspace = true;
  const ChainResult hs = run_bn_chain(cfg, x, b);
  CHECK((fac.final_m - hs.final_m).cwiseAbs().maxCoeff() < 1e-8);
  for (const auto& r : fac.records) CHECK(r.hard_rank == 3);
}

TEST_CASE("rank-one state keeps its sign pattern for small gamma") {
  const Index d = 8;
  Vector s(d);
  s << 1, -1, 1, 1, -1, -1, 1, -1;
  Matrix m = s * s.transpose();
  const Matrix start = m;
  RngHandle rng(12, 0);
  Matrix w(d, d);
  for (int step = 0; step < 200; ++step) {
    sample_weight_into(InitSpec{}, w, rng);
    m = bn_chain_step_mspace(m, w, 1.0 / (8.0 * d));
  }
  CHECK((m - start).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("short chain at d = 8 keeps unit diagonal and rank at least two") {
  BnChainConfig cfg = linear_cfg(8, 0.1, 10000);
  RngHandle rng(8, 0);
  const ChainResult res = run_bn_chain(cfg, gaussian(8, 8, 13), rng);
  CHECK(res.stats.min_soft_rank >= 2);
  CHECK((res.final_m.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK(res.records.size() == 10001);
}

TEST_CASE("BN chain at d = 32 averages rank above sqrt(d)") {
  BnChainConfig cfg = linear_cfg(32, 1.0, 10000);
  RngHandle rng(0, 0);
  const ChainResult res = run_bn_chain(cfg, gaussian(32, 32, 14), rng);
  CHECK(res.stats.mean_soft_rank() >= std::sqrt(32.0));
  CHECK(res.stats.count == 10000);
}

TEST_CASE("gamma 0 chain is stationary after the first BN") {
  BnChainConfig cfg = linear_cfg(6, 0.0, 100);
  RngHandle rng(1, 0);
  const Matrix x = gaussian(6, 6, 15);
  const ChainResult res = run_bn_chain(cfg, x, rng);
  const RankReport first = rank_report(second_moment(bn_op(x)), 6, 0.5);
  CHECK(res.stats.mean_r_lower() == doctest::Approx(first.r_lower));
  CHECK(res.stats.mean_fro_m_sq() == doctest::Approx(first.frobenius_m_sq));
  CHECK(res.stats.min_soft_rank == first.soft_rank);
}

TEST_CASE("invariant check") {
  Matrix m = Matrix::Identity(3, 3);
  CHECK_NOTHROW(check_chain_invariants(m, 1, true));
  m(0, 1) = m(1, 0) = 1.01;
  CHECK_THROWS_AS(check_chain_invariants(m, 1, true), InvariantViolation);
  m(0, 1) = m(1, 0) = 0.0;
  m(2, 2) = 0.9;
  CHECK_THROWS_AS(check_chain_invariants(m, 1, true), InvariantViolation);
  CHECK_NOTHROW(check_chain_invariants(m, 1, false));
}

TEST_CASE("regularity of constant identity stats is one") {
  ErgodicStats s = ErgodicStats::for_dimension(5);
  const Matrix m = Matrix::Identity(5, 5);
  const RankReport rep = rank_report(m, 5, 0.5);
  for (int i = 0; i < 1000; ++i) s.add(rep, m);
  CHECK(estimate_regularity(s) == doctest::Approx(1.0));
  CHECK(offdiag_mean_track(s) == doctest::Approx(0.0));
  ErgodicStats few = ErgodicStats::for_dimension(5);
  few.add(rep, m);
  CHECK_THROWS_AS(estimate_regularity(few), PreconditionError);
  CHECK_THROWS_AS(ErgodicStats::for_dimension(5).mean_soft_rank(), DegenerateStats);
}

TEST_CASE("ergodic pair tracking switches to a fixed subsample above d = 64") {
  CHECK(ErgodicStats::for_dimension(64).pairs.size() == 64 * 63 / 2);
  const auto big = ErgodicStats::for_dimension(128);
  CHECK(big.pairs.size() == ErgodicStats::kSubsampledPairs);
  CHECK(big.pairs == ErgodicStats::for_dimension(128).pairs);
}

TEST_CASE("merging two halves equals one accumulator") {
  ErgodicStats all = ErgodicStats::for_dimension(4), a = all, b = all;
  RngHandle rng(2, 0);
  for (int i = 0; i < 20; ++i) {
    const Matrix m = second_moment(bn_op(sample_weight(InitSpec{}, 4, 4, rng)));
    const RankReport rep = rank_report(m, 4, 0.5);
    all.add(rep, m);
    (i < 10 ? a : b).add(rep, m);
  }
  a.merge(b);
  CHECK(a.count == all.count);
  CHECK(a.sum_fro_m_sq == doctest::Approx(all.sum_fro_m_sq));
  CHECK(a.min_soft_rank == all.min_soft_rank);
  CHECK(offdiag_mean_track(a) == doctest::Approx(offdiag_mean_track(all)));
}

TEST_CASE("vanilla chain with gamma 0 keeps the normalised input") {
  BnChainConfig cfg = linear_cfg(6, 0.0, 20);
  RngHandle rng(4, 0);
  const Matrix x = gaussian(6, 6, 16);
  const VanillaResult res = run_vanilla_chain(cfg, x, rng);
  const long r0 = res.records.front().hard_rank;
  for (const auto& r : res.records) CHECK(r.hard_rank == r0);
  CHECK(res.collapse_depth == -1);
}

TEST_CASE("vanilla linear chain without skips collapses to rank one") {
  BnChainConfig cfg = linear_cfg(32, kNoSkip, 3000);
  RngHandle rng(0, 0);
  const VanillaResult res = run_vanilla_chain(cfg, gaussian(32, 32, 17), rng);
  CHECK(res.collapse_depth > 0);
  CHECK(res.records.back().hard_rank == 1);
}

TEST_CASE("vanilla chain under uniform init with skips collapses along the run") {
  BnChainConfig cfg = linear_cfg(32, 0.5, 20000);
  cfg.init = InitSpec{InitKind::uniform_symmetric, 1.0};
  RngHandle rng(0, 0);
  const VanillaResult res = run_vanilla_chain(cfg, gaussian(32, 32, 18), rng);
  CHECK(res.collapse_depth > 0);
  CHECK(res.records.back().hard_rank == 1);
}

TEST_CASE("exactly collinear input stays rank one through a linear BN chain") {
  BnChainConfig cfg = linear_cfg(16, 1.0, 300);
  RngHandle rng(6, 0);
  const ChainResult res = collinear_amplification(cfg, 0.0, rng);
  for (const auto& r : res.records) CHECK(r.hard_rank == 1);
}

TEST_CASE("collinear chain conserves the trace of M") {
  BnChainConfig cfg = linear_cfg(32, 1.0, 200);
  RngHandle rng(7, 0);
  const ChainResult res = collinear_amplification(cfg, 0.01, rng);
  REQUIRE(res.top_singular.size() == res.records.size());
  // Only the top 10 values are kept; the full sum comes from Tr(M) = d.
  CHECK(res.final_m.trace() == doctest::Approx(32.0).epsilon(1e-12));
  for (const auto& sv : res.top_singular) {
    double sum = 0.0;
    for (double s : sv) sum += s * s / 32.0;
    CHECK(sum <= 32.0 + 1e-6);
  }
  CHECK_THROWS_AS(collinear_amplification(cfg, 0.2, rng), InvalidInput);
}

TEST_CASE("serial and parallel sweeps are bit-identical") {
  std::vector<ChainJob> jobs;
  for (int rep = 0; rep < 6; ++rep) {
    ChainJob j;
    j.kind = rep % 2 ? ChainKind::vanilla : ChainKind::bn;
    j.cfg = linear_cfg(8, 1.0, 300);
    j.seed = 99;
    j.replicate = rep;
    jobs.push_back(j);
  }
  const auto s = run_sweep_serial(jobs), p = run_sweep_parallel(jobs);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    REQUIRE_FALSE(s[i].error);
    CHECK(s[i].bn.final_m == p[i].bn.final_m);
    CHECK(s[i].bn.stats.sum_fro_m_sq == p[i].bn.stats.sum_fro_m_sq);
    REQUIRE(s[i].vanilla.records.size() == p[i].vanilla.records.size());
    for (std::size_t k = 0; k < s[i].vanilla.records.size(); ++k)
      CHECK(s[i].vanilla.records[k].r_lower == p[i].vanilla.records[k].r_lower);
  }
}

TEST_CASE("sweep captures per-job errors") {
  ChainJob bad;
  bad.cfg = linear_cfg(8, 1.0, 10);
  bad.cfg.tau = -1.0;
  const auto out = run_sweep_serial({bad});
  CHECK(out[0].error);
  CHECK_THROWS_AS(rethrow_first_error(out), InvalidInput);
}

TEST_CASE("config validation") {
  BnChainConfig cfg = linear_cfg(1, 1.0, 10);
  RngHandle rng(0, 0);
  CHECK_THROWS_AS(run_bn_chain(cfg, Matrix::Ones(1, 1), rng), InvalidInput);
  cfg = linear_cfg(4, 1.0, 10);
  CHECK_THROWS_AS(run_bn_chain(cfg, Matrix::Ones(3, 4), rng), InvalidInput);
  cfg.require_full_rank_input = true;
  CHECK_THROWS_AS(run_bn_chain(cfg, Matrix::Ones(4, 4), rng), PreconditionError);
  CHECK(linear_cfg(4, 1.0, 100000).effective_record_every() == 10);
  CHECK(linear_cfg(4, 1.0, 10000).effective_record_every() == 1);
}
