// SPDX-License-Identifier: Apache-2.0
#include "bnrank/chain_sim.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "bnrank/datasets.hpp"
#include "bnrank/errors.hpp"

namespace bnrank {

std::string_view to_string(Activation a) noexcept { return a == Activation::relu ? "relu" : "linear"; }

Activation parse_activation(std::string_view name) {
  if (name == "linear") return Activation::linear;
  if (name == "relu") return Activation::relu;
  throw InvalidInput("unknown activation '" + std::string(name) + "'");
}

ReluPlacement parse_relu_placement(std::string_view name) {
  if (name == "pre_bn") return ReluPlacement::pre_bn;
  if (name == "post_bn") return ReluPlacement::post_bn;
  throw InvalidInput("unknown relu placement '" + std::string(name) + "'");
}

long BnChainConfig::effective_record_every() const noexcept {
  if (record_every > 0) return record_every;
  return depth <= 10000 ? 1 : depth / 10000;
}

void BnChainConfig::validate() const {
  if (d < 2) throw InvalidInput("d must be at least 2");
  if (n < 1) throw InvalidInput("n must be positive");
  if (depth < 1) throw InvalidInput("depth must be at least 1");
  if (!(gamma >= 0.0)) throw InvalidInput("gamma must be non-negative or infinite");
  if (!(bn_epsilon >= 0.0)) throw InvalidInput("bn_epsilon must be non-negative");
  if (!(tau >= 0.0)) throw InvalidInput("tau must be non-negative");
  if (record_every < 0) throw InvalidInput("record_every must be non-negative");
  if (top_k < 0) throw InvalidInput("top_k must be non-negative");
}

// ---------------------------------------------------------------------------
// ErgodicStats

ErgodicStats ErgodicStats::for_dimension(Index d) {
  ErgodicStats s;
  if (d <= kAllPairsMaxDim) {
    for (Index i = 0; i < d; ++i)
      for (Index j = i + 1; j < d; ++j) s.pairs.emplace_back(i, j);
  } else {
    // fixed per d, independent of the run seed
    RngHandle rng(0x9a17'5eedULL + static_cast<std::uint64_t>(d), 0);
    std::set<std::pair<Index, Index>> chosen;
    const auto total = static_cast<std::uint64_t>(d) * static_cast<std::uint64_t>(d - 1) / 2;
    while (chosen.size() < std::min<std::uint64_t>(kSubsampledPairs, total)) {
      const Index i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(d)));
      const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(d)));
      if (i == j) continue;
      chosen.emplace(std::min(i, j), std::max(i, j));
    }
    s.pairs.assign(chosen.begin(), chosen.end());
  }
  s.pair_sums.assign(s.pairs.size(), 0.0);
  return s;
}

void ErgodicStats::add(const RankReport& r, const Matrix& m) {
  ++count;
  sum_soft_rank += static_cast<double>(r.soft_rank);
  sum_hard_rank += static_cast<double>(r.hard_rank);
  sum_r_lower += r.r_lower;
  sum_fro_m_sq += r.frobenius_m_sq;
  sum_tr_m3 += r.trace_m3;
  sum_tr_diag_m2_sq += r.trace_diag_m2_sq;
  min_hard_rank = std::min(min_hard_rank, r.hard_rank);
  min_soft_rank = std::min(min_soft_rank, r.soft_rank);
  for (std::size_t k = 0; k < pairs.size(); ++k) pair_sums[k] += m(pairs[k].first, pairs[k].second);
}

void ErgodicStats::merge(const ErgodicStats& o) {
  if (o.pairs != pairs) throw InvalidInput("cannot merge stats over different pair sets");
  count += o.count;
  sum_soft_rank += o.sum_soft_rank;
  sum_hard_rank += o.sum_hard_rank;
  sum_r_lower += o.sum_r_lower;
  sum_fro_m_sq += o.sum_fro_m_sq;
  sum_tr_m3 += o.sum_tr_m3;
  sum_tr_diag_m2_sq += o.sum_tr_diag_m2_sq;
  min_hard_rank = std::min(min_hard_rank, o.min_hard_rank);
  min_soft_rank = std::min(min_soft_rank, o.min_soft_rank);
  for (std::size_t k = 0; k < pair_sums.size(); ++k) pair_sums[k] += o.pair_sums[k];
}

namespace {
double mean_of(double sum, long count) {
  if (count <= 0) throw DegenerateStats("no samples accumulated");
  return sum / static_cast<double>(count);
}
}  // namespace

double ErgodicStats::mean_soft_rank() const { return mean_of(sum_soft_rank, count); }
double ErgodicStats::mean_hard_rank() const { return mean_of(sum_hard_rank, count); }
double ErgodicStats::mean_r_lower() const { return mean_of(sum_r_lower, count); }
double ErgodicStats::mean_fro_m_sq() const { return mean_of(sum_fro_m_sq, count); }
double ErgodicStats::mean_tr_m3() const { return mean_of(sum_tr_m3, count); }
double ErgodicStats::mean_tr_diag_m2_sq() const { return mean_of(sum_tr_diag_m2_sq, count); }

// ---------------------------------------------------------------------------
// Single steps

Matrix bn_op(const Matrix& h, bool centering, double eps) {
  if (!h.allFinite()) throw InvalidInput("non-finite entries in H");
  Matrix out = h;
  if (centering) out.colwise() -= out.rowwise().mean();
  const double n = static_cast<double>(h.cols());
  for (Index i = 0; i < out.rows(); ++i) {
    const double var = out.row(i).squaredNorm() / n + eps;
    if (!(var > 0.0)) throw ZeroRowError("BN input row has zero second moment", static_cast<long>(i));
    out.row(i) /= std::sqrt(var);
  }
  return out;
}

namespace {

void relu_inplace(Matrix& h) { h = h.cwiseMax(0.0); }

Matrix residual_preactivation(const Matrix& h, const Matrix& w, double gamma) {
  if (is_no_skip(gamma)) return w * h;
  if (gamma == 0.0) return h;
  Matrix z = h;
  z.noalias() += gamma * (w * h);
  return z;
}

}  // namespace

Matrix bn_chain_step(const Matrix& h, const Matrix& w, const BnChainConfig& cfg) {
  if (w.rows() != h.rows() || w.cols() != h.rows()) throw InvalidInput("W must be d x d");
  Matrix z = residual_preactivation(h, w, cfg.gamma);
  if (cfg.activation == Activation::linear) return bn_op(z, cfg.centering, cfg.bn_epsilon);
  if (cfg.relu_placement == ReluPlacement::pre_bn) {
    relu_inplace(z);
    return bn_op(z, cfg.centering, cfg.bn_epsilon);
  }
  Matrix out = bn_op(z, cfg.centering, cfg.bn_epsilon);
  relu_inplace(out);
  return out;
}

MSpaceStepper::MSpaceStepper(Index d) : a_(d, d), t_(d, d), mg_(d, d) {}

void MSpaceStepper::step(Matrix& m, const Matrix& w, double gamma) {
  const Index d = m.rows();
  if (gamma == 0.0) {
    mg_ = m;
  } else {
    if (is_no_skip(gamma)) {
      a_ = w;
    } else {
      a_ = gamma * w;
      a_.diagonal().array() += 1.0;
    }
    t_.noalias() = a_ * m;
    mg_.noalias() = t_ * a_.transpose();
  }
  Vector s(d);
  for (Index i = 0; i < d; ++i) {
    const double v = mg_(i, i);
    if (!(v > 0.0) || !std::isfinite(v)) throw ZeroRowError("M-space diagonal vanished", static_cast<long>(i));
    s[i] = 1.0 / std::sqrt(v);
  }
  for (Index j = 0; j < d; ++j) {
    m(j, j) = 1.0;
    for (Index i = j + 1; i < d; ++i) {
      const double v = 0.5 * (mg_(i, j) + mg_(j, i)) * s[i] * s[j];
      m(i, j) = v;
      m(j, i) = v;
    }
  }
}

Matrix bn_chain_step_mspace(const Matrix& m, const Matrix& w, double gamma) {
  if (m.rows() != m.cols() || w.rows() != m.rows() || w.cols() != m.cols())
    throw InvalidInput("M and W must be d x d");
  Matrix out = m;
  MSpaceStepper stepper(m.rows());
  stepper.step(out, w, gamma);
  return out;
}

// ---------------------------------------------------------------------------
// Chains

void check_chain_invariants(const Matrix& m, long layer, bool unit_diag) {
  constexpr double tol = 1e-10;
  for (Index i = 0; i < m.rows(); ++i) {
    const double dii = m(i, i);
    if (unit_diag ? std::abs(dii - 1.0) > tol : !(dii >= 0.0 && dii <= 1.0 + tol))
      throw InvariantViolation("diagonal of M out of range at layer " + std::to_string(layer));
    for (Index j = i + 1; j < m.cols(); ++j)
      if (!(std::abs(m(i, j)) <= 1.0 + tol))
        throw InvariantViolation("|M_ij| > 1 at layer " + std::to_string(layer));
  }
}

namespace {

LayerRecord to_record(const RankReport& r, long layer, int replicate) {
  return {layer, replicate, r.hard_rank, r.soft_rank, r.r_lower, r.frobenius_m_sq, r.trace_m3, r.trace_diag_m2_sq};
}

std::vector<double> top_values(const Vector& ascending_eigs, Index n, int k) {
  std::vector<double> out;
  const Index d = ascending_eigs.size();
  for (Index i = 0; i < std::min<Index>(k, d); ++i) {
    const double lam = std::max(ascending_eigs[d - 1 - i], 0.0);
    out.push_back(std::sqrt(lam * static_cast<double>(n)));
  }
  return out;
}

}  // namespace

ChainResult run_bn_chain(const BnChainConfig& cfg, const Matrix& x, RngHandle& rng, int replicate) {
  cfg.validate();
  if (x.rows() != cfg.d || x.cols() != cfg.n) throw InvalidInput("X must be d x n");
  if (cfg.require_full_rank_input && hard_rank(SingularSpectrum::from_matrix(x)) < cfg.d)
    throw PreconditionError("input X is not full rank");

  const bool mspace = cfg.activation == Activation::linear && !cfg.centering && !cfg.force_hspace;
  const bool unit_diag = cfg.bn_epsilon == 0.0 &&
                         !(cfg.activation == Activation::relu && cfg.relu_placement == ReluPlacement::post_bn);
  const long every = cfg.effective_record_every();

  ChainResult res;
  res.stats = ErgodicStats::for_dimension(cfg.d);
  res.records.reserve(static_cast<std::size_t>(cfg.depth / every + 1));

  Matrix h = bn_op(x, cfg.centering, cfg.bn_epsilon);
  Matrix m = second_moment(h);
  Matrix w(cfg.d, cfg.d);

  // A linear chain only acts from the left, so the row space of H is fixed
  // and we carry H = F V^T through the d x r factor F. Unlike the recursion
  // on M itself, F F^T stays PSD under rounding, so |M_ij| <= 1 holds on long
  // chains and the rank can never rise above r.
  Matrix f;
  if (mspace) {
    Eigen::JacobiSVD<Matrix> svd(h, Eigen::ComputeThinU);
    SingularSpectrum spec;
    spec.values.assign(svd.singularValues().data(), svd.singularValues().data() + svd.singularValues().size());
    spec.d = cfg.d;
    spec.n = cfg.n;
    const long r = hard_rank(spec, cfg.rank_tol_factor);
    if (r < 1) throw ZeroRowError("input has rank zero", 0);
    f = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
    m = f * f.transpose() / static_cast<double>(cfg.n);
    if (cfg.bn_epsilon == 0.0) m.diagonal().setOnes();
  }
  Matrix af;
  RankProbe probe(cfg.d);

  auto record = [&](const RankReport& rep, long layer) {
    res.records.push_back(to_record(rep, layer, replicate));
    if (cfg.top_k > 0) res.top_singular.push_back(top_values(probe.eigenvalues(), cfg.n, cfg.top_k));
  };

  record(probe.measure(m, cfg.n, cfg.tau, cfg.rank_tol_factor), 0);

  for (long layer = 1; layer <= cfg.depth; ++layer) {
    sample_weight_into(cfg.init, w, rng);
    if (mspace) {
      if (is_no_skip(cfg.gamma)) {
        af.noalias() = w * f;
      } else {
        af = f;
        af.noalias() += cfg.gamma * (w * f);
      }
      for (Index i = 0; i < cfg.d; ++i) {
        const double var = af.row(i).squaredNorm() / static_cast<double>(cfg.n) + cfg.bn_epsilon;
        if (!(var > 0.0)) throw ZeroRowError("BN input row has zero second moment", static_cast<long>(i));
        af.row(i) /= std::sqrt(var);
      }
      f.swap(af);
      m.noalias() = f * f.transpose() / static_cast<double>(cfg.n);
      if (cfg.bn_epsilon == 0.0) m.diagonal().setOnes();
    } else {
      h = bn_chain_step(h, w, cfg);
      m = second_moment(h);
    }
    if (cfg.check_invariants) check_chain_invariants(m, layer, unit_diag);
    const RankReport rep = probe.measure(m, cfg.n, cfg.tau, cfg.rank_tol_factor);
    res.stats.add(rep, m);
    if (layer % every == 0) record(rep, layer);
  }
  res.final_m = std::move(m);
  return res;
}

double estimate_regularity(const ErgodicStats& stats) {
  if (stats.count < 1000) throw PreconditionError("regularity needs at least 1000 samples");
  if (!(std::abs(stats.sum_tr_m3) > 0.0)) throw DegenerateStats("accumulated Tr(M^3) is zero");
  return stats.sum_tr_diag_m2_sq / stats.sum_tr_m3;
}

double offdiag_mean_track(const ErgodicStats& stats) {
  if (stats.count <= 0 || stats.pairs.empty()) throw DegenerateStats("no off-diagonal samples");
  double total = 0.0;
  for (double s : stats.pair_sums) total += s;
  return total / (static_cast<double>(stats.count) * static_cast<double>(stats.pairs.size()));
}

double power_iteration_norm(const Matrix& a, Vector& v, int max_iter, double tol) {
  if (v.size() != a.cols() || !(v.norm() > 0.0)) v = Vector::Ones(a.cols());
  v.normalize();
  double est = 0.0;
  Vector u(a.rows());
  for (int it = 0; it < max_iter; ++it) {
    u.noalias() = a * v;
    const double un = u.norm();
    if (!(un > 0.0)) return 0.0;
    v.noalias() = a.transpose() * u;
    const double vn = v.norm();
    if (!(vn > 0.0)) return 0.0;
    v /= vn;
    const double next = std::sqrt(vn);
    const bool done = std::abs(next - est) <= tol * next;
    est = next;
    if (done) break;
  }
  return est;
}

VanillaResult run_vanilla_chain(const BnChainConfig& cfg, const Matrix& x, RngHandle& rng, int replicate,
                                int top_k) {
  cfg.validate();
  if (x.rows() != cfg.d || x.cols() != cfg.n) throw InvalidInput("X must be d x n");
  const double xnorm = x.operatorNorm();
  if (!(xnorm > 0.0)) throw DegenerateInput("X is zero");
  const long every = cfg.effective_record_every();
  const bool linear = cfg.activation == Activation::linear;

  VanillaResult res;
  RankProbe probe(cfg.d);
  Matrix b = Matrix::Identity(cfg.d, cfg.d);  // B_l / ||B_l|| for linear chains
  Matrix h = x / xnorm;                       // H~_l
  Matrix w(cfg.d, cfg.d), next(cfg.d, cfg.d);
  Vector v;

  auto record = [&](long layer) {
    if (!h.allFinite()) throw NumericalOverflow("vanilla chain state overflowed at layer " + std::to_string(layer));
    const Matrix m = second_moment(h);
    RankReport rep = probe.measure(m, cfg.n, cfg.tau, cfg.rank_tol_factor);
    if (!(rep.frobenius_m_sq > 0.0)) rep.hard_rank = rep.soft_rank = 0;
    res.records.push_back(to_record(rep, layer, replicate));
    res.top_singular.push_back(top_values(probe.eigenvalues(), cfg.n, top_k));
    if (rep.hard_rank == 1 && res.collapse_depth < 0) res.collapse_depth = layer;
  };

  record(0);
  for (long layer = 1; layer <= cfg.depth; ++layer) {
    sample_weight_into(cfg.init, w, rng);
    if (linear) {
      if (is_no_skip(cfg.gamma)) {
        next.noalias() = w * b;
      } else {
        next = b;
        next.noalias() += cfg.gamma * (w * b);
      }
      const double norm = power_iteration_norm(next, v);
      if (!std::isfinite(norm) || !(norm > 0.0))
        throw NumericalOverflow("accumulated map norm is not finite at layer " + std::to_string(layer));
      b = next / norm;
      if (layer % every == 0) h.noalias() = b * x / xnorm;
    } else {
      next = residual_preactivation(h, w, cfg.gamma).cwiseMax(0.0);
      const double norm = power_iteration_norm(next, v);
      if (!std::isfinite(norm)) throw NumericalOverflow("state norm is not finite at layer " + std::to_string(layer));
      if (norm > 0.0) h = next / norm;
      else h.setZero();
    }
    if (layer % every == 0) record(layer);
  }
  return res;
}

ChainResult collinear_amplification(const BnChainConfig& cfg, double epsilon, RngHandle& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 0.1)) throw InvalidInput("epsilon must lie in [0, 0.1]");
  DatasetSpec spec;
  spec.kind = DatasetKind::near_collinear;
  spec.d = cfg.d;
  spec.n = cfg.n;
  spec.epsilon = epsilon;
  RngHandle data_rng = rng.substream(1);
  const Dataset data = generate(spec, data_rng);
  BnChainConfig c = cfg;
  c.top_k = std::max(c.top_k, 10);
  return run_bn_chain(c, data.x, rng);
}

}  // namespace bnrank
