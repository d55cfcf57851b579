// SPDX-License-Identifier: Apache-2.0
#include "bnrank/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <sstream>

#include "bnrank/datasets.hpp"
#include "bnrank/errors.hpp"
#include "bnrank/network.hpp"
#include "bnrank/sweep.hpp"

namespace bnrank {

namespace fs = std::filesystem;

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"rank-vs-depth", "rank-vs-width", "collinear-topk", "regularity",
                                                 "fro-norm",      "pretrain-compare", "break-bn",    "grad-align"};
  return names;
}

bool is_known_experiment(const std::string& name) {
  const auto& n = experiment_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

void ExperimentConfig::validate() const {
  if (!is_known_experiment(experiment)) throw InvalidInput("unknown experiment '" + experiment + "'");
  if (replicates < 1) throw InvalidInput("replicates must be positive");
  if (d < 2) throw InvalidInput("d must be at least 2");
  if (n && *n < 1) throw InvalidInput("n must be positive");
  if (depth && *depth < 1) throw InvalidInput("depth must be positive");
  if (mlp_depth && *mlp_depth < 1) throw InvalidInput("mlp_depth must be positive");
  if (width < 1 || samples < 2 || classes < 2 || epochs < 0 || batch_size < 1) throw InvalidInput("invalid network settings");
  if (!(lr >= 0.0) || !(init_gain > 0.0)) throw InvalidInput("lr and init_gain must be non-negative / positive");
  if (dims)
    for (Index v : *dims)
      if (v < 2) throw InvalidInput("dims entries must be at least 2");
  if (gammas)
    for (double g : *gammas)
      if (!(g >= 0.0)) throw InvalidInput("gammas must be non-negative or inf");
  parse_pretrain_mode(pretrain_mode);
}

std::string gamma_label(double gamma) {
  if (is_no_skip(gamma)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", gamma);
  return buf;
}

namespace {

std::string act_label(Activation a) { return std::string(to_string(a)); }

std::string fmt(double v, const char* f = "%.4g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path exp_dir(const ExperimentConfig& cfg) { return cfg.out_dir / cfg.experiment; }

std::string rep_file(const std::string& stem, int rep) { return stem + "_rep" + std::to_string(rep) + ".csv"; }

BnChainConfig chain_cfg(const ExperimentConfig& cfg, Index d, double gamma, Activation act, long depth) {
  BnChainConfig c;
  c.d = d;
  c.n = cfg.n.value_or(d);
  c.gamma = gamma;
  c.depth = depth;
  c.init = InitSpec{cfg.init, 1.0};
  c.activation = act;
  c.relu_placement = cfg.relu_placement;
  c.centering = cfg.centering;
  c.bn_epsilon = act == Activation::relu ? cfg.relu_bn_epsilon : cfg.bn_epsilon;
  c.record_every = cfg.record_every;
  c.tau = cfg.tau;
  return c;
}

std::vector<ChainOutcome> run_jobs(const ExperimentConfig& cfg, const std::vector<ChainJob>& jobs) {
  auto out = cfg.parallel ? run_sweep_parallel(jobs) : run_sweep_serial(jobs);
  rethrow_first_error(out);
  return out;
}

// Runs fn(rep) for every replicate; rethrows the first failure in rep order.
void for_each_rep(const ExperimentConfig& cfg, const std::function<void(int)>& fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.replicates));
#pragma omp parallel for schedule(dynamic, 1) if (cfg.parallel)
  for (int rep = 0; rep < cfg.replicates; ++rep) {
    try {
      fn(rep);
    } catch (...) {
      errors[static_cast<std::size_t>(rep)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Trajectory rows: one per recorded layer, one column per replicate.
void add_trajectory_rows(std::vector<AggregateRow>& rows, const std::string& series,
                         const std::vector<const std::vector<LayerRecord>*>& per_rep) {
  const std::size_t count = per_rep.front()->size();
  AggregateRow hard{series, "hard_rank", 0, {}}, soft{series, "soft_rank", 0, {}}, rl{series, "r_lower", 0, {}};
  for (std::size_t i = 0; i < count; ++i) {
    hard.x = soft.x = rl.x = static_cast<double>((*per_rep.front())[i].layer);
    hard.reps.clear();
    soft.reps.clear();
    rl.reps.clear();
    for (const auto* recs : per_rep) {
      const LayerRecord& r = recs->at(i);
      hard.reps.push_back(static_cast<double>(r.hard_rank));
      soft.reps.push_back(static_cast<double>(r.soft_rank));
      rl.reps.push_back(r.r_lower);
    }
    rows.push_back(hard);
    rows.push_back(soft);
    rows.push_back(rl);
  }
}

void finish(ExperimentResult& res, const ExperimentConfig& cfg, const std::vector<AggregateRow>& rows) {
  const fs::path agg = exp_dir(cfg) / "aggregate.csv";
  write_aggregate_csv(agg, rows);
  res.files.push_back(agg);
}

// ---------------------------------------------------------------------------

void rank_vs_depth(const ExperimentConfig& cfg, ExperimentResult& res) {
  const long depth = cfg.depth.value_or(10000);
  const auto gammas = cfg.gammas.value_or(std::vector<double>{1.0, kNoSkip});
  struct Series {
    std::string name;
    ChainKind kind;
    Activation act;
    double gamma;
  };
  std::vector<Series> series;
  for (double g : gammas)
    for (ChainKind kind : {ChainKind::bn, ChainKind::vanilla})
      for (Activation act : {Activation::linear, Activation::relu})
        series.push_back({std::string(kind == ChainKind::bn ? "bn-" : "vanilla-") + act_label(act) + "-g" + gamma_label(g),
                          kind, act, g});

  std::vector<ChainJob> jobs;
  for (const auto& s : series)
    for (int rep = 0; rep < cfg.replicates; ++rep) {
      ChainJob j;
      j.kind = s.kind;
      j.cfg = chain_cfg(cfg, cfg.d, s.gamma, s.act, depth);
      j.seed = cfg.seed;
      j.replicate = rep;
      jobs.push_back(j);
    }
  const auto out = run_jobs(cfg, jobs);

  std::vector<AggregateRow> rows;
  const long need = static_cast<long>(std::ceil(std::sqrt(static_cast<double>(cfg.d)) - 1e-12));
  for (std::size_t s = 0; s < series.size(); ++s) {
    std::vector<const std::vector<LayerRecord>*> per_rep;
    int stable = 0;
    long lowest = std::numeric_limits<long>::max();
    std::string depths;
    bool all_collapsed = true;
    for (int rep = 0; rep < cfg.replicates; ++rep) {
      const ChainOutcome& o = out[s * static_cast<std::size_t>(cfg.replicates) + static_cast<std::size_t>(rep)];
      const auto& recs = series[s].kind == ChainKind::bn ? o.bn.records : o.vanilla.records;
      per_rep.push_back(&recs);
      const fs::path f = exp_dir(cfg) / rep_file(series[s].name, rep);
      write_chain_csv(f, recs);
      res.files.push_back(f);
      if (series[s].kind == ChainKind::bn) {
        long mn = std::numeric_limits<long>::max();
        for (const auto& r : recs)
          if (r.layer > 0) mn = std::min(mn, r.soft_rank);
        lowest = std::min(lowest, mn);
        stable += mn >= need;
      } else {
        const long c = o.vanilla.collapse_depth;
        depths += (depths.empty() ? "" : " ") + std::to_string(c);
        all_collapsed = all_collapsed && c >= 0 && c <= cfg.collapse_by;
      }
    }
    add_trajectory_rows(rows, series[s].name, per_rep);
    if (series[s].kind == ChainKind::bn) {
      res.verdicts.push_back({series[s].name + ": rank_tau >= " + std::to_string(need) +
                                  " at every layer in >= 90% of replicates",
                              stable * 10 >= cfg.replicates * 9,
                              std::to_string(stable) + "/" + std::to_string(cfg.replicates) +
                                  " replicates, lowest rank " + std::to_string(lowest)});
    } else if (series[s].act == Activation::linear) {
      res.verdicts.push_back({series[s].name + ": hard rank 1 by layer " + std::to_string(cfg.collapse_by),
                              all_collapsed, "collapse depths: " + depths});
    }
  }
  finish(res, cfg, rows);
}

// Shared by rank-vs-width, regularity and fro-norm: BN linear chains over a
// (gamma, d) grid. Returns outcomes indexed [gamma][d][rep].
std::vector<ChainOutcome> grid_sweep(const ExperimentConfig& cfg, const std::vector<double>& gammas,
                                     const std::vector<Index>& dims, long depth, ExperimentResult& res) {
  std::vector<ChainJob> jobs;
  for (double g : gammas)
    for (Index d : dims)
      for (int rep = 0; rep < cfg.replicates; ++rep) {
        ChainJob j;
        j.cfg = chain_cfg(cfg, d, g, Activation::linear, depth);
        j.cfg.require_full_rank_input = true;
        j.input.require_full_rank = true;
        j.seed = cfg.seed;
        j.replicate = rep;
        jobs.push_back(j);
      }
  auto out = run_jobs(cfg, jobs);
  std::size_t k = 0;
  for (double g : gammas)
    for (Index d : dims)
      for (int rep = 0; rep < cfg.replicates; ++rep, ++k) {
        const fs::path f = exp_dir(cfg) / rep_file("g" + gamma_label(g) + "_d" + std::to_string(d), rep);
        write_chain_csv(f, out[k].bn.records);
        res.files.push_back(f);
      }
  return out;
}

using StatFn = std::function<double(const ErgodicStats&)>;

std::vector<AggregateRow> grid_rows(const ExperimentConfig& cfg, const std::vector<double>& gammas,
                                    const std::vector<Index>& dims, const std::vector<ChainOutcome>& out,
                                    const std::vector<std::pair<std::string, StatFn>>& metrics) {
  std::vector<AggregateRow> rows;
  for (std::size_t gi = 0; gi < gammas.size(); ++gi)
    for (const auto& [metric, fn] : metrics)
      for (std::size_t di = 0; di < dims.size(); ++di) {
        AggregateRow row{"g" + gamma_label(gammas[gi]), metric, static_cast<double>(dims[di]), {}};
        for (int rep = 0; rep < cfg.replicates; ++rep)
          row.reps.push_back(fn(out[(gi * dims.size() + di) * static_cast<std::size_t>(cfg.replicates) +
                                    static_cast<std::size_t>(rep)]
                                    .bn.stats));
        rows.push_back(std::move(row));
      }
  return rows;
}

std::vector<double> means_of(const std::vector<AggregateRow>& rows, const std::string& series, const std::string& metric) {
  std::vector<double> out;
  for (const auto& r : rows)
    if (r.series == series && r.metric == metric) out.push_back(r.mean());
  return out;
}

void rank_vs_width(const ExperimentConfig& cfg, ExperimentResult& res) {
  const long depth = cfg.depth.value_or(10000);
  const auto gammas = cfg.gammas.value_or(std::vector<double>{0.5, 1.0, kNoSkip});
  const auto dims = cfg.dims.value_or(std::vector<Index>{8, 16, 32, 64, 128});
  const auto out = grid_sweep(cfg, gammas, dims, depth, res);
  const auto rows = grid_rows(cfg, gammas, dims, out,
                              {{"avg_soft_rank", [](const ErgodicStats& s) { return s.mean_soft_rank(); }},
                               {"avg_hard_rank", [](const ErgodicStats& s) { return s.mean_hard_rank(); }},
                               {"avg_r_lower", [](const ErgodicStats& s) { return s.mean_r_lower(); }}});
  std::vector<double> xs(dims.begin(), dims.end());
  for (double g : gammas) {
    const auto fit = loglog_fit(xs, means_of(rows, "g" + gamma_label(g), "avg_soft_rank"));
    res.verdicts.push_back({"g" + gamma_label(g) + ": slope of avg rank_tau vs d in [0.35, 0.65]",
                            fit.slope >= 0.35 && fit.slope <= 0.65,
                            "slope " + fmt(fit.slope) + ", rms residual " + fmt(fit.rms_residual)});
  }
  finish(res, cfg, rows);
}

void regularity(const ExperimentConfig& cfg, ExperimentResult& res) {
  const long depth = cfg.depth.value_or(10000);
  const auto gammas = cfg.gammas.value_or(std::vector<double>{0.1, 1.0});
  const auto dims = cfg.dims.value_or(std::vector<Index>{16, 32, 64});
  const auto out = grid_sweep(cfg, gammas, dims, depth, res);
  const auto rows = grid_rows(cfg, gammas, dims, out, {{"alpha", estimate_regularity}});
  for (const auto& r : rows) {
    if (r.x <= 10) continue;
    const double worst = *std::max_element(r.reps.begin(), r.reps.end());
    res.verdicts.push_back({r.series + " d=" + fmt(r.x, "%.0f") + ": alpha < 0.9", worst < 0.9, "max alpha " + fmt(worst)});
  }
  finish(res, cfg, rows);
}

void fro_norm(const ExperimentConfig& cfg, ExperimentResult& res) {
  const long depth = cfg.depth.value_or(10000);
  const auto gammas = cfg.gammas.value_or(std::vector<double>{0.1, 1.0});
  const auto dims = cfg.dims.value_or(std::vector<Index>{16, 32, 64});
  const auto out = grid_sweep(cfg, gammas, dims, depth, res);
  const auto rows = grid_rows(
      cfg, gammas, dims, out,
      {{"avg_fro_m_sq", [](const ErgodicStats& s) { return s.mean_fro_m_sq(); }},
       {"log2_avg_fro_m_sq", [](const ErgodicStats& s) { return std::log2(s.mean_fro_m_sq()); }}});
  for (const auto& r : rows) {
    if (r.metric != "log2_avg_fro_m_sq") continue;
    const double worst = *std::max_element(r.reps.begin(), r.reps.end());
    const double bound = 1.5 * std::log2(r.x) + 0.5;
    res.verdicts.push_back({r.series + " d=" + fmt(r.x, "%.0f") + ": log2 avg |M|_F^2 <= 1.5 log2 d + 0.5",
                            worst <= bound, fmt(worst) + " vs " + fmt(bound)});
  }
  std::vector<double> xs(dims.begin(), dims.end());
  for (double g : gammas) {
    const auto fit = loglog_fit(xs, means_of(rows, "g" + gamma_label(g), "avg_fro_m_sq"));
    res.verdicts.push_back({"g" + gamma_label(g) + ": slope of avg |M|_F^2 vs d in [1.2, 1.7]",
                            fit.slope >= 1.2 && fit.slope <= 1.7, "slope " + fmt(fit.slope)});
  }
  finish(res, cfg, rows);
}

void collinear_topk(const ExperimentConfig& cfg, ExperimentResult& res) {
  const long depth = cfg.depth.value_or(1000);
  const auto gammas = cfg.gammas.value_or(std::vector<double>{1.0});
  std::vector<AggregateRow> rows;
  for (double g : gammas) {
    const std::string series = "g" + gamma_label(g);
    std::vector<ChainResult> out(static_cast<std::size_t>(cfg.replicates));
    for_each_rep(cfg, [&](int rep) {
      RngHandle rng(cfg.seed, static_cast<std::uint64_t>(rep));
      BnChainConfig c = chain_cfg(cfg, cfg.d, g, Activation::linear, depth);
      out[static_cast<std::size_t>(rep)] = collinear_amplification(c, cfg.epsilon, rng);
    });
    const double n = static_cast<double>(cfg.n.value_or(cfg.d));
    bool amplified_all = true;
    std::string first_layers;
    for (int rep = 0; rep < cfg.replicates; ++rep) {
      auto& o = out[static_cast<std::size_t>(rep)];
      for (auto& r : o.records) r.replicate = rep;
      const fs::path f = exp_dir(cfg) / rep_file(series, rep);
      write_chain_csv(f, o.records);
      res.files.push_back(f);
      long first = -1;
      for (std::size_t i = 0; i < o.records.size() && first < 0; ++i) {
        const auto& sv = o.top_singular[i];
        if (sv.size() >= 2 && sv[1] * sv[1] >= 0.1 * sv[0] * sv[0]) first = o.records[i].layer;
      }
      amplified_all = amplified_all && first >= 0;
      first_layers += (first_layers.empty() ? "" : " ") + std::to_string(first);
    }
    const std::size_t k_max = out.front().top_singular.front().size();
    for (std::size_t k = 0; k < k_max; ++k)
      for (std::size_t i = 0; i < out.front().records.size(); ++i) {
        AggregateRow row{series, "sv_sq_" + std::to_string(k + 1), static_cast<double>(out.front().records[i].layer), {}};
        for (const auto& o : out) row.reps.push_back(o.top_singular[i][k] * o.top_singular[i][k] / n);
        rows.push_back(std::move(row));
      }
    res.verdicts.push_back({series + ": sigma_2^2 rises above 0.1 sigma_1^2 within " + std::to_string(depth) + " layers",
                            amplified_all, "first layers: " + first_layers});
  }
  finish(res, cfg, rows);
}

Dataset blobs(const ExperimentConfig& cfg, RngHandle& rng) {
  DatasetSpec ds;
  ds.kind = DatasetKind::gaussian_blobs;
  ds.d = cfg.d;
  ds.n = cfg.samples;
  ds.num_classes = cfg.classes;
  ds.separation = cfg.separation;
  return generate(ds, rng);
}

void add_training_rows(CsvTable& table, const std::string& series, int rep, const std::vector<EpochStats>& trace) {
  for (const auto& e : trace)
    table.add_row({std::to_string(e.epoch), std::to_string(rep), series, format_double(e.loss),
                   format_double(e.accuracy), std::to_string(e.hard_rank_last)});
}

const std::vector<std::string> kTrainColumns = {"epoch", "replicate", "series", "loss", "accuracy", "hard_rank_last"};

void training_aggregate(std::vector<AggregateRow>& rows, const std::string& series,
                        const std::vector<std::vector<EpochStats>>& traces) {
  for (std::size_t e = 0; e < traces.front().size(); ++e) {
    AggregateRow acc{series, "accuracy", static_cast<double>(e), {}}, loss{series, "loss", static_cast<double>(e), {}},
        rank{series, "hard_rank_last", static_cast<double>(e), {}};
    for (const auto& t : traces) {
      acc.reps.push_back(t[e].accuracy);
      loss.reps.push_back(t[e].loss);
      rank.reps.push_back(static_cast<double>(t[e].hard_rank_last));
    }
    rows.push_back(std::move(acc));
    rows.push_back(std::move(loss));
    rows.push_back(std::move(rank));
  }
}

double best_accuracy(const std::vector<EpochStats>& t) {
  double best = 0.0;
  for (const auto& e : t) best = std::max(best, e.accuracy);
  return best;
}

void pretrain_compare(const ExperimentConfig& cfg, ExperimentResult& res) {
  const int depth = cfg.mlp_depth.value_or(32);
  const auto R = static_cast<std::size_t>(cfg.replicates);
  std::vector<std::vector<EpochStats>> plain(R), pre(R);
  std::vector<PretrainReport> reports(R);
  for_each_rep(cfg, [&](int rep) {
    const auto i = static_cast<std::size_t>(rep);
    RngHandle rng(cfg.seed, static_cast<std::uint64_t>(rep));
    RngHandle data_rng = rng.substream(1), model_rng = rng.substream(2), pre_rng = rng.substream(3);
    const Dataset data = blobs(cfg, data_rng);
    MlpModel base = make_mlp(cfg.d, cfg.width, depth, cfg.classes, Activation::relu, false,
                             MlpInit{cfg.init, cfg.init_gain}, model_rng);
    MlpModel trained = base;
    PretrainConfig pc;
    pc.minibatch_size = cfg.pretrain_batch;
    pc.num_minibatches = cfg.pretrain_minibatches;
    pc.steps_per_minibatch = cfg.pretrain_steps;
    pc.mode = parse_pretrain_mode(cfg.pretrain_mode);
    reports[i] = pretrain(trained, data.x, pc, pre_rng);
    const SgdConfig sc{cfg.epochs, cfg.batch_size, cfg.lr};
    RngHandle sgd_a = rng.substream(4), sgd_b = rng.substream(4);
    plain[i] = sgd_train(base, data, sc, sgd_a);
    pre[i] = sgd_train(trained, data, sc, sgd_b);
  });

  std::vector<AggregateRow> rows;
  bool pre_ok = true, plain_ok = true, r_ok = true;
  std::string pre_acc, plain_acc, ratios;
  AggregateRow r0{"pretrain", "r_initial", 0, {}}, r1{"pretrain", "r_final", 0, {}}, inter{"pretrain", "interference", 0, {}};
  for (std::size_t i = 0; i < R; ++i) {
    const int rep = static_cast<int>(i);
    CsvTable t(kTrainColumns);
    add_training_rows(t, "unpretrained", rep, plain[i]);
    add_training_rows(t, "pretrained", rep, pre[i]);
    const fs::path f = exp_dir(cfg) / rep_file("train", rep);
    t.write(f);
    res.files.push_back(f);

    CsvTable p({"layer", "minibatch", "step", "r", "step_size"});
    for (const auto& s : reports[i].trace)
      p.add_row({std::to_string(s.layer), std::to_string(s.minibatch), std::to_string(s.step), format_double(s.r),
                 format_double(s.step_size)});
    const fs::path pf = exp_dir(cfg) / rep_file("pretrain", rep);
    p.write(pf);
    res.files.push_back(pf);

    const double bp = best_accuracy(pre[i]), bu = best_accuracy(plain[i]);
    const double ratio = reports[i].r_final / reports[i].r_initial;
    pre_ok = pre_ok && bp >= 0.9;
    plain_ok = plain_ok && bu < 0.6;
    r_ok = r_ok && ratio >= 5.0;
    pre_acc += (pre_acc.empty() ? "" : " ") + fmt(bp, "%.3f");
    plain_acc += (plain_acc.empty() ? "" : " ") + fmt(bu, "%.3f");
    ratios += (ratios.empty() ? "" : " ") + fmt(ratio, "%.2f");
    r0.reps.push_back(reports[i].r_initial);
    r1.reps.push_back(reports[i].r_final);
    inter.reps.push_back(static_cast<double>(reports[i].interference.size()));
  }
  training_aggregate(rows, "unpretrained", plain);
  training_aggregate(rows, "pretrained", pre);
  rows.push_back(r0);
  rows.push_back(r1);
  rows.push_back(inter);
  const std::string within = " within " + std::to_string(cfg.epochs) + " epochs";
  res.verdicts.push_back({"pretrained reaches accuracy >= 0.9" + within, pre_ok, "best accuracies: " + pre_acc});
  res.verdicts.push_back({"unpretrained stays below 0.6" + within, plain_ok, "best accuracies: " + plain_acc});
  res.verdicts.push_back({"r(H_L) after pretraining >= 5x initial", r_ok, "ratios: " + ratios});
  finish(res, cfg, rows);
}

void break_bn(const ExperimentConfig& cfg, ExperimentResult& res) {
  const long depth = cfg.depth.value_or(10000);
  const int mlp_depth = cfg.mlp_depth.value_or(32);
  const InitKind sym = cfg.init == InitKind::uniform_asymmetric ? InitKind::gaussian : cfg.init;
  const double gamma = cfg.gammas ? cfg.gammas->front() : 1.0;
  std::vector<ChainJob> jobs;
  for (InitKind kind : {sym, InitKind::uniform_asymmetric})
    for (int rep = 0; rep < cfg.replicates; ++rep) {
      ChainJob j;
      j.cfg = chain_cfg(cfg, cfg.d, gamma, Activation::linear, depth);
      j.cfg.init = InitSpec{kind, 1.0};
      j.seed = cfg.seed;
      j.replicate = rep;
      jobs.push_back(j);
    }
  const auto out = run_jobs(cfg, jobs);

  std::vector<AggregateRow> rows;
  const char* names[] = {"symmetric", "asymmetric"};
  for (int s = 0; s < 2; ++s) {
    AggregateRow off{names[s], "offdiag_mean", 0, {}}, soft{names[s], "avg_soft_rank", 0, {}};
    for (int rep = 0; rep < cfg.replicates; ++rep) {
      const auto& o = out[static_cast<std::size_t>(s * cfg.replicates + rep)].bn;
      const fs::path f = exp_dir(cfg) / rep_file(std::string("chain-") + names[s], rep);
      write_chain_csv(f, o.records);
      res.files.push_back(f);
      off.reps.push_back(offdiag_mean_track(o.stats));
      soft.reps.push_back(o.stats.mean_soft_rank());
    }
    const double worst_abs = s == 0 ? std::max(std::abs(*std::max_element(off.reps.begin(), off.reps.end())),
                                               std::abs(*std::min_element(off.reps.begin(), off.reps.end())))
                                    : *std::min_element(off.reps.begin(), off.reps.end());
    if (s == 0)
      res.verdicts.push_back({"symmetric init: |off-diagonal ergodic mean| < 0.05", worst_abs < 0.05, "worst " + fmt(worst_abs)});
    else
      res.verdicts.push_back({"asymmetric init: off-diagonal ergodic mean > 0.2", worst_abs > 0.2, "lowest " + fmt(worst_abs)});
    rows.push_back(std::move(off));
    rows.push_back(std::move(soft));
  }

  // BN ReLU MLP trained from both inits on the blobs.
  const auto R = static_cast<std::size_t>(cfg.replicates);
  std::vector<std::vector<EpochStats>> tr_sym(R), tr_asym(R);
  for_each_rep(cfg, [&](int rep) {
    const auto i = static_cast<std::size_t>(rep);
    RngHandle rng(cfg.seed, static_cast<std::uint64_t>(rep));
    RngHandle data_rng = rng.substream(1), m1 = rng.substream(2), m2 = rng.substream(2);
    const Dataset data = blobs(cfg, data_rng);
    MlpModel a = make_mlp(cfg.d, cfg.width, mlp_depth, cfg.classes, Activation::relu, true,
                          MlpInit{sym, std::sqrt(2.0)}, m1);
    MlpModel b = make_mlp(cfg.d, cfg.width, mlp_depth, cfg.classes, Activation::relu, true,
                          MlpInit{InitKind::uniform_asymmetric, 1.0}, m2);
    a.bn_epsilon = b.bn_epsilon = cfg.relu_bn_epsilon;
    a.centering = b.centering = cfg.centering;
    const SgdConfig sc{cfg.epochs, cfg.batch_size, cfg.lr};
    RngHandle s1 = rng.substream(4), s2 = rng.substream(4);
    tr_sym[i] = sgd_train(a, data, sc, s1);
    tr_asym[i] = sgd_train(b, data, sc, s2);
  });
  for (std::size_t i = 0; i < R; ++i) {
    CsvTable t(kTrainColumns);
    add_training_rows(t, "mlp-symmetric", static_cast<int>(i), tr_sym[i]);
    add_training_rows(t, "mlp-asymmetric", static_cast<int>(i), tr_asym[i]);
    const fs::path f = exp_dir(cfg) / rep_file("train", static_cast<int>(i));
    t.write(f);
    res.files.push_back(f);
  }
  training_aggregate(rows, "mlp-symmetric", tr_sym);
  training_aggregate(rows, "mlp-asymmetric", tr_asym);
  finish(res, cfg, rows);
}

void grad_align(const ExperimentConfig& cfg, ExperimentResult& res) {
  const int max_depth = cfg.mlp_depth.value_or(64);
  std::vector<int> depths;
  for (int l = 1; l < max_depth; l *= 2) depths.push_back(l);
  depths.push_back(max_depth);
  struct Series {
    std::string name;
    Activation act;
    bool bn;
  };
  const std::vector<Series> series = {{"vanilla-linear", Activation::linear, false},
                                      {"vanilla-relu", Activation::relu, false},
                                      {"bn-linear", Activation::linear, true},
                                      {"bn-relu", Activation::relu, true}};
  const auto R = static_cast<std::size_t>(cfg.replicates);
  const Index n = cfg.n.value_or(cfg.d);
  // stats[rep][series][depth]
  std::vector<std::vector<std::vector<AlignmentStats>>> stats(R);
  for_each_rep(cfg, [&](int rep) {
    RngHandle rng(cfg.seed, static_cast<std::uint64_t>(rep));
    RngHandle data_rng = rng.substream(1);
    const Matrix x = sample_weight(InitSpec{}, cfg.d, n, data_rng);
    std::vector<int> labels;
    for (Index j = 0; j < n; ++j) labels.push_back(static_cast<int>(data_rng.below(static_cast<std::uint64_t>(cfg.classes))));
    auto& mine = stats[static_cast<std::size_t>(rep)];
    for (std::size_t s = 0; s < series.size(); ++s) {
      mine.emplace_back();
      for (int depth : depths) {
        RngHandle mrng = rng.substream(1000 * (s + 1) + static_cast<std::uint64_t>(depth));
        MlpModel m = make_mlp(cfg.d, cfg.width, depth, cfg.classes, series[s].act, series[s].bn,
                              MlpInit{cfg.init, cfg.init_gain}, mrng);
        m.bn_epsilon = series[s].act == Activation::relu ? cfg.relu_bn_epsilon : cfg.bn_epsilon;
        m.centering = cfg.centering;
        mine.back().push_back(gradient_alignment(m, x, labels));
      }
    }
  });

  std::vector<AggregateRow> rows;
  for (std::size_t i = 0; i < R; ++i) {
    CsvTable t({"depth", "replicate", "series", "mean_abs_cos", "min_abs_cos", "excluded"});
    for (std::size_t s = 0; s < series.size(); ++s)
      for (std::size_t k = 0; k < depths.size(); ++k) {
        const auto& a = stats[i][s][k];
        t.add_row({std::to_string(depths[k]), std::to_string(i), series[s].name, format_double(a.mean_abs_cos),
                   format_double(a.min_abs_cos), std::to_string(a.excluded)});
      }
    const fs::path f = exp_dir(cfg) / rep_file("align", static_cast<int>(i));
    t.write(f);
    res.files.push_back(f);
  }
  for (std::size_t s = 0; s < series.size(); ++s)
    for (std::size_t k = 0; k < depths.size(); ++k) {
      AggregateRow mean{series[s].name, "mean_abs_cos", static_cast<double>(depths[k]), {}};
      AggregateRow mn{series[s].name, "min_abs_cos", static_cast<double>(depths[k]), {}};
      for (std::size_t i = 0; i < R; ++i) {
        mean.reps.push_back(stats[i][s][k].mean_abs_cos);
        mn.reps.push_back(stats[i][s][k].min_abs_cos);
      }
      rows.push_back(std::move(mean));
      rows.push_back(std::move(mn));
    }
  const std::string at = " at depth " + std::to_string(max_depth);
  for (std::size_t s = 0; s < series.size(); ++s) {
    double lo = 1.0, hi = 0.0;
    for (std::size_t i = 0; i < R; ++i) {
      lo = std::min(lo, stats[i][s].back().mean_abs_cos);
      hi = std::max(hi, stats[i][s].back().mean_abs_cos);
    }
    const std::string range = "mean |cos| range [" + fmt(lo) + ", " + fmt(hi) + "]";
    if (series[s].name == "vanilla-linear")
      res.verdicts.push_back({series[s].name + ": mean |cos| > 0.99" + at, lo > 0.99, range});
    else if (series[s].bn)
      res.verdicts.push_back({series[s].name + ": mean |cos| < 0.5" + at, hi < 0.5, range});
    else
      res.verdicts.push_back({series[s].name + ": mean |cos| (informational)" + at, true, range});
  }
  finish(res, cfg, rows);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult res;
  static const std::map<std::string, std::function<void(const ExperimentConfig&, ExperimentResult&)>> table = {
      {"rank-vs-depth", rank_vs_depth}, {"rank-vs-width", rank_vs_width},       {"collinear-topk", collinear_topk},
      {"regularity", regularity},       {"fro-norm", fro_norm},                 {"pretrain-compare", pretrain_compare},
      {"break-bn", break_bn},           {"grad-align", grad_align}};
  try {
    table.at(cfg.experiment)(cfg, res);
  } catch (const InvariantViolation& e) {
    res.invariants_ok = false;
    res.error = e.what();
  }
  return res;
}

// ---------------------------------------------------------------------------
// Summaries

LogLogFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("log-log fit needs matching x and y with >= 2 points");
  const std::size_t k = x.size();
  std::vector<double> lx(k), ly(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidInput("log-log fit needs positive values");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(k);
  my /= static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw InvalidInput("log-log fit needs two distinct x values");
  LogLogFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double r = ly[i] - (f.intercept + f.slope * lx[i]);
    ss += r * r;
    f.max_abs_residual = std::max(f.max_abs_residual, std::abs(r));
  }
  f.rms_residual = std::sqrt(ss / static_cast<double>(k));
  return f;
}

SummaryReport summarize(const std::vector<fs::path>& paths) {
  SummaryReport rep;
  for (const auto& p : paths) {
    const auto rows = read_aggregate_csv(p);
    std::map<std::pair<std::string, std::string>, std::vector<const AggregateRow*>> groups;
    for (const auto& r : rows) groups[{r.series, r.metric}].push_back(&r);
    for (const auto& [key, members] : groups) {
      const auto& [series, metric] = key;
      std::vector<double> xs, ys;
      bool positive = true;
      for (const auto* r : members) {
        xs.push_back(r->x);
        ys.push_back(r->mean());
        positive = positive && r->x > 0.0 && ys.back() > 0.0;
      }
      std::vector<double> distinct = xs;
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      if (positive && distinct.size() >= 2 && distinct.size() == xs.size()) {
        const auto fit = loglog_fit(xs, ys);
        rep.fits.push_back({p.string(), series, metric, fit});
        if (metric == "avg_soft_rank")
          rep.verdicts.push_back({series + ": avg rank_tau slope in [0.35, 0.65]", fit.slope >= 0.35 && fit.slope <= 0.65,
                                  "slope " + fmt(fit.slope)});
        if (metric == "avg_fro_m_sq")
          rep.verdicts.push_back({series + ": avg |M|_F^2 slope in [1.2, 1.7]", fit.slope >= 1.2 && fit.slope <= 1.7,
                                  "slope " + fmt(fit.slope)});
      }
      for (std::size_t i = 0; i < xs.size(); ++i) {
        if (metric == "alpha" && xs[i] > 10)
          rep.verdicts.push_back({series + " d=" + fmt(xs[i], "%.0f") + ": alpha < 0.9", ys[i] < 0.9, "mean " + fmt(ys[i])});
        if (metric == "avg_fro_m_sq" && xs[i] > 0) {
          const double bound = 1.5 * std::log2(xs[i]) + 0.5;
          rep.verdicts.push_back({series + " d=" + fmt(xs[i], "%.0f") + ": log2 avg |M|_F^2 <= 1.5 log2 d + 0.5",
                                  std::log2(ys[i]) <= bound, fmt(std::log2(ys[i])) + " vs " + fmt(bound)});
        }
      }
    }
  }
  return rep;
}

std::string format_verdicts(const std::vector<Verdict>& verdicts) {
  std::ostringstream out;
  for (const auto& v : verdicts) out << (v.pass ? "PASS  " : "FAIL  ") << v.name << "  (" << v.detail << ")\n";
  return out.str();
}

std::string format_summary(const SummaryReport& report) {
  std::ostringstream out;
  if (!report.fits.empty()) {
    out << "log-log fits\n";
    for (const auto& f : report.fits)
      out << "  " << f.series << " / " << f.metric << ": slope " << fmt(f.fit.slope, "%.6f") << ", intercept "
          << fmt(f.fit.intercept, "%.6f") << ", rms residual " << fmt(f.fit.rms_residual, "%.3e") << ", max residual "
          << fmt(f.fit.max_abs_residual, "%.3e") << "  [" << f.file << "]\n";
  }
  if (!report.verdicts.empty()) out << "checks\n" << format_verdicts(report.verdicts);
  return out.str();
}

}  // namespace bnrank
