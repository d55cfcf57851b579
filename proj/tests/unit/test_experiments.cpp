// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bnrank/csv.hpp"
#include "bnrank/errors.hpp"
#include "bnrank/experiments.hpp"

using namespace bnrank;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("bnrank_unit_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(const std::string& name, const fs::path& out) {
  ExperimentConfig c;
  c.experiment = name;
  c.out_dir = out;
  c.replicates = 2;
  c.d = 8;
  c.depth = 60;
  return c;
}

}  // namespace

TEST_CASE("log-log fit recovers exact power laws") {
  const std::vector<double> x{8, 16, 32, 64, 128};
  std::vector<double> y1, y2;
  for (double v : x) {
    y1.push_back(std::sqrt(v));
    y2.push_back(std::pow(v, 1.5));
  }
  const LogLogFit a = loglog_fit(x, y1), b = loglog_fit(x, y2);
  CHECK(std::abs(a.slope - 0.5) < 1e-12);
  CHECK(std::abs(b.slope - 1.5) < 1e-12);
  CHECK(a.rms_residual < 1e-12);
  CHECK_THROWS_AS(loglog_fit({1.0}, {1.0}), InvalidInput);
  CHECK_THROWS_AS(loglog_fit({1.0, 2.0}, {1.0, -1.0}), InvalidInput);
  CHECK_THROWS_AS(loglog_fit({2.0, 2.0}, {1.0, 3.0}), InvalidInput);
}

TEST_CASE("confidence interval is mean +- 1.96 s / sqrt(R)") {
  const AggregateRow row{"s", "m", 1.0, {1.0, 2.0, 3.0, 4.0}};
  CHECK(row.mean() == doctest::Approx(2.5));
  const double s = std::sqrt(5.0 / 3.0);
  CHECK(row.ci_half_width() == doctest::Approx(1.96 * s / 2.0));
  CHECK(AggregateRow{"s", "m", 1.0, {3.0}}.ci_half_width() == 0.0);
}

TEST_CASE("summarize fits synthetic aggregates") {
  const fs::path dir = tmp_dir("summ");
  std::vector<AggregateRow> rows;
  // Powers of four keep x^0.5 and x^1.5 exact through the %.10e round-trip.
  for (double d : {4.0, 16.0, 64.0, 256.0}) {
    rows.push_back({"g1", "avg_soft_rank", d, {std::sqrt(d), std::sqrt(d)}});
    rows.push_back({"g1", "avg_fro_m_sq", d, {std::pow(d, 1.5), std::pow(d, 1.5)}});
  }
  write_aggregate_csv(dir / "aggregate.csv", rows);
  const SummaryReport rep = summarize({dir / "aggregate.csv"});
  REQUIRE(rep.fits.size() == 2);
  for (const auto& f : rep.fits) {
    if (f.metric == "avg_soft_rank") CHECK(std::abs(f.fit.slope - 0.5) < 1e-12);
    if (f.metric == "avg_fro_m_sq") CHECK(std::abs(f.fit.slope - 1.5) < 1e-12);
  }
  bool any_fail = false;
  for (const auto& v : rep.verdicts) any_fail = any_fail || !v.pass;
  CHECK_FALSE(any_fail);
  CHECK(format_summary(rep).find("slope 0.500000") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("summarize rejects malformed aggregates") {
  const fs::path dir = tmp_dir("bad");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "a.csv") << "series,metric,x,rep_0,mean,ci_low\n";
  }
  CHECK_THROWS_AS(summarize({dir / "a.csv"}), FormatError);
  {
    std::ofstream(dir / "b.csv") << "series,metric,x,rep_0,mean,ci_low,ci_high\ns,m,1,2,2\n";
  }
  try {
    summarize({dir / "b.csv"});
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset().value_or(0) == 2);
  }
  {
    std::ofstream(dir / "c.csv") << "series,metric,x,rep_0,mean,ci_low,ci_high\ns,m,abc,2,2,2,2\n";
  }
  CHECK_THROWS_AS(summarize({dir / "c.csv"}), FormatError);
  CHECK_THROWS_AS(summarize({dir / "missing.csv"}), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("chain CSV round-trip and schema") {
  const fs::path dir = tmp_dir("chaincsv");
  const std::vector<LayerRecord> recs{{0, 1, 8, 3, 2.5, 12.25, 30.0, 40.0}, {1, 1, 7, 2, 1.0 / 3.0, 11.0, 29.0, 39.5}};
  write_chain_csv(dir / "c.csv", recs);
  const std::string text = slurp(dir / "c.csv");
  CHECK(text.rfind("layer,replicate,hard_rank,soft_rank,r_lower,fro_m_sq,tr_m3,tr_diag_m2_sq\n", 0) == 0);
  CHECK(text.find("3.3333333333e-01") != std::string::npos);
  CHECK(text.find('\r') == std::string::npos);
  const auto back = read_chain_csv(dir / "c.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[1].soft_rank == 2);
  CHECK(back[1].r_lower == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
  fs::remove_all(dir);
}

TEST_CASE("experiment config validation") {
  ExperimentConfig c = tiny("rank-vs-depth", "x");
  CHECK_NOTHROW(c.validate());
  c.experiment = "nope";
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  CHECK_THROWS_AS(run_experiment(c), InvalidInput);
  c = tiny("rank-vs-width", "x");
  c.dims = std::vector<Index>{1, 4};
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  CHECK(experiment_names().size() == 8);
  CHECK(gamma_label(kNoSkip) == "inf");
  CHECK(gamma_label(0.5) == "0.5");
}

TEST_CASE("rank-vs-depth writes per-replicate and aggregate CSVs") {
  const fs::path dir = tmp_dir("rvd");
  ExperimentConfig c = tiny("rank-vs-depth", dir);
  c.replicates = 3;
  const ExperimentResult res = run_experiment(c);
  CHECK(res.invariants_ok);
  // 2 gammas x {bn, vanilla} x {linear, relu} x 3 replicates + aggregate
  CHECK(res.files.size() == 8 * 3 + 1);
  const auto rows = read_aggregate_csv(dir / "rank-vs-depth" / "aggregate.csv");
  REQUIRE_FALSE(rows.empty());
  CHECK(rows.front().reps.size() == 3);
  CHECK(read_chain_csv(dir / "rank-vs-depth" / "bn-linear-g1_rep2.csv").size() == 61);
  fs::remove_all(dir);
}

TEST_CASE("same seed gives byte-identical CSVs, serial or parallel") {
  const fs::path a = tmp_dir("det_a"), b = tmp_dir("det_b");
  for (const std::string name : {"rank-vs-width", "break-bn", "grad-align"}) {
    ExperimentConfig ca = tiny(name, a), cb = tiny(name, b);
    ca.seed = cb.seed = 7;
    cb.parallel = false;
    ca.dims = cb.dims = std::vector<Index>{4, 8};
    ca.mlp_depth = cb.mlp_depth = 4;
    ca.epochs = cb.epochs = 2;
    ca.samples = cb.samples = 32;
    const auto ra = run_experiment(ca), rb = run_experiment(cb);
    REQUIRE(ra.files.size() == rb.files.size());
    for (std::size_t i = 0; i < ra.files.size(); ++i) {
      CHECK(ra.files[i].filename() == rb.files[i].filename());
      CHECK(slurp(ra.files[i]) == slurp(rb.files[i]));
    }
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("different seeds give different trajectories") {
  const fs::path a = tmp_dir("seed_a"), b = tmp_dir("seed_b");
  ExperimentConfig ca = tiny("rank-vs-depth", a), cb = tiny("rank-vs-depth", b);
  cb.seed = 1;
  run_experiment(ca);
  run_experiment(cb);
  const std::string f = "rank-vs-depth/bn-linear-g1_rep0.csv";
  CHECK(slurp(a / f) != slurp(b / f));
  fs::remove_all(a);
  fs::remove_all(b);
}
