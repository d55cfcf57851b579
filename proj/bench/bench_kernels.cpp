// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "bnrank/chain_sim.hpp"
#include "bnrank/rank_metrics.hpp"
#include "bnrank/sweep.hpp"

namespace {

using namespace bnrank;

void BM_MSpaceStep(benchmark::State& state) {
  const Index d = state.range(0);
  RngHandle rng(1, 0);
  Matrix m = second_moment(sample_weight(InitSpec{}, d, d, rng));
  Matrix w(d, d);
  MSpaceStepper stepper(d);
  const InitSpec init{};
  for (auto _ : state) {
    sample_weight_into(init, w, rng);
    stepper.step(m, w, 1.0);
    benchmark::DoNotOptimize(m.data());
  }
}
BENCHMARK(BM_MSpaceStep)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

void BM_HSpaceStep(benchmark::State& state) {
  const Index d = state.range(0);
  RngHandle rng(1, 0);
  BnChainConfig cfg;
  cfg.d = cfg.n = d;
  Matrix h = bn_op(sample_weight(InitSpec{}, d, d, rng));
  Matrix w(d, d);
  const InitSpec init{};
  for (auto _ : state) {
    sample_weight_into(init, w, rng);
    h = bn_chain_step(h, w, cfg);
    benchmark::DoNotOptimize(h.data());
  }
}
BENCHMARK(BM_HSpaceStep)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

void BM_RankProbe(benchmark::State& state) {
  const Index d = state.range(0);
  RngHandle rng(2, 0);
  const Matrix m = second_moment(sample_weight(InitSpec{}, d, d, rng));
  RankProbe probe(d);
  for (auto _ : state) benchmark::DoNotOptimize(probe.measure(m, d, 0.5));
}
BENCHMARK(BM_RankProbe)->Arg(32)->Arg(128);

std::vector<ChainJob> sweep_jobs() {
  std::vector<ChainJob> jobs;
  for (int rep = 0; rep < 8; ++rep) {
    ChainJob j;
    j.cfg.d = j.cfg.n = 16;
    j.cfg.depth = 2000;
    j.replicate = rep;
    jobs.push_back(j);
  }
  return jobs;
}

void BM_SweepSerial(benchmark::State& state) {
  const auto jobs = sweep_jobs();
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep_serial(jobs));
}
BENCHMARK(BM_SweepSerial)->Unit(benchmark::kMillisecond);

void BM_SweepParallel(benchmark::State& state) {
  const auto jobs = sweep_jobs();
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep_parallel(jobs));
}
BENCHMARK(BM_SweepParallel)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
