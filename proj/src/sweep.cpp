// SPDX-License-Identifier: Apache-2.0
#include "bnrank/sweep.hpp"

namespace bnrank {

ChainOutcome run_chain_job(const ChainJob& job) {
  ChainOutcome out;
  try {
    RngHandle rng(job.seed, static_cast<std::uint64_t>(job.replicate));
    RngHandle data_rng = rng.substream(0x1d);
    DatasetSpec spec = job.input;
    spec.d = job.cfg.d;
    spec.n = job.cfg.n;
    const Dataset data = generate(spec, data_rng);
    if (job.kind == ChainKind::bn)
      out.bn = run_bn_chain(job.cfg, data.x, rng, job.replicate);
    else
      out.vanilla = run_vanilla_chain(job.cfg, data.x, rng, job.replicate);
  } catch (...) {
    out.error = std::current_exception();
  }
  return out;
}

std::vector<ChainOutcome> run_sweep_serial(const std::vector<ChainJob>& jobs) {
  std::vector<ChainOutcome> out;
  out.reserve(jobs.size());
  for (const auto& job : jobs) out.push_back(run_chain_job(job));
  return out;
}

std::vector<ChainOutcome> run_sweep_parallel(const std::vector<ChainJob>& jobs) {
  std::vector<ChainOutcome> out(jobs.size());
  const long count = static_cast<long>(jobs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = run_chain_job(jobs[static_cast<std::size_t>(i)]);
  return out;
}

void rethrow_first_error(const std::vector<ChainOutcome>& outcomes) {
  for (const auto& o : outcomes)
    if (o.error) std::rethrow_exception(o.error);
}

}  // namespace bnrank
