// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <exception>
#include <vector>

#include "bnrank/chain_sim.hpp"
#include "bnrank/datasets.hpp"

namespace bnrank {

enum class ChainKind { bn, vanilla };

/// One independent chain: input drawn from `input`, weights from stream
/// `replicate` of `seed`.
struct ChainJob {
  ChainKind kind = ChainKind::bn;
  BnChainConfig cfg{};
  DatasetSpec input{};
  std::uint64_t seed = 0;
  int replicate = 0;
};

struct ChainOutcome {
  ChainResult bn;
  VanillaResult vanilla;
  /// Set when the job threw; the sweep rethrows the first one in job order.
  std::exception_ptr error;
};

/// Runs one job; the input matrix uses substream 0x1d of the replicate stream.
ChainOutcome run_chain_job(const ChainJob& job);

/// Reference: jobs one after another.
std::vector<ChainOutcome> run_sweep_serial(const std::vector<ChainJob>& jobs);

/// OpenMP dynamic schedule over jobs. Results are bit-identical to
/// run_sweep_serial since every job owns its stream.
std::vector<ChainOutcome> run_sweep_parallel(const std::vector<ChainJob>& jobs);

/// Rethrows the first stored error, if any.
void rethrow_first_error(const std::vector<ChainOutcome>& outcomes);

}  // namespace bnrank
