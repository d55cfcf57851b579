// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bnrank/chain_sim.hpp"

namespace bnrank {

/// Floats are written as %.10e, LF line endings, no quoting.
std::string format_double(double v);

inline const std::vector<std::string> kChainColumns = {"layer",  "replicate", "hard_rank",     "soft_rank",
                                                      "r_lower", "fro_m_sq",  "tr_m3", "tr_diag_m2_sq"};

void write_chain_csv(const std::filesystem::path& path, const std::vector<LayerRecord>& records);
std::vector<LayerRecord> read_chain_csv(const std::filesystem::path& path);

/// Plain table with a fixed header; used for non-chain per-replicate files.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void add_row(std::vector<std::string> row);
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// One aggregate line: a metric of one series at one x, across replicates.
struct AggregateRow {
  std::string series;
  std::string metric;
  double x = 0.0;
  std::vector<double> reps;

  double mean() const;
  /// Half-width 1.96 * s / sqrt(R); zero when R < 2.
  double ci_half_width() const;
};

/// Columns: series,metric,x,rep_0..rep_{R-1},mean,ci_low,ci_high.
void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows);
/// Throws FormatError (with the line number) on any schema mismatch.
std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path);

}  // namespace bnrank
