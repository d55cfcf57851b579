// SPDX-License-Identifier: Apache-2.0
#include "bnrank/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "bnrank/errors.hpp"

namespace bnrank {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10e", v);
  return buf;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  return out;
}

void write_line(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::uint64_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw FormatError("not a number: '" + s + "'", line);
  return v;
}

long parse_long(const std::string& s, std::uint64_t line) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') throw FormatError("not an integer: '" + s + "'", line);
  return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

}  // namespace

void write_chain_csv(const std::filesystem::path& path, const std::vector<LayerRecord>& records) {
  auto out = open_out(path);
  write_line(out, kChainColumns);
  for (const auto& r : records)
    write_line(out, {std::to_string(r.layer), std::to_string(r.replicate), std::to_string(r.hard_rank),
                     std::to_string(r.soft_rank), format_double(r.r_lower), format_double(r.fro_m_sq),
                     format_double(r.tr_m3), format_double(r.tr_diag_m2_sq)});
}

std::vector<LayerRecord> read_chain_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || split(line) != kChainColumns) throw FormatError("chain CSV header mismatch", 1);
  std::vector<LayerRecord> out;
  std::uint64_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    const auto c = split(line);
    if (c.size() != kChainColumns.size()) throw FormatError("chain CSV row has wrong column count", no);
    out.push_back({parse_long(c[0], no), static_cast<int>(parse_long(c[1], no)), parse_long(c[2], no),
                   parse_long(c[3], no), parse_number(c[4], no), parse_number(c[5], no), parse_number(c[6], no),
                   parse_number(c[7], no)});
  }
  return out;
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header_.size()) throw InvalidInput("row width does not match the header");
  rows_.push_back(std::move(row));
}

void CsvTable::write(const std::filesystem::path& path) const {
  auto out = open_out(path);
  write_line(out, header_);
  for (const auto& r : rows_) write_line(out, r);
}

double AggregateRow::mean() const {
  if (reps.empty()) throw DegenerateStats("aggregate row without replicates");
  double s = 0.0;
  for (double v : reps) s += v;
  return s / static_cast<double>(reps.size());
}

double AggregateRow::ci_half_width() const {
  const std::size_t r = reps.size();
  if (r < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double v : reps) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / static_cast<double>(r - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(r));
}

void write_aggregate_csv(const std::filesystem::path& path, const std::vector<AggregateRow>& rows) {
  if (rows.empty()) throw InvalidInput("no aggregate rows");
  const std::size_t r = rows.front().reps.size();
  std::vector<std::string> header{"series", "metric", "x"};
  for (std::size_t i = 0; i < r; ++i) header.push_back("rep_" + std::to_string(i));
  header.insert(header.end(), {"mean", "ci_low", "ci_high"});
  auto out = open_out(path);
  write_line(out, header);
  for (const auto& row : rows) {
    if (row.reps.size() != r) throw InvalidInput("aggregate rows disagree on the replicate count");
    std::vector<std::string> cells{row.series, row.metric, format_double(row.x)};
    for (double v : row.reps) cells.push_back(format_double(v));
    const double m = row.mean(), h = row.ci_half_width();
    cells.insert(cells.end(), {format_double(m), format_double(m - h), format_double(m + h)});
    write_line(out, cells);
  }
}

std::vector<AggregateRow> read_aggregate_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty aggregate CSV", 1);
  const auto header = split(line);
  if (header.size() < 7 || header[0] != "series" || header[1] != "metric" || header[2] != "x" ||
      header[header.size() - 3] != "mean" || header[header.size() - 2] != "ci_low" || header.back() != "ci_high")
    throw FormatError("aggregate CSV header mismatch", 1);
  const std::size_t r = header.size() - 6;
  for (std::size_t i = 0; i < r; ++i)
    if (header[3 + i] != "rep_" + std::to_string(i)) throw FormatError("aggregate CSV replicate columns out of order", 1);

  std::vector<AggregateRow> out;
  std::uint64_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    const auto c = split(line);
    if (c.size() != header.size()) throw FormatError("aggregate CSV row has wrong column count", no);
    AggregateRow row{c[0], c[1], parse_number(c[2], no), {}};
    for (std::size_t i = 0; i < r; ++i) row.reps.push_back(parse_number(c[3 + i], no));
    for (std::size_t i = 0; i < 3; ++i) parse_number(c[3 + r + i], no);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace bnrank
