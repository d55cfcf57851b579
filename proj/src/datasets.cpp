// SPDX-License-Identifier: Apache-2.0
#include "bnrank/datasets.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "bnrank/errors.hpp"

namespace bnrank {

std::string_view to_string(DatasetKind kind) noexcept {
  switch (kind) {
    case DatasetKind::gaussian_matrix: return "gaussian_matrix";
    case DatasetKind::near_collinear: return "near_collinear";
    case DatasetKind::gaussian_blobs: return "gaussian_blobs";
    case DatasetKind::idx_files: return "idx_files";
  }
  return "?";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "gaussian_matrix") return DatasetKind::gaussian_matrix;
  if (name == "near_collinear") return DatasetKind::near_collinear;
  if (name == "gaussian_blobs") return DatasetKind::gaussian_blobs;
  if (name == "idx_files") return DatasetKind::idx_files;
  throw InvalidInput("unknown dataset kind '" + std::string(name) + "'");
}

void DatasetSpec::validate() const {
  if (kind == DatasetKind::idx_files) return;
  if (d < 1 || n < 1) throw InvalidInput("dataset dimensions must be positive");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidInput("epsilon must lie in [0, 1]");
  if (kind == DatasetKind::gaussian_blobs) {
    if (num_classes < 2) throw InvalidInput("need at least two classes");
    if (num_classes > d) throw InvalidInput("num_classes must not exceed d");
    if (!(separation > 0.0)) throw InvalidInput("separation must be positive");
  }
}

namespace {

Matrix gaussian_matrix(Index rows, Index cols, RngHandle& rng) {
  return sample_weight(InitSpec{InitKind::gaussian, 1.0}, rows, cols, rng);
}

Dataset make_gaussian_matrix(const DatasetSpec& spec, RngHandle& rng) {
  Dataset out{gaussian_matrix(spec.d, spec.n, rng), {}};
  if (!spec.require_full_rank) return out;
  const long full = std::min(spec.d, spec.n);
  for (int attempt = 0; attempt < 2; ++attempt) {
    if (hard_rank(SingularSpectrum::from_matrix(out.x)) == full) return out;
    if (attempt == 0) out.x = gaussian_matrix(spec.d, spec.n, rng);
  }
  throw PreconditionError("gaussian_matrix draw is rank deficient after one resample");
}

Dataset make_near_collinear(const DatasetSpec& spec, RngHandle& rng) {
  Vector u = gaussian_matrix(spec.d, 1, rng).col(0);
  Vector v = gaussian_matrix(spec.n, 1, rng).col(0);
  u.normalize();
  v.normalize();
  const Matrix g = gaussian_matrix(spec.d, spec.n, rng);
  Matrix x = u * v.transpose() + spec.epsilon * g;
  const double sqrt_n = std::sqrt(static_cast<double>(spec.n));
  for (Index i = 0; i < x.rows(); ++i) {
    const double norm = x.row(i).norm();
    if (!(norm > 0.0)) throw DegenerateInput("near_collinear row vanished");
    x.row(i) *= sqrt_n / norm;
  }
  return {std::move(x), {}};
}

Dataset make_blobs(const DatasetSpec& spec, RngHandle& rng) {
  // orthonormal class directions from a thin QR of a Gaussian d x K matrix
  const Matrix g = gaussian_matrix(spec.d, spec.num_classes, rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(spec.d, spec.num_classes);
  const Matrix means = (spec.separation / std::sqrt(2.0)) * q;
  Dataset out{gaussian_matrix(spec.d, spec.n, rng), std::vector<int>(static_cast<std::size_t>(spec.n))};
  for (Index j = 0; j < spec.n; ++j) {
    const int c = static_cast<int>(j % spec.num_classes);
    out.labels[static_cast<std::size_t>(j)] = c;
    out.x.col(j) += means.col(c);
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& what) {
  if (buf.size() < offset + 4) throw FormatError(what + ": truncated header", buf.size());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                         static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, "images");
  if (img_magic != kIdxImagesMagic) throw FormatError("images: bad magic", 0);
  const std::uint32_t count = read_be32(img, 4, "images");
  const std::uint32_t rows = read_be32(img, 8, "images");
  const std::uint32_t cols = read_be32(img, 12, "images");
  const std::uint64_t pixels = std::uint64_t{rows} * cols;
  const std::uint64_t expected = 16 + std::uint64_t{count} * pixels;
  if (img.size() < expected) throw FormatError("images: truncated payload", img.size());
  if (img.size() > expected) throw FormatError("images: trailing bytes", expected);

  const std::uint32_t lab_magic = read_be32(lab, 0, "labels");
  if (lab_magic != kIdxLabelsMagic) throw FormatError("labels: bad magic", 0);
  const std::uint32_t lab_count = read_be32(lab, 4, "labels");
  if (lab_count != count) throw FormatError("labels: count does not match images", 4);
  if (lab.size() < 8 + std::uint64_t{lab_count}) throw FormatError("labels: truncated payload", lab.size());
  if (lab.size() > 8 + std::uint64_t{lab_count}) throw FormatError("labels: trailing bytes", 8 + lab_count);

  Dataset out;
  out.x.resize(static_cast<Index>(pixels), static_cast<Index>(count));
  for (std::uint64_t s = 0; s < count; ++s)
    for (std::uint64_t p = 0; p < pixels; ++p)
      out.x(static_cast<Index>(p), static_cast<Index>(s)) = img[16 + s * pixels + p] / 255.0;
  out.labels.assign(lab.begin() + 8, lab.end());
  return out;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::uint32_t rows, std::uint32_t cols, const std::vector<std::uint8_t>& images,
               const std::vector<std::uint8_t>& labels) {
  const std::uint64_t pixels = std::uint64_t{rows} * cols;
  if (pixels == 0 || images.size() != pixels * labels.size())
    throw InvalidInput("image payload does not match labels x rows x cols");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw InvalidInput("cannot open IDX output files");
  put_be32(img, kIdxImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(labels.size()));
  put_be32(img, rows);
  put_be32(img, cols);
  img.write(reinterpret_cast<const char*>(images.data()), static_cast<std::streamsize>(images.size()));
  put_be32(lab, kIdxLabelsMagic);
  put_be32(lab, static_cast<std::uint32_t>(labels.size()));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Dataset generate(const DatasetSpec& spec, RngHandle& rng) {
  spec.validate();
  switch (spec.kind) {
    case DatasetKind::gaussian_matrix: return make_gaussian_matrix(spec, rng);
    case DatasetKind::near_collinear: return make_near_collinear(spec, rng);
    case DatasetKind::gaussian_blobs: return make_blobs(spec, rng);
    case DatasetKind::idx_files: return load_idx(spec.images_path, spec.labels_path);
  }
  throw InvalidInput("unhandled dataset kind");
}

}  // namespace bnrank
