// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "bnrank/random_init.hpp"
#include "bnrank/rank_metrics.hpp"

namespace bnrank {

enum class DatasetKind { gaussian_matrix, near_collinear, gaussian_blobs, idx_files };

std::string_view to_string(DatasetKind kind) noexcept;
DatasetKind parse_dataset_kind(std::string_view name);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian_matrix;
  Index d = 32;
  /// Columns for matrices, sample count for blobs.
  Index n = 32;
  int num_classes = 2;
  /// Collinearity noise level for near_collinear, in [0, 1].
  double epsilon = 0.01;
  /// Distance between class means in units of the per-coordinate std.
  double separation = 6.0;
  /// Enforce hard_rank(X) == min(d, n) for gaussian_matrix.
  bool require_full_rank = false;
  std::filesystem::path images_path;
  std::filesystem::path labels_path;

  void validate() const;
};

/// Samples are columns of `x`; `labels` is empty for unlabeled kinds.
struct Dataset {
  Matrix x;
  std::vector<int> labels;

  Index dim() const { return x.rows(); }
  Index size() const { return x.cols(); }
};

/// gaussian_matrix: i.i.d. N(0,1). A rank-deficient draw is resampled once,
/// then PreconditionError.
/// near_collinear: sqrt(N) * rownorm(u v^T + eps G); exactly rank one at eps = 0.
/// gaussian_blobs: classes cycle 0..K-1 over the columns; unit-variance
/// isotropic noise around means `separation` apart.
/// idx_files: delegates to load_idx.
Dataset generate(const DatasetSpec& spec, RngHandle& rng);

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Big-endian IDX (MNIST layout). Pixels are scaled to [0, 1] and each image
/// becomes one column. Throws FormatError with the byte offset of the problem.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Writes `images` (count x rows x cols bytes, image-major) and `labels`
/// in IDX format.
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               std::uint32_t rows, std::uint32_t cols, const std::vector<std::uint8_t>& images,
               const std::vector<std::uint8_t>& labels);

}  // namespace bnrank
