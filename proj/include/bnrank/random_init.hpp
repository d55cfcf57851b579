// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "bnrank/rank_metrics.hpp"

namespace bnrank {

/// xoshiro256++ (Blackman & Vigna). Satisfies UniformRandomBitGenerator.
/// `jump()` advances by 2^128 draws, which is how replicate streams are
/// carved out of one master seed.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  void jump() noexcept;

  bool operator==(const Xoshiro256pp&) const = default;

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> s_{};
};

/// One independent random stream: (seed, stream_id) fixes the sequence
/// bit-exactly on a given platform. Not thread-safe; use one handle per
/// execution context.
class RngHandle {
 public:
  RngHandle(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  double normal() { return normal_(engine_); }
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * canonical(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

  Xoshiro256pp& engine() noexcept { return engine_; }

  /// A child stream derived from this handle's seed; used when one replicate
  /// needs several independent sub-streams (weights vs. minibatch order).
  RngHandle substream(std::uint64_t tag) const;

 private:
  double canonical() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::uint64_t seed_;
  std::uint64_t stream_id_;
  Xoshiro256pp engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

enum class InitKind { gaussian, uniform_symmetric, uniform_asymmetric };

std::string_view to_string(InitKind kind) noexcept;
/// Throws InvalidInput for unknown names.
InitKind parse_init_kind(std::string_view name);

/// Weight-entry distribution.
///  - gaussian:           N(0, scale^2)
///  - uniform_symmetric:  U[-sqrt(3) scale, sqrt(3) scale] (variance scale^2)
///  - uniform_asymmetric: U[0, 2 scale / sqrt(fan_in)], the rank-breaking init;
///                        deliberately not zero-mean.
struct InitSpec {
  InitKind kind = InitKind::gaussian;
  double scale = 1.0;

  /// Exact support bound B with entries in [-B, B]; nullopt for gaussian.
  std::optional<double> support_bound(Index fan_in) const;
  bool symmetric() const noexcept { return kind != InitKind::uniform_asymmetric; }
};

/// rows x cols matrix of i.i.d. entries, drawn in column-major order.
Matrix sample_weight(const InitSpec& spec, Index rows, Index cols, RngHandle& rng);

/// In-place variant for hot loops; `out` must already have the target shape.
void sample_weight_into(const InitSpec& spec, Matrix& out, RngHandle& rng);

/// S W S with S = diag(signs). Throws InvalidInput if a sign is not +-1.
Matrix sign_flip_conjugate(const Matrix& w, const Vector& signs);

inline constexpr const char* kSeedEnvVar = "BNRANK_SEED";

/// Seed precedence: explicit flag, then $BNRANK_SEED, then 0.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag);

}  // namespace bnrank
