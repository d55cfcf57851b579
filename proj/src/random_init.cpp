// SPDX-License-Identifier: Apache-2.0
#include "bnrank/random_init.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "bnrank/errors.hpp"

namespace bnrank {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Xoshiro256pp::Xoshiro256pp(std::uint64_t seed) {
  for (auto& word : s_) word = splitmix64(seed);
}

void Xoshiro256pp::jump() noexcept {
  static constexpr std::uint64_t kJump[] = {0x180ec6d33cfd0abaULL, 0xd5a61266f0c9392cULL,
                                            0xa9582618e03fc9aaULL, 0x39abdc4529b1661cULL};
  std::array<std::uint64_t, 4> acc{};
  for (std::uint64_t word : kJump) {
    for (int b = 0; b < 64; ++b) {
      if (word & (std::uint64_t{1} << b)) {
        for (int i = 0; i < 4; ++i) acc[i] ^= s_[i];
      }
      (*this)();
    }
  }
  s_ = acc;
}

RngHandle::RngHandle(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(seed) {
  for (std::uint64_t k = 0; k < stream_id; ++k) engine_.jump();
}

RngHandle RngHandle::substream(std::uint64_t tag) const {
  std::uint64_t x = seed_ ^ (tag * 0xd1b54a32d192ed03ULL);
  return RngHandle(splitmix64(x), stream_id_);
}

std::string_view to_string(InitKind kind) noexcept {
  switch (kind) {
    case InitKind::gaussian: return "gaussian";
    case InitKind::uniform_symmetric: return "uniform_symmetric";
    case InitKind::uniform_asymmetric: return "uniform_asymmetric";
  }
  return "?";
}

InitKind parse_init_kind(std::string_view name) {
  if (name == "gaussian") return InitKind::gaussian;
  if (name == "uniform_symmetric" || name == "uniform") return InitKind::uniform_symmetric;
  if (name == "uniform_asymmetric" || name == "asymmetric") return InitKind::uniform_asymmetric;
  throw InvalidInput("unknown init kind '" + std::string(name) + "'");
}

std::optional<double> InitSpec::support_bound(Index fan_in) const {
  switch (kind) {
    case InitKind::gaussian: return std::nullopt;
    case InitKind::uniform_symmetric: return std::sqrt(3.0) * scale;
    case InitKind::uniform_asymmetric: return 2.0 * scale / std::sqrt(static_cast<double>(fan_in));
  }
  return std::nullopt;
}

void sample_weight_into(const InitSpec& spec, Matrix& out, RngHandle& rng) {
  double* p = out.data();
  const Index count = out.size();
  switch (spec.kind) {
    case InitKind::gaussian:
      for (Index k = 0; k < count; ++k) p[k] = spec.scale * rng.normal();
      break;
    case InitKind::uniform_symmetric: {
      const double b = std::sqrt(3.0) * spec.scale;
      for (Index k = 0; k < count; ++k) p[k] = rng.uniform(-b, b);
      break;
    }
    case InitKind::uniform_asymmetric: {
      const double b = *spec.support_bound(out.cols());
      for (Index k = 0; k < count; ++k) p[k] = rng.uniform(0.0, b);
      break;
    }
  }
}

Matrix sample_weight(const InitSpec& spec, Index rows, Index cols, RngHandle& rng) {
  if (rows < 1 || cols < 1) throw InvalidInput("weight shape must be positive");
  Matrix w(rows, cols);
  sample_weight_into(spec, w, rng);
  return w;
}

Matrix sign_flip_conjugate(const Matrix& w, const Vector& signs) {
  if (w.rows() != signs.size() || w.cols() != signs.size())
    throw InvalidInput("sign vector must match the square weight matrix");
  for (Index i = 0; i < signs.size(); ++i)
    if (signs[i] != 1.0 && signs[i] != -1.0) throw InvalidInput("signs must be +1 or -1");
  return signs.asDiagonal() * w * signs.asDiagonal();
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kSeedEnvVar); env && *env) {
    char* end = nullptr;
    const auto v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return v;
    throw InvalidInput(std::string(kSeedEnvVar) + " is not an unsigned integer: " + env);
  }
  return 0;
}

}  // namespace bnrank
