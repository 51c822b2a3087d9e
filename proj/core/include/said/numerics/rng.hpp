#pragma once

#include <cstdint>

#include "said/numerics/tensor.hpp"

namespace said {

/// Counter-based generator: draw i is a pure function of (key, i).
///
/// The stream depends only on 64-bit integer arithmetic, so it is identical on
/// every platform. `split` derives an independent child stream without
/// advancing the parent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  /// Standard normal via Box-Muller (one value per two uniforms, no caching).
  double normal();
  Tensor normal_tensor(Shape shape);

  Rng split(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace said
