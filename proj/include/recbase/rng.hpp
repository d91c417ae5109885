#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace recbase {

/// Deterministic random stream derived from a run seed and a fixed label.
///
/// All conversions from raw engine output to uniform/normal variates are done
/// here rather than through <random> distributions, whose algorithms are
/// implementation-defined; this keeps draws identical across standard libraries.
class Rng {
 public:
  Rng(uint64_t seed, std::string_view label, uint64_t index = 0);

  /// Child stream, e.g. one per epoch or per batch.
  Rng split(std::string_view label, uint64_t index = 0) const;

  uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n). n must be positive.
  uint64_t uniform_int(uint64_t n);
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[uniform_int(i)]);
    }
  }

  uint64_t seed() const { return seed_; }

 private:
  explicit Rng(uint64_t derived_seed);

  uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

uint64_t mix_seed(uint64_t seed, std::string_view label, uint64_t index);

}  // namespace recbase
