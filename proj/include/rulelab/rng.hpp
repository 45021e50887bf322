#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace rulelab {

// mt19937_64 seeded through std::seed_seq. Both are fully specified by the
// standard, unlike std::uniform_real_distribution and friends, so the
// transforms below are implemented here to keep streams identical across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on the closed range [lo, hi], unbiased.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rulelab
