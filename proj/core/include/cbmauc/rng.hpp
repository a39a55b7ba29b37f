#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cbmauc {

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard; the samplers below avoid std:: distributions (whose output is
// implementation-defined) so every draw reproduces across toolchains:
//   - uniform integers via rejection sampling on the high bits,
//   - uniform doubles as u64 >> 11 scaled by 2^-53,
//   - normals via the Box-Muller transform,
//   - shuffles via Fisher-Yates,
//   - derangements by shuffle-and-reject.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, n), n >= 1
  uint64_t uniform_int(uint64_t n);
  // uniform in [0, 1)
  double uniform();
  // uniform in [lo, hi)
  double uniform(double lo, double hi);
  // standard normal
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // true with probability p
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Random permutation of {0..n-1}.
  std::vector<int64_t> permutation(int64_t n);

  // Uniform random derangement of {0..n-1} (no fixed points), n >= 2.
  // Sampled by drawing permutations until one has no fixed point.
  std::vector<int64_t> derangement(int64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cbmauc
