#include "cbmauc/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace cbmauc {

uint64_t Rng::uniform_int(uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be >= 1");
  // rejection sampling: draw until below the largest multiple of n
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::vector<int64_t> Rng::permutation(int64_t n) {
  std::vector<int64_t> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  shuffle(p);
  return p;
}

std::vector<int64_t> Rng::derangement(int64_t n) {
  if (n < 2) throw std::invalid_argument("derangement: need n >= 2");
  while (true) {
    std::vector<int64_t> p = permutation(n);
    bool ok = true;
    for (int64_t i = 0; i < n; ++i)
      if (p[static_cast<size_t>(i)] == i) {
        ok = false;
        break;
      }
    if (ok) return p;
  }
}

}  // namespace cbmauc
