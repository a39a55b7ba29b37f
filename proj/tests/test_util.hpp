#pragma once

#include <cmath>
#include <functional>

#include "cbmauc/array.hpp"
#include "cbmauc/rng.hpp"
#include "cbmauc/tensor.hpp"

namespace cbmauc::testing {

inline double rel_error(double got, double want, double floor = 1e-8) {
  return std::fabs(got - want) / std::max(std::fabs(want), floor);
}

inline Array random_array(Shape shape, Rng& rng, double scale = 1.0) {
  Array a(shape);
  for (int64_t i = 0; i < a.size(); ++i) a[i] = scale * rng.normal();
  return a;
}

// Central finite differences of a scalar-valued recompute() w.r.t. the raw
// storage of `leaf`. recompute() must rebuild the full expression from the
// (mutated) leaf values.
inline Array numeric_gradient(Tensor leaf, const std::function<double()>& recompute,
                              double step = 1e-5) {
  Array grad(leaf.shape());
  Array& v = leaf.mutable_val();
  for (int64_t i = 0; i < v.size(); ++i) {
    double keep = v[i];
    v[i] = keep + step;
    double up = recompute();
    v[i] = keep - step;
    double down = recompute();
    v[i] = keep;
    grad[i] = (up - down) / (2 * step);
  }
  return grad;
}

// max over elements of |analytic - numeric| / max(|numeric|, floor)
inline double max_rel_diff(const Array& got, const Array& want, double floor = 1e-6) {
  double worst = 0;
  for (int64_t i = 0; i < got.size(); ++i)
    worst = std::max(worst, std::fabs(got[i] - want[i]) /
                                std::max(std::fabs(want[i]), floor));
  return worst;
}

}  // namespace cbmauc::testing
