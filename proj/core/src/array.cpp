#include "cbmauc/array.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace cbmauc {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d < 0) throw std::invalid_argument("Array: negative dimension in " + shape_str(shape_));
  }
  v_.assign(static_cast<size_t>(numel(shape_)), fill);
}

Array Array::scalar(double v) {
  Array a(Shape{1});
  a[0] = v;
  return a;
}

Array Array::from(Shape shape, std::vector<double> values) {
  Array a;
  a.shape_ = std::move(shape);
  if (numel(a.shape_) != static_cast<int64_t>(values.size()))
    throw std::invalid_argument("Array::from: " + shape_str(a.shape_) + " does not hold " +
                                std::to_string(values.size()) + " values");
  a.v_ = std::move(values);
  return a;
}

bool Array::all_finite() const {
  for (double x : v_)
    if (!std::isfinite(x)) return false;
  return true;
}

double Array::max_abs() const {
  double m = 0.0;
  for (double x : v_) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace cbmauc
