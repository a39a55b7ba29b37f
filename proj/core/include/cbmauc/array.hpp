#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cbmauc {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major double array. The only storage type in the library;
// all kernels and metrics operate on these.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);

  static Array zeros(Shape shape) { return Array(std::move(shape), 0.0); }
  static Array full(Shape shape, double v) { return Array(std::move(shape), v); }
  static Array scalar(double v);
  static Array from(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t size() const { return static_cast<int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  double& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

  // Row-major accessors for the common ranks.
  double& at2(int64_t i, int64_t j) { return v_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return v_[static_cast<size_t>(i * shape_[1] + j)]; }

  bool all_finite() const;
  double max_abs() const;

 private:
  Shape shape_;
  std::vector<double> v_;
};

}  // namespace cbmauc
