#include "aspan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aspan/errors.hpp"

namespace aspan {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
  }
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(shape_.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis out of range for shape " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(a)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void add_inplace(Tensor& dst, const Tensor& src, double scale) {
  if (dst.size() != src.size()) throw DimensionError("add_inplace size mismatch");
  double* d = dst.ptr();
  const double* s = src.ptr();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += scale * s[i];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_diff size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace aspan
