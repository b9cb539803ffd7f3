#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace aspan {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Image or grid extent, rows first.
struct Extent {
  std::size_t h = 0;
  std::size_t w = 0;

  bool operator==(const Extent&) const = default;
};

// Dense row-major array of doubles. Value type: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  // Negative axis counts from the back.
  std::size_t dim(int axis) const;

  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Tensor reshaped(Shape shape) const;
  void fill(double v);
  bool all_finite() const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Elementwise helpers on raw tensors (no autograd).
void add_inplace(Tensor& dst, const Tensor& src, double scale = 1.0);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace aspan
