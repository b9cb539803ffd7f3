#pragma once

#include <cstddef>

#include "aspan/autograd.hpp"

namespace aspan {

// H x W x D grid at a given stride. Cell (i, j) sits at pixel
// (j * stride + (stride - 1) / 2, i * stride + (stride - 1) / 2), i.e. the
// centre of the pixels it pools; at stride 1 grid and pixel units coincide.
struct FeatureMap {
  Var grid;
  std::size_t stride = 1;
  Extent image;

  std::size_t height() const { return grid.shape()[0]; }
  std::size_t width() const { return grid.shape()[1]; }
  std::size_t channels() const { return grid.shape()[2]; }
  Extent extent() const { return {height(), width()}; }
};

inline double pixel_to_grid(double pixel, std::size_t stride) {
  const double s = static_cast<double>(stride);
  return (pixel - (s - 1.0) / 2.0) / s;
}

inline double grid_to_pixel(double grid, std::size_t stride) {
  const double s = static_cast<double>(stride);
  return grid * s + (s - 1.0) / 2.0;
}

}  // namespace aspan
