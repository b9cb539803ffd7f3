#pragma once

#include <random>

#include "aspan/tensor.hpp"

namespace aspan::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

// n x 2 sample coordinates inside [0, max_x] x [0, max_y] whose fractional
// parts stay in [0.05, 0.95], away from the kinks of bilinear interpolation.
inline Tensor offgrid_coords(std::size_t n, std::size_t max_x, std::size_t max_y, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  Tensor t({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    t[2 * i] = static_cast<double>(rng() % max_x) + frac(rng);
    t[2 * i + 1] = static_cast<double>(rng() % max_y) + frac(rng);
  }
  return t;
}

}  // namespace aspan::testing
