#include "aspan/encoding.hpp"

#include <cmath>

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"

namespace aspan {
namespace {

PEMap evaluate_pe(std::size_t h, std::size_t w, std::size_t d, double alpha, double beta) {
  if (d == 0 || d % 4 != 0) throw ParameterError("positional encoding dimension must be a positive multiple of 4");
  PEMap pe;
  pe.alpha = alpha;
  pe.beta = beta;
  pe.frequencies.resize(d / 4);
  for (std::size_t k = 0; k < d / 4; ++k) {
    pe.frequencies[k] = std::pow(10000.0, -4.0 * static_cast<double>(k) / static_cast<double>(d));
  }
  pe.grid = Tensor({h, w, d});
  for (std::size_t i = 0; i < h; ++i) {
    const double y = static_cast<double>(i) * beta;
    for (std::size_t j = 0; j < w; ++j) {
      const double x = static_cast<double>(j) * alpha;
      double* cell = pe.grid.ptr() + (i * w + j) * d;
      for (std::size_t k = 0; k < d / 4; ++k) {
        const double wk = pe.frequencies[k];
        cell[4 * k + 0] = std::sin(wk * x);
        cell[4 * k + 1] = std::cos(wk * x);
        cell[4 * k + 2] = std::sin(wk * y);
        cell[4 * k + 3] = std::cos(wk * y);
      }
    }
  }
  return pe;
}

}  // namespace

PEMap sinusoidal_pe(std::size_t h, std::size_t w, std::size_t d) {
  PEMap pe = evaluate_pe(h, w, d, 1.0, 1.0);
  pe.train_extent = {h, w};
  return pe;
}

PEMap normalized_pe(Extent test, Extent train, std::size_t d) {
  if (test.h == 0 || test.w == 0) throw ParameterError("normalized_pe: zero test extent");
  if (train.h == 0 || train.w == 0) throw ParameterError("normalized_pe: zero train extent");
  const double alpha = static_cast<double>(train.w) / static_cast<double>(test.w);
  const double beta = static_cast<double>(train.h) / static_cast<double>(test.h);
  PEMap pe = evaluate_pe(test.h, test.w, d, alpha, beta);
  pe.train_extent = train;
  return pe;
}

FeatureMap add_pe(const FeatureMap& f, const PEMap& pe) {
  if (f.grid.shape() != pe.grid.shape()) {
    throw DimensionError("add_pe: feature map " + shape_str(f.grid.shape()) + " vs encoding " +
                         shape_str(pe.grid.shape()));
  }
  return {add(f.grid, Var::constant(pe.grid)), f.stride, f.image};
}

}  // namespace aspan
