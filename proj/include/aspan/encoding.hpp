#pragma once

#include <vector>

#include "aspan/feature_map.hpp"

namespace aspan {

// Sinusoidal positional encoding on a feature grid. Channel 4k/4k+1 hold
// sin/cos(w_k * x) and 4k+2/4k+3 hold sin/cos(w_k * y), with x the column and
// y the row index scaled by (alpha, beta), w_k = 10000^(-4k / D).
struct PEMap {
  Tensor grid;  // H x W x D
  std::vector<double> frequencies;
  Extent train_extent;
  double alpha = 1.0;  // column scale, W_train / W_test
  double beta = 1.0;   // row scale, H_train / H_test
};

// Throws ParameterError unless D is a positive multiple of 4.
PEMap sinusoidal_pe(std::size_t h, std::size_t w, std::size_t d);
// Encoding of an H_test x W_test grid at coordinates rescaled into the training
// extent. Equal extents reproduce sinusoidal_pe bit for bit.
PEMap normalized_pe(Extent test, Extent train, std::size_t d);

FeatureMap add_pe(const FeatureMap& f, const PEMap& pe);

}  // namespace aspan
