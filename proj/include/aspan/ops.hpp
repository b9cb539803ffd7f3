#pragma once

// Differentiable primitives. Feature maps are H x W x D row-major; token sets
// are n x D. Every op validates shapes and throws DimensionError on mismatch.

#include <span>
#include <vector>

#include "aspan/autograd.hpp"

namespace aspan {

// One affine layer of an MLP: y = x * weight + bias, weight is Din x Dout.
struct Dense {
  Var weight;
  Var bias;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
// x * s where s holds a single element.
Var mul_scalar(const Var& x, const Var& s);
// Broadcasts bias[D] over every leading position of x[... x D].
Var add_bias(const Var& x, const Var& bias);

Var exp(const Var& x);
Var log(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& x);
// Batched product: [B x m x k] * [B x k x n] -> [B x m x n].
Var bmm(const Var& a, const Var& b);

Var reshape(const Var& x, Shape shape);
// Concatenates along the last axis; leading extents must agree.
Var concat_last(std::span<const Var> parts);
Var slice_last(const Var& x, std::size_t begin, std::size_t end);
// Picks x.flat[indices[k]] into a 1-D result.
Var gather(const Var& x, std::span<const std::size_t> indices);

// softmax(temperature * x) along axis of a 2-D tensor. Max-subtracted.
Var softmax(const Var& x, int axis, double temperature);
Var softmax(const Var& x, int axis, const Var& temperature);
// log(softmax_row(c) * softmax_col(c)) for a 2-D correlation matrix.
Var log_dual_softmax(const Var& c);

// Mean over each stride x stride window; ragged edge windows average their valid cells.
Var avg_pool(const Var& map, std::size_t stride);
// Align-corners bilinear resize of an H x W x D map.
Var resize_bilinear(const Var& map, std::size_t out_h, std::size_t out_w);
// Samples map at continuous (x, y) = (column, row) coordinates, n x 2. Coordinates
// are clamped to the grid; the coordinate gradient is zero on a clamped axis.
Var bilinear_sample(const Var& map, const Var& coords);
// Zero-padded 3x3 cross-correlation. kernel is 3 x 3 x Din x Dout, bias Dout.
Var conv3x3(const Var& map, const Var& kernel, const Var& bias);
// Per-position normalization over the last axis followed by gain/bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-6);

// x[n x Din] * w + b; b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b = Var());
// Affine chain with ReLU between layers and none after the last.
Var mlp_forward(const Var& x, std::span<const Dense> layers);

}  // namespace aspan
