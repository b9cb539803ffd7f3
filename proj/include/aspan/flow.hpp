#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aspan/feature_map.hpp"
#include "aspan/params.hpp"

namespace aspan {

// Per-cell Gaussian correspondence (u_x, u_y, sigma_x, sigma_y) in pixels of
// the other image. grid is H x W x 4.
struct FlowMap {
  Tensor grid;
  std::size_t stride = 8;
  Extent image;

  std::size_t height() const { return grid.shape()[0]; }
  std::size_t width() const { return grid.shape()[1]; }
};

// Differentiable form of a FlowMap: mean is H x W x 2 pixels, log_sigma is
// H x W x 2 holding w = log sigma.
struct FlowEstimate {
  Var mean;
  Var log_sigma;
  std::size_t stride = 8;
  Extent image;

  FlowMap values() const;
};

struct FlowHeadWeights {
  std::vector<Dense> layers;  // D -> 64 -> 4

  void visit(const std::string& prefix, const ParamVisitor& f);
};

FlowHeadWeights init_flow_head(std::size_t dim, Rng& rng);

// u = sigmoid(f[:2]) * (W_img, H_img), log sigma = f[2:].
FlowEstimate regress_flow(const FeatureMap& f, const FlowHeadWeights& w);

struct FlowCell {
  double ux, uy, sx, sy;
};

// Axis-aligned 2-D normal density; ParameterError unless both sigmas are positive.
double gaussian_prob(const FlowCell& cell, double x, double y);

// Channelwise average pooling of the four parameters; the stride is multiplied by factor.
FlowMap pool_flow(const FlowMap& flow, std::size_t factor);

// Ground-truth coordinates for one direction at the flow's grid: coords is
// H x W x 2 pixels, visible holds H * W flags.
struct FlowTarget {
  Tensor coords;
  std::vector<std::uint8_t> visible;

  std::size_t visible_count() const;
};

struct LossTerm {
  Var value;
  bool empty = false;  // no supervised elements; value is a zero constant
};

struct BlockFlows {
  FlowEstimate a;  // A -> B
  FlowEstimate b;  // B -> A
};

// Mean over visible cells of w_x + w_y + e^(-2w_x)(x-u_x)^2/2 + e^(-2w_y)(y-u_y)^2/2.
LossTerm flow_nll(const FlowEstimate& est, const FlowTarget& gt);

// Average of flow_nll over every (block, direction) term that has visible cells.
LossTerm flow_loss(std::span<const BlockFlows> blocks, const FlowTarget& gt_a, const FlowTarget& gt_b);

// Plain-value evaluation used as a cross-check: -mean log gaussian_prob over visible cells.
double direct_flow_nll(const FlowMap& flow, const FlowTarget& gt);

}  // namespace aspan
