#include "aspan/flow.hpp"

#include <cmath>
#include <numbers>

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"

namespace aspan {

FlowMap FlowEstimate::values() const {
  const std::size_t h = mean.shape()[0], w = mean.shape()[1];
  FlowMap out{Tensor({h, w, 4}), stride, image};
  const Tensor& u = mean.value();
  const Tensor& ls = log_sigma.value();
  for (std::size_t i = 0; i < h * w; ++i) {
    out.grid[4 * i + 0] = u[2 * i];
    out.grid[4 * i + 1] = u[2 * i + 1];
    out.grid[4 * i + 2] = std::exp(ls[2 * i]);
    out.grid[4 * i + 3] = std::exp(ls[2 * i + 1]);
  }
  return out;
}

void FlowHeadWeights::visit(const std::string& prefix, const ParamVisitor& f) { visit_mlp(layers, prefix, f); }

FlowHeadWeights init_flow_head(std::size_t dim, Rng& rng) {
  FlowHeadWeights w{init_mlp({dim, 64, 4}, rng)};
  // Start near the image centre with sigma of one stride-8 cell; a full-scale
  // output layer puts initial log-sigma far from any useful range.
  for (double& v : w.layers.back().weight.mutable_value().storage()) v *= 0.1;
  Tensor& b = w.layers.back().bias.mutable_value();
  b[2] = b[3] = std::log(8.0);
  return w;
}

FlowEstimate regress_flow(const FeatureMap& f, const FlowHeadWeights& w) {
  const std::size_t h = f.height(), wd = f.width(), n = h * wd;
  Var raw = mlp_forward(reshape(f.grid, {n, f.channels()}), w.layers);
  Tensor extent({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    extent[2 * i] = static_cast<double>(f.image.w);
    extent[2 * i + 1] = static_cast<double>(f.image.h);
  }
  Var mean = mul(sigmoid(slice_last(raw, 0, 2)), Var::constant(std::move(extent)));
  return {reshape(mean, {h, wd, 2}), reshape(slice_last(raw, 2, 4), {h, wd, 2}), f.stride, f.image};
}

double gaussian_prob(const FlowCell& c, double x, double y) {
  if (!(c.sx > 0.0) || !(c.sy > 0.0)) throw ParameterError("gaussian_prob: sigma must be positive");
  const double zx = (x - c.ux) / c.sx, zy = (y - c.uy) / c.sy;
  return std::exp(-0.5 * (zx * zx + zy * zy)) / (2.0 * std::numbers::pi * c.sx * c.sy);
}

FlowMap pool_flow(const FlowMap& flow, std::size_t factor) {
  if (factor == 0) throw ParameterError("pool_flow: factor must be positive");
  NoGradGuard guard;
  Var pooled = avg_pool(Var::constant(flow.grid), factor);
  return {pooled.value(), flow.stride * factor, flow.image};
}

std::size_t FlowTarget::visible_count() const {
  std::size_t n = 0;
  for (std::uint8_t v : visible) n += v ? 1 : 0;
  return n;
}

LossTerm flow_nll(const FlowEstimate& est, const FlowTarget& gt) {
  if (est.mean.shape() != gt.coords.shape()) {
    throw DimensionError("flow_nll: estimate " + shape_str(est.mean.shape()) + " vs target " +
                         shape_str(gt.coords.shape()));
  }
  const std::size_t cells = gt.coords.size() / 2;
  if (gt.visible.size() != cells) throw DimensionError("flow_nll: visibility mask length mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < cells; ++i) {
    if (gt.visible[i]) {
      idx.push_back(2 * i);
      idx.push_back(2 * i + 1);
    }
  }
  if (idx.empty()) return {Var::constant(Tensor::scalar(0.0)), true};
  const Var& w = est.log_sigma;
  Var r2 = square(sub(Var::constant(gt.coords), est.mean));
  Var per = add(w, scale(mul(exp(scale(w, -2.0)), r2), 0.5));
  Var total = sum(gather(per, idx));
  return {scale(total, 2.0 / static_cast<double>(idx.size())), false};
}

LossTerm flow_loss(std::span<const BlockFlows> blocks, const FlowTarget& gt_a, const FlowTarget& gt_b) {
  std::vector<Var> terms;
  for (const BlockFlows& blk : blocks) {
    for (auto [est, gt] : {std::pair{&blk.a, &gt_a}, std::pair{&blk.b, &gt_b}}) {
      LossTerm t = flow_nll(*est, *gt);
      if (!t.empty) terms.push_back(t.value);
    }
  }
  if (terms.empty()) return {Var::constant(Tensor::scalar(0.0)), true};
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return {scale(acc, 1.0 / static_cast<double>(terms.size())), false};
}

double direct_flow_nll(const FlowMap& flow, const FlowTarget& gt) {
  const std::size_t cells = gt.visible.size();
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (!gt.visible[i]) continue;
    const double* p = flow.grid.ptr() + 4 * i;
    acc -= std::log(gaussian_prob({p[0], p[1], p[2], p[3]}, gt.coords[2 * i], gt.coords[2 * i + 1]));
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

}  // namespace aspan
