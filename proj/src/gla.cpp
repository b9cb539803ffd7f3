#include "aspan/gla.hpp"

#include <cmath>
#include <set>

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"

namespace aspan {

std::string to_string(AttentionMode m) {
  switch (m) {
    case AttentionMode::single_level: return "single_level";
    case AttentionMode::fixed_span: return "fixed_span";
    case AttentionMode::adaptive_span: return "adaptive_span";
  }
  return "?";
}

AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "single_level") return AttentionMode::single_level;
  if (s == "fixed_span") return AttentionMode::fixed_span;
  if (s == "adaptive_span") return AttentionMode::adaptive_span;
  throw ParameterError("unknown attention_mode '" + s + "'");
}

std::string to_string(FfnKernel k) { return k == FfnKernel::conv3 ? "conv3" : "linear"; }

FfnKernel parse_ffn_kernel(const std::string& s) {
  if (s == "conv3") return FfnKernel::conv3;
  if (s == "linear") return FfnKernel::linear;
  throw ParameterError("unknown ffn_kernel '" + s + "'");
}

void GlaConfig::validate() const {
  if (dim == 0 || dim % 4 != 0) throw ParameterError("gla: dim must be a positive multiple of 4");
  if (num_blocks == 0) throw ParameterError("gla: num_blocks must be at least 1");
  if (coarse.h == 0 || coarse.w == 0) throw ParameterError("gla: coarse extent must be positive");
  if (!(n_sigma > 0.0)) throw ParameterError("gla: n_sigma must be positive");
  if (cell_fine == 0 || cell_medium == 0) throw ParameterError("gla: cell sizes must be positive");
  if (samples == 0) throw ParameterError("gla: samples must be positive");
  if (!(fixed_span_px > 0.0)) throw ParameterError("gla: fixed_span_px must be positive");
}

nlohmann::json to_json(const GlaConfig& c) {
  return {{"dim", c.dim},
          {"num_blocks", c.num_blocks},
          {"coarse_extent", {c.coarse.h, c.coarse.w}},
          {"n_sigma", c.n_sigma},
          {"cell_fine", c.cell_fine},
          {"cell_medium", c.cell_medium},
          {"samples", c.samples},
          {"attention_mode", to_string(c.mode)},
          {"fixed_span_px", c.fixed_span_px},
          {"ffn_kernel", to_string(c.ffn_kernel)},
          {"tie_directions", c.tie_directions}};
}

GlaConfig gla_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("gla config must be a JSON object");
  static const std::set<std::string> known{"dim",     "num_blocks",     "coarse_extent", "n_sigma",
                                           "cell_fine", "cell_medium",  "samples",       "attention_mode",
                                           "fixed_span_px", "ffn_kernel", "tie_directions"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ParameterError("gla config: unknown key '" + k + "'");
  }
  GlaConfig c;
  try {
    c.dim = j.value("dim", c.dim);
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    if (j.contains("coarse_extent")) {
      const auto& e = j.at("coarse_extent");
      if (!e.is_array() || e.size() != 2) throw ParameterError("gla config: coarse_extent must be [h, w]");
      c.coarse = {e[0].get<std::size_t>(), e[1].get<std::size_t>()};
    }
    c.n_sigma = j.value("n_sigma", c.n_sigma);
    c.cell_fine = j.value("cell_fine", c.cell_fine);
    c.cell_medium = j.value("cell_medium", c.cell_medium);
    c.samples = j.value("samples", c.samples);
    if (j.contains("attention_mode")) c.mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
    c.fixed_span_px = j.value("fixed_span_px", c.fixed_span_px);
    if (j.contains("ffn_kernel")) c.ffn_kernel = parse_ffn_kernel(j.at("ffn_kernel").get<std::string>());
    c.tie_directions = j.value("tie_directions", c.tie_directions);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("gla config: ") + e.what());
  }
  c.validate();
  return c;
}

void FfnWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".kernel", kernel);
  f(prefix + ".bias", bias);
  f(prefix + ".ln_gain", ln_gain);
  f(prefix + ".ln_bias", ln_bias);
}

FfnWeights init_ffn(std::size_t dim, FfnKernel kind, Rng& rng) {
  FfnWeights w;
  if (kind == FfnKernel::conv3) {
    w.kernel = glorot({3, 3, 2 * dim, dim}, 9 * 2 * dim, 9 * dim, rng);
  } else {
    w.kernel = glorot({2 * dim, dim}, 2 * dim, dim, rng);
  }
  w.bias = zeros_param({dim});
  w.ln_gain = constant_param({dim}, 1.0);
  w.ln_bias = zeros_param({dim});
  return w;
}

Var ffn(const Var& f, const Var& m, const FfnWeights& w, FfnKernel kind) {
  if (f.shape() != m.shape() || f.shape().size() != 3) {
    throw DimensionError("ffn: feature " + shape_str(f.shape()) + " vs message " + shape_str(m.shape()));
  }
  const std::size_t h = f.shape()[0], wd = f.shape()[1], d = f.shape()[2];
  const Var parts[] = {f, m};
  Var cat = concat_last(parts);
  Var y;
  if (kind == FfnKernel::conv3) {
    y = conv3x3(cat, w.kernel, w.bias);
  } else {
    y = reshape(linear(reshape(cat, {h * wd, 2 * d}), w.kernel, w.bias), {h, wd, d});
  }
  return add(f, layer_norm(y, w.ln_gain, w.ln_bias));
}

void InitWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t r = 0; r < rounds.size(); ++r) {
    const std::string p = prefix + ".round" + std::to_string(r);
    rounds[r].proj.visit(p + ".proj", f);
    f(p + ".log_tau", rounds[r].log_tau);
    rounds[r].ffn.visit(p + ".ffn", f);
  }
}

void DirectionWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  coarse.visit(prefix + ".coarse", f);
  medium.visit(prefix + ".medium", f);
  fine.visit(prefix + ".fine", f);
  visit_mlp(fusion, prefix + ".fusion", f);
  ffn.visit(prefix + ".ffn", f);
  flow_head.visit(prefix + ".flow_head", f);
  temperatures.visit(prefix + ".temperature", f);
}

const DirectionWeights& GlaBlockWeights::for_source_b(bool source_is_b) const {
  return directions.size() > 1 && source_is_b ? directions[1] : directions[0];
}

void GlaBlockWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t d = 0; d < directions.size(); ++d) directions[d].visit(prefix + ".dir" + std::to_string(d), f);
}

void GlaWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  init.visit(prefix + ".init", f);
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].visit(prefix + ".block" + std::to_string(b), f);
}

GlaWeights init_gla(const GlaConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  GlaWeights w;
  for (int r = 0; r < 2; ++r) {
    InitRoundWeights round;
    round.proj = init_projection(d, rng);
    round.log_tau = constant_param({1}, -0.5 * std::log(static_cast<double>(d)));
    round.ffn = init_ffn(d, cfg.ffn_kernel, rng);
    w.init.rounds.push_back(std::move(round));
  }
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    GlaBlockWeights blk;
    for (int dir = 0; dir < (cfg.tie_directions ? 1 : 2); ++dir) {
      DirectionWeights dw;
      dw.coarse = init_projection(d, rng);
      dw.medium = init_projection(d, rng);
      dw.fine = init_projection(d, rng);
      dw.fusion = init_mlp({3 * d, d, d}, rng);
      dw.ffn = init_ffn(d, cfg.ffn_kernel, rng);
      dw.flow_head = init_flow_head(d, rng);
      dw.temperatures = init_temperatures(d);
      blk.directions.push_back(std::move(dw));
    }
    w.blocks.push_back(std::move(blk));
  }
  return w;
}

Pyramid build_pyramid(const Var& fine, Extent coarse) {
  if (fine.shape().size() != 3) throw DimensionError("build_pyramid: expected an H x W x D map");
  Var medium = avg_pool(fine, 2);
  return {resize_bilinear(medium, coarse.h, coarse.w), medium, fine};
}

std::pair<FeatureMap, FeatureMap> init_block(const FeatureMap& a, const FeatureMap& b, const InitWeights& w,
                                             const GlaConfig& cfg) {
  Var ca = resize_bilinear(a.grid, cfg.coarse.h, cfg.coarse.w);
  Var cb = resize_bilinear(b.grid, cfg.coarse.h, cfg.coarse.w);
  const Var ca0 = ca, cb0 = cb;
  for (const InitRoundWeights& r : w.rounds) {
    Var tau = exp(r.log_tau);
    Var ma = global_attention(ca, cb, r.proj, tau);
    Var mb = global_attention(cb, ca, r.proj, tau);
    ca = ffn(ca, ma, r.ffn, cfg.ffn_kernel);
    cb = ffn(cb, mb, r.ffn, cfg.ffn_kernel);
  }
  auto lift = [](const FeatureMap& f, const Var& res) {
    return FeatureMap{add(f.grid, resize_bilinear(res, f.height(), f.width())), f.stride, f.image};
  };
  return {lift(a, sub(ca, ca0)), lift(b, sub(cb, cb0))};
}

Var fuse_messages(const Var& mc, const Var& mm, const Var& mf, const std::vector<Dense>& fusion) {
  if (mc.shape() != mm.shape() || mc.shape() != mf.shape() || mc.shape().size() != 3) {
    throw DimensionError("fuse_messages: extents " + shape_str(mc.shape()) + ", " + shape_str(mm.shape()) + ", " +
                         shape_str(mf.shape()));
  }
  const std::size_t h = mc.shape()[0], w = mc.shape()[1], d = mc.shape()[2];
  const Var parts[] = {mc, mm, mf};
  Var out = mlp_forward(reshape(concat_last(parts), {h * w, 3 * d}), fusion);
  return reshape(out, {h, w, out.shape()[1]});
}

namespace {

struct DirectionResult {
  Var features;
  SpanGrid span;
};

DirectionResult update_direction(const FeatureMap& src, const Pyramid& ps, const Pyramid& pt,
                                 const FlowEstimate& flow, const DirectionWeights& w, const GlaConfig& cfg) {
  const std::size_t h = src.height(), wd = src.width();
  Var mc = resize_bilinear(global_attention(ps.coarse, pt.coarse, w.coarse, exp(w.temperatures.log_coarse)), h, wd);
  Var mm, mf;
  SpanGrid span;
  if (cfg.mode == AttentionMode::single_level) {
    mm = mf = Var::constant(Tensor(mc.shape()));
  } else {
    SpanParams sp;
    sp.n_sigma = cfg.n_sigma;
    sp.samples = cfg.samples;
    if (cfg.mode == AttentionMode::fixed_span) sp.fixed_half_px = cfg.fixed_span_px;
    const FlowMap fine_flow = flow.values();
    sp.cell_size = cfg.cell_fine;
    span = compute_span(fine_flow, sp, {pt.fine.shape()[0], pt.fine.shape()[1]});
    mf = local_cross_attention(ps.fine, pt.fine, span, w.fine, exp(w.temperatures.log_fine));
    sp.cell_size = cfg.cell_medium;
    const SpanGrid medium_span =
        compute_span(pool_flow(fine_flow, 2), sp, {pt.medium.shape()[0], pt.medium.shape()[1]});
    mm = resize_bilinear(local_cross_attention(ps.medium, pt.medium, medium_span, w.medium,
                                               exp(w.temperatures.log_medium)),
                         h, wd);
  }
  return {ffn(src.grid, fuse_messages(mc, mm, mf, w.fusion), w.ffn, cfg.ffn_kernel), std::move(span)};
}

}  // namespace

BlockOutput gla_block(const FeatureMap& a, const FeatureMap& b, const GlaBlockWeights& w, const GlaConfig& cfg) {
  if (a.channels() != cfg.dim || b.channels() != cfg.dim) throw DimensionError("gla_block: channel count != dim");
  const DirectionWeights& wa = w.for_source_b(false);
  const DirectionWeights& wb = w.for_source_b(true);
  BlockFlows flows{regress_flow(a, wa.flow_head), regress_flow(b, wb.flow_head)};
  const Pyramid pa = build_pyramid(a.grid, cfg.coarse);
  const Pyramid pb = build_pyramid(b.grid, cfg.coarse);
  DirectionResult ra = update_direction(a, pa, pb, flows.a, wa, cfg);
  DirectionResult rb = update_direction(b, pb, pa, flows.b, wb, cfg);
  return {{ra.features, a.stride, a.image}, {rb.features, b.stride, b.image}, std::move(flows),
          std::move(ra.span), std::move(rb.span)};
}

StackOutput run_stack(const FeatureMap& a, const FeatureMap& b, const GlaWeights& w, const GlaConfig& cfg) {
  cfg.validate();
  if (w.blocks.size() != cfg.num_blocks) throw ParameterError("run_stack: weights hold a different block count");
  auto [fa, fb] = init_block(a, b, w.init, cfg);
  StackOutput out;
  for (const GlaBlockWeights& blk : w.blocks) {
    BlockOutput o = gla_block(fa, fb, blk, cfg);
    fa = std::move(o.a);
    fb = std::move(o.b);
    out.flows.push_back(std::move(o.flows));
    out.spans.emplace_back(std::move(o.span_a), std::move(o.span_b));
  }
  out.a = std::move(fa);
  out.b = std::move(fb);
  return out;
}

}  // namespace aspan
