#include "aspan/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"
#include "aspan/tensor_io.hpp"

namespace aspan {

void ModelConfig::validate() const {
  gla.validate();
  if (in_channels == 0) throw ParameterError("model: in_channels must be positive");
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("model: theta must lie in (0, 1)");
  if (window == 0 || window % 2 == 0) throw ParameterError("model: window must be odd");
  if (!(match_tau_init > 0.0)) throw ParameterError("model: match_tau_init must be positive");
  if (train_extent.h == 0 || train_extent.w == 0 || train_extent.h % 8 || train_extent.w % 8) {
    throw ParameterError("model: train_extent must be positive multiples of 8");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"in_channels", c.in_channels},
          {"gla", to_json(c.gla)},
          {"theta", c.theta},
          {"window", c.window},
          {"match_tau_init", c.match_tau_init},
          {"train_extent", {c.train_extent.h, c.train_extent.w}},
          {"normalized_pe", c.normalized_pe}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("model config must be a JSON object");
  ModelConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "in_channels") c.in_channels = v.get<std::size_t>();
      else if (k == "gla") c.gla = gla_config_from_json(v);
      else if (k == "theta") c.theta = v.get<double>();
      else if (k == "window") c.window = v.get<std::size_t>();
      else if (k == "match_tau_init") c.match_tau_init = v.get<double>();
      else if (k == "train_extent") c.train_extent = {v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>()};
      else if (k == "normalized_pe") c.normalized_pe = v.get<bool>();
      else throw ParameterError("model config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void ModelWeights::visit(const ParamVisitor& f) {
  backbone.visit("backbone", f);
  gla.visit("gla", f);
  f("match.log_tau", log_match_tau);
}

std::size_t ModelWeights::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Var& p) { n += p.size(); });
  return n;
}

ModelWeights init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelWeights w;
  w.backbone = init_backbone({cfg.in_channels, cfg.gla.dim}, rng);
  w.gla = init_gla(cfg.gla, rng);
  w.log_match_tau = constant_param({1}, std::log(cfg.match_tau_init));
  return w;
}

ModelWeights clone(ModelWeights& w, const ModelConfig& cfg) {
  ModelWeights c = init_model(cfg, 0);
  std::map<std::string, Tensor> values;
  w.visit([&](const std::string& name, Var& p) { values[name] = p.value(); });
  c.visit([&](const std::string& name, Var& p) { p.mutable_value() = values.at(name); });
  return c;
}

void save_weights(const std::filesystem::path& dir, ModelWeights& w, const ModelConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json params = nlohmann::json::array();
  w.visit([&](const std::string& name, Var& p) {
    write_tensor(dir / (name + ".aspt"), p.value());
    params.push_back({{"name", name}, {"shape", p.shape()}});
  });
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
  os << nlohmann::json{{"format", "aspan-weights"}, {"version", 1}, {"config", to_json(cfg)}, {"parameters", params}}
            .dump(2)
     << '\n';
}

std::pair<ModelConfig, ModelWeights> load_weights(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json", std::ios::binary);
  if (!is) throw IoError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
    if (j.at("format").get<std::string>() != "aspan-weights") throw FormatError("not a weights manifest");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weights manifest: ") + e.what());
  }
  ModelConfig cfg = model_config_from_json(j.at("config"));
  ModelWeights w = init_model(cfg, 0);
  w.visit([&](const std::string& name, Var& p) {
    Tensor t = read_tensor(dir / (name + ".aspt"));
    if (t.shape() != p.shape()) {
      throw FormatError("weights: " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(p.shape()));
    }
    p.mutable_value() = std::move(t);
  });
  return {cfg, std::move(w)};
}

namespace {

Tensor standardize(const Tensor& img) {
  double m = 0.0;
  for (double v : img.data()) m += v;
  m /= static_cast<double>(img.size());
  double var = 0.0;
  for (double v : img.data()) var += (v - m) * (v - m);
  const double inv = 1.0 / std::sqrt(var / static_cast<double>(img.size()) + 1e-6);
  Tensor out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = (img[i] - m) * inv;
  return out;
}

Var tokens(const FeatureMap& f) { return reshape(f.grid, {f.height() * f.width(), f.channels()}); }

}  // namespace

ForwardOutput forward(const ModelWeights& w, const ModelConfig& cfg, const Tensor& image_a, const Tensor& image_b) {
  if (image_a.shape() != image_b.shape()) {
    throw InputError("forward: image shapes differ: " + shape_str(image_a.shape()) + " vs " +
                     shape_str(image_b.shape()));
  }
  if (!image_a.all_finite() || !image_b.all_finite()) throw NumericError("forward: non-finite pixel values");
  BackboneOutput fa = extract_features(Var::constant(standardize(image_a)), w.backbone);
  BackboneOutput fb = extract_features(Var::constant(standardize(image_b)), w.backbone);
  const Extent grid = fa.coarse.extent();
  const Extent train_grid{cfg.train_extent.h / 8, cfg.train_extent.w / 8};
  PEMap pe = cfg.normalized_pe ? normalized_pe(grid, train_grid, cfg.gla.dim)
                               : sinusoidal_pe(grid.h, grid.w, cfg.gla.dim);
  StackOutput stack = run_stack(add_pe(fa.coarse, pe), add_pe(fb.coarse, pe), w.gla, cfg.gla);
  ScoreMatrix scores = score_matrix(tokens(stack.a), tokens(stack.b), exp(w.log_match_tau));
  return {fa.fine, fb.fine, std::move(stack), std::move(scores), std::move(pe)};
}

PairTargets make_targets(const SynthPair& p, std::size_t stride) {
  PairTargets t;
  t.coarse = gt_coarse_matches(p, stride);
  const std::size_t gw = p.extent.w / stride;
  t.fine = Tensor({t.coarse.size(), 2});
  for (std::size_t k = 0; k < t.coarse.size(); ++k) {
    const std::size_t i = t.coarse[k].first;
    const auto [x, y] = p.homography.apply(grid_to_pixel(static_cast<double>(i % gw), stride),
                                           grid_to_pixel(static_cast<double>(i / gw), stride));
    t.fine[2 * k] = x;
    t.fine[2 * k + 1] = y;
  }
  t.flow_a = cell_flow_target(p, stride, true);
  t.flow_b = cell_flow_target(p, stride, false);
  return t;
}

LossParts compute_loss(const ForwardOutput& out, const PairTargets& t, const ModelConfig& cfg, double alpha) {
  LossParts parts;
  LossTerm lc = coarse_loss(out.scores, t.coarse);
  const Refinement ref = refine_matches(t.coarse, out.fine_a, out.fine_b, out.stack.a.extent(), out.stack.a.stride,
                                        cfg.window);
  LossTerm lf = fine_loss(ref.coords_b, t.fine, ref.variance);
  LossTerm lflow = flow_loss(out.stack.flows, t.flow_a, t.flow_b);
  parts.total = total_loss(lc.value, lf.value, lflow.value, alpha);
  parts.coarse = lc.value.value()[0];
  parts.fine = lf.value.value()[0];
  parts.flow = lflow.value.value()[0];
  parts.empty = lc.empty;
  return parts;
}

MatchSet extract_matches(const ForwardOutput& out, const ModelConfig& cfg) {
  NoGradGuard guard;
  MatchSet m;
  m.coarse = mnn_filter(out.scores.scores(), cfg.theta);
  CellPairs pairs;
  for (const CoarseMatch& c : m.coarse) pairs.emplace_back(c.i, c.j);
  const Refinement ref =
      refine_matches(pairs, out.fine_a, out.fine_b, out.stack.a.extent(), out.stack.a.stride, cfg.window);
  const Tensor& b = ref.coords_b.value();
  for (std::size_t k = 0; k < m.coarse.size(); ++k) {
    m.fine.push_back({ref.coords_a[2 * k], ref.coords_a[2 * k + 1], b[2 * k], b[2 * k + 1], m.coarse[k].score});
  }
  return m;
}

}  // namespace aspan
