#include "aspan/harness.hpp"

#include <chrono>
#include <cmath>

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"
#include "aspan/span_attention.hpp"

namespace aspan {

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"warp", to_json(c.warp)},
          {"count", c.count},
          {"extent", {c.extent.h, c.extent.w}}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  RunConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "model") c.model = model_config_from_json(v);
      else if (k == "train") c.train = train_config_from_json(v);
      else if (k == "warp") c.warp = warp_config_from_json(v);
      else if (k == "count") c.count = v.get<std::size_t>();
      else if (k == "extent") c.extent = {v.at(0).get<std::size_t>(), v.at(1).get<std::size_t>()};
      else throw ParameterError("config: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("config: ") + e.what());
  }
  if (c.count == 0) throw ParameterError("config: count must be positive");
  if (c.extent.h == 0 || c.extent.w == 0 || c.extent.h % 8 || c.extent.w % 8) {
    throw ParameterError("config: extent must be positive multiples of 8");
  }
  return c;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ParameterError("loglog_slope: need two or more points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0) || !(y[i] > 0)) throw ParameterError("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw ParameterError("loglog_slope: x values are all equal");
  return sxy / sxx;
}

nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const BenchRow& b : r.rows) {
    nlohmann::json row{{"image_px", b.image_px},
                       {"tokens", b.tokens},
                       {"local_ops", b.local_ops},
                       {"full_ops", b.full_ops},
                       {"sampled_per_query", b.sampled_per_query}};
    if (b.local_ms >= 0) {
      row["local_ms"] = b.local_ms;
      row["full_ms"] = b.full_ms;
    }
    rows.push_back(row);
  }
  nlohmann::json j{{"mode", to_string(r.mode)},
                   {"dim", r.dim},
                   {"rows", rows},
                   {"local_slope", r.local_slope},
                   {"full_slope", r.full_slope}};
  if (!r.rows.empty() && r.rows.front().local_ms >= 0) {
    j["local_time_slope"] = r.local_time_slope;
    j["full_time_slope"] = r.full_time_slope;
  }
  return j;
}

namespace {

// Random stride-8 flow with means anywhere in the image and sigma near one cell.
FlowMap random_flow(Rng& rng, std::size_t h, std::size_t w, Extent image) {
  FlowMap f{Tensor({h, w, 4}), 8, image};
  for (std::size_t i = 0; i < h * w; ++i) {
    f.grid[4 * i] = uniform(rng, 0.0, static_cast<double>(image.w - 1));
    f.grid[4 * i + 1] = uniform(rng, 0.0, static_cast<double>(image.h - 1));
    f.grid[4 * i + 2] = 8.0 * std::exp(0.3 * normal(rng));
    f.grid[4 * i + 3] = 8.0 * std::exp(0.3 * normal(rng));
  }
  return f;
}

FeatureMap random_features(Rng& rng, std::size_t h, std::size_t w, std::size_t d, Extent image) {
  Tensor t({h, w, d});
  for (double& v : t.storage()) v = normal(rng);
  return {Var::constant(std::move(t)), 8, image};
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

BenchReport run_bench(const std::vector<std::size_t>& sizes, const GlaConfig& cfg, std::uint64_t seed, bool timing) {
  cfg.validate();
  if (sizes.size() < 2) throw ParameterError("bench: need at least two sizes");
  if (cfg.mode == AttentionMode::single_level) throw ParameterError("bench: mode must be adaptive_span or fixed_span");
  NoGradGuard guard;
  Rng rng(seed);
  const Projection proj = init_projection(cfg.dim, rng);
  const Var tau = Var::constant(Tensor({1}, 1.0 / std::sqrt(static_cast<double>(cfg.dim))));
  BenchReport r;
  r.mode = cfg.mode;
  r.dim = cfg.dim;
  std::vector<double> tokens, local, full, local_t, full_t;
  for (std::size_t s : sizes) {
    if (s == 0 || s % 8) throw ParameterError("bench: sizes must be positive multiples of 8");
    const Extent image{s, s};
    const std::size_t h = s / 8;
    const FeatureMap a = random_features(rng, h, h, cfg.dim, image);
    const FeatureMap b = random_features(rng, h, h, cfg.dim, image);
    SpanParams sp;
    sp.cell_size = cfg.cell_fine;
    sp.n_sigma = cfg.n_sigma;
    sp.samples = cfg.samples;
    if (cfg.mode == AttentionMode::fixed_span) sp.fixed_half_px = cfg.fixed_span_px;
    const SpanGrid span = compute_span(random_flow(rng, h, h, image), sp, {h, h});

    BenchRow row;
    row.image_px = s;
    row.tokens = h * h;
    row.sampled_per_query = span.tokens_per_cell();
    reset_attention_counter();
    auto t0 = std::chrono::steady_clock::now();
    local_cross_attention(a.grid, b.grid, span, proj, tau);
    if (timing) row.local_ms = elapsed_ms(t0);
    row.local_ops = attention_multiply_adds();
    reset_attention_counter();
    t0 = std::chrono::steady_clock::now();
    global_attention(a.grid, b.grid, proj, tau);
    if (timing) row.full_ms = elapsed_ms(t0);
    row.full_ops = attention_multiply_adds();

    tokens.push_back(static_cast<double>(row.tokens));
    local.push_back(static_cast<double>(row.local_ops));
    full.push_back(static_cast<double>(row.full_ops));
    local_t.push_back(std::max(row.local_ms, 1e-6));
    full_t.push_back(std::max(row.full_ms, 1e-6));
    r.rows.push_back(row);
  }
  r.local_slope = loglog_slope(tokens, local);
  r.full_slope = loglog_slope(tokens, full);
  if (timing) {
    r.local_time_slope = loglog_slope(tokens, local_t);
    r.full_time_slope = loglog_slope(tokens, full_t);
  }
  return r;
}

nlohmann::json to_json(const AblationReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationRow& row : r.rows) {
    rows.push_back({{"mode", to_string(row.mode)},
                    {"final_loss", row.final_loss},
                    {"precision_2px", row.eval.precision_2px},
                    {"precision_5px", row.eval.precision_5px},
                    {"recall_5px", row.eval.recall_5px},
                    {"epe_per_block", row.eval.epe_per_block}});
  }
  return {{"rows", rows}, {"ordered", r.ordered}, {"note", r.note}};
}

AblationReport run_ablation(const RunConfig& base, std::uint64_t seed, const std::vector<SynthPair>& train,
                            const std::vector<SynthPair>& holdout, const AblationProgress& progress) {
  if (holdout.empty()) throw InputError("ablate: empty held-out set");
  AblationReport r;
  for (AttentionMode mode : {AttentionMode::single_level, AttentionMode::fixed_span, AttentionMode::adaptive_span}) {
    ModelConfig mc = base.model;
    mc.gla.mode = mode;
    TrainConfig tc = base.train;
    tc.seed = seed;
    ModelWeights w = init_model(mc, seed);
    const auto history = train_model(w, mc, tc, train, [&](const EpochStats& s) {
      if (progress) progress(mode, s);
    });
    r.rows.push_back({mode, history.empty() ? 0.0 : history.back().total, evaluate(w, mc, holdout)});
  }
  const double single = r.rows[0].eval.precision_5px, fixed = r.rows[1].eval.precision_5px;
  const double adaptive = r.rows[2].eval.precision_5px;
  r.ordered = adaptive >= fixed && fixed >= single;
  if (adaptive < fixed) r.note += "inversion: adaptive_span below fixed_span on precision@5px; ";
  if (fixed < single) r.note += "inversion: fixed_span below single_level on precision@5px; ";
  if (r.ordered) r.note = "adaptive_span >= fixed_span >= single_level on precision@5px";
  else r.note.resize(r.note.size() - 2);
  return r;
}

}  // namespace aspan
