#include "aspan/evaluate.hpp"

#include <cmath>

#include "aspan/errors.hpp"

namespace aspan {

nlohmann::json to_json(const EvalReport& r) {
  return {{"pairs", r.pairs},
          {"epe_per_block", r.epe_per_block},
          {"sigma_matchable", r.sigma_matchable},
          {"sigma_unmatchable", r.sigma_unmatchable},
          {"matchable_cells", r.matchable_cells},
          {"unmatchable_cells", r.unmatchable_cells},
          {"precision_2px", r.precision_2px},
          {"precision_5px", r.precision_5px},
          {"recall_2px", r.recall_2px},
          {"recall_5px", r.recall_5px},
          {"predicted", r.predicted},
          {"ground_truth", r.ground_truth}};
}

MatchCounts score_matches(const SynthPair& p, const MatchSet& m) {
  MatchCounts c;
  for (const FineMatch& f : m.fine) {
    ++c.predicted;
    if (!visible_in_b(p, f.xa, f.ya)) continue;
    const auto [x, y] = p.homography.apply(f.xa, f.ya);
    const double err = std::hypot(f.xb - x, f.yb - y);
    if (err < 2.0) ++c.correct_2px;
    if (err < 5.0) ++c.correct_5px;
  }
  return c;
}

namespace {

struct FlowAccumulator {
  double epe = 0, sigma_vis = 0, sigma_occ = 0;
  std::size_t n_vis = 0, n_occ = 0;

  void add(const FlowMap& f, const FlowTarget& t) {
    for (std::size_t i = 0; i < t.visible.size(); ++i) {
      const double* c = f.grid.ptr() + 4 * i;
      const double sigma = 0.5 * (c[2] + c[3]);
      if (t.visible[i]) {
        epe += std::hypot(c[0] - t.coords[2 * i], c[1] - t.coords[2 * i + 1]);
        sigma_vis += sigma;
        ++n_vis;
      } else {
        sigma_occ += sigma;
        ++n_occ;
      }
    }
  }
};

double ratio(double a, std::size_t b) { return b ? a / static_cast<double>(b) : 0.0; }

}  // namespace

EvalReport evaluate(const ModelWeights& w, const ModelConfig& cfg, const std::vector<SynthPair>& pairs,
                    const MatchPredictor& predictor) {
  NoGradGuard guard;
  EvalReport r;
  std::vector<FlowAccumulator> blocks(cfg.gla.num_blocks);
  MatchCounts total;
  for (const SynthPair& p : pairs) {
    ForwardOutput out = forward(w, cfg, p.image_a, p.image_b);
    const PairTargets t = make_targets(p);
    for (std::size_t b = 0; b < out.stack.flows.size(); ++b) {
      blocks[b].add(out.stack.flows[b].a.values(), t.flow_a);
      blocks[b].add(out.stack.flows[b].b.values(), t.flow_b);
    }
    const MatchSet m = predictor ? predictor(p, out) : extract_matches(out, cfg);
    const MatchCounts c = score_matches(p, m);
    total.predicted += c.predicted;
    total.correct_2px += c.correct_2px;
    total.correct_5px += c.correct_5px;
    r.ground_truth += t.coarse.size();
    ++r.pairs;
  }
  for (const FlowAccumulator& a : blocks) {
    r.epe_per_block.push_back(ratio(a.epe, a.n_vis));
    r.sigma_matchable.push_back(ratio(a.sigma_vis, a.n_vis));
    r.sigma_unmatchable.push_back(ratio(a.sigma_occ, a.n_occ));
  }
  if (!blocks.empty()) {
    r.matchable_cells = blocks[0].n_vis;
    r.unmatchable_cells = blocks[0].n_occ;
  }
  r.predicted = total.predicted;
  r.precision_2px = ratio(static_cast<double>(total.correct_2px), total.predicted);
  r.precision_5px = ratio(static_cast<double>(total.correct_5px), total.predicted);
  r.recall_2px = std::min(1.0, ratio(static_cast<double>(total.correct_2px), r.ground_truth));
  r.recall_5px = std::min(1.0, ratio(static_cast<double>(total.correct_5px), r.ground_truth));
  return r;
}

double final_block_epe(const ModelWeights& w, const ModelConfig& cfg, const std::vector<SynthPair>& pairs) {
  const EvalReport r = evaluate(w, cfg, pairs);
  return r.epe_per_block.empty() ? 0.0 : r.epe_per_block.back();
}

}  // namespace aspan
