#pragma once

#include <functional>
#include <vector>

#include "json.hpp"

#include "aspan/model.hpp"

namespace aspan {

struct EvalReport {
  std::size_t pairs = 0;
  std::vector<double> epe_per_block;            // mean over visible cells, both directions
  std::vector<double> sigma_matchable;          // mean (sigma_x + sigma_y) / 2 per block
  std::vector<double> sigma_unmatchable;        // NaN-free: 0 when no unmatchable cell exists
  std::size_t matchable_cells = 0, unmatchable_cells = 0;
  double precision_2px = 0, precision_5px = 0;  // correct / predicted
  double recall_2px = 0, recall_5px = 0;        // correct / ground-truth coarse matches
  std::size_t predicted = 0, ground_truth = 0;
};

nlohmann::json to_json(const EvalReport& r);

// Hook used to substitute predictions (tests inject an oracle matcher).
using MatchPredictor = std::function<MatchSet(const SynthPair&, const ForwardOutput&)>;

struct MatchCounts {
  std::size_t predicted = 0, correct_2px = 0, correct_5px = 0;
};

// A prediction is correct when its A point is visible in B and the predicted B
// point lies within the threshold of the warped A point.
MatchCounts score_matches(const SynthPair& p, const MatchSet& m);

EvalReport evaluate(const ModelWeights& w, const ModelConfig& cfg, const std::vector<SynthPair>& pairs,
                    const MatchPredictor& predictor = {});

// Flow EPE of the last block when the pair is rendered at a given extent.
double final_block_epe(const ModelWeights& w, const ModelConfig& cfg, const std::vector<SynthPair>& pairs);

}  // namespace aspan
