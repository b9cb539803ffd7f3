#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "aspan/feature_map.hpp"
#include "aspan/flow.hpp"

namespace aspan {

// C = tau * (F_A / sqrt(D)) (F_B / sqrt(D))^T and its log dual-softmax.
struct ScoreMatrix {
  Var correlation;  // n x m
  Var log_scores;   // n x m, log S

  std::size_t rows() const { return correlation.shape()[0]; }
  std::size_t cols() const { return correlation.shape()[1]; }
  Tensor scores() const;
};

// fa and fb are n x D and m x D token sets (row-major flattened grids).
ScoreMatrix score_matrix(const Var& fa, const Var& fb, const Var& tau);

struct CoarseMatch {
  std::size_t i, j;  // flattened cell indices in A and B
  double score;
};

// Mutual row/column argmax with S >= theta; ties go to the smaller index.
// ParameterError unless 0 < theta < 1.
std::vector<CoarseMatch> mnn_filter(const Tensor& scores, double theta);

struct FineMatch {
  double xa, ya, xb, yb;  // pixels
  double score;
};

struct MatchSet {
  std::vector<CoarseMatch> coarse;
  std::vector<FineMatch> fine;
};

// Differentiable refinement: B coordinates are the heatmap expectation inside a
// window x window crop of the stride-2 B map around each coarse match.
struct Refinement {
  Var coords_b;       // n x 2 pixels
  Tensor coords_a;    // n x 2 pixels, coarse A cell centres
  Tensor variance;    // n, heatmap variance in pixels^2 (summed over both axes)
};

Refinement refine_matches(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const FeatureMap& fine_a,
                          const FeatureMap& fine_b, Extent coarse_grid, std::size_t coarse_stride,
                          std::size_t window);

LossTerm coarse_loss(const ScoreMatrix& s, const std::vector<std::pair<std::size_t, std::size_t>>& gt);

constexpr double kVarianceFloor = 1e-4;

// Mean over matches of |refined - gt|^2 / max(variance, floor); variance is a constant weight.
LossTerm fine_loss(const Var& refined, const Tensor& gt, const Tensor& variance);

Var total_loss(const Var& coarse, const Var& fine, const Var& flow, double alpha);

// One JSON object per line: {"xa","ya","xb","yb","score","i","j"}.
void write_matches_jsonl(std::ostream& os, const MatchSet& m);
MatchSet read_matches_jsonl(std::istream& is);

}  // namespace aspan
