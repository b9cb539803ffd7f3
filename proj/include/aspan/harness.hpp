#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "aspan/evaluate.hpp"
#include "aspan/train.hpp"

namespace aspan {

// Everything a subcommand can be configured with, read from one JSON file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  WarpConfig warp;
  std::size_t count = 8;   // pairs generated by `gen`
  Extent extent{64, 64};   // image size generated by `gen`
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct BenchRow {
  std::size_t image_px = 0;
  std::size_t tokens = 0;              // fine-level cells per image
  std::uint64_t local_ops = 0, full_ops = 0;
  std::size_t sampled_per_query = 0;   // g^2 target tokens per query cell
  double local_ms = -1.0, full_ms = -1.0;  // only measured when timing is on
};

struct BenchReport {
  AttentionMode mode = AttentionMode::adaptive_span;
  std::size_t dim = 0;
  std::vector<BenchRow> rows;
  double local_slope = 0, full_slope = 0;
  double local_time_slope = 0, full_time_slope = 0;
};

nlohmann::json to_json(const BenchReport& r);

// Multiply-add counts of one fine-level cross-attention pass on square images
// of each size: local span attention (adaptive or fixed) against full attention.
BenchReport run_bench(const std::vector<std::size_t>& sizes, const GlaConfig& cfg, std::uint64_t seed, bool timing);

struct AblationRow {
  AttentionMode mode = AttentionMode::adaptive_span;
  double final_loss = 0;
  EvalReport eval;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // single_level, fixed_span, adaptive_span
  bool ordered = false;           // adaptive >= fixed >= single on precision@5px
  std::string note;               // names the inversion when not ordered
};

nlohmann::json to_json(const AblationReport& r);

using AblationProgress = std::function<void(AttentionMode, const EpochStats&)>;

// Trains every attention mode from the same initial seed on the same data and
// budget, then evaluates on the held-out pairs.
AblationReport run_ablation(const RunConfig& base, std::uint64_t seed, const std::vector<SynthPair>& train,
                            const std::vector<SynthPair>& holdout, const AblationProgress& progress = {});

}  // namespace aspan
