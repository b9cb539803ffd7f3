#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "aspan/feature_map.hpp"
#include "aspan/flow.hpp"
#include "aspan/params.hpp"
#include "aspan/span_attention.hpp"

namespace aspan {

enum class AttentionMode { single_level, fixed_span, adaptive_span };
enum class FfnKernel { conv3, linear };

std::string to_string(AttentionMode m);
AttentionMode parse_attention_mode(const std::string& s);
std::string to_string(FfnKernel k);
FfnKernel parse_ffn_kernel(const std::string& s);

struct GlaConfig {
  std::size_t dim = 64;
  std::size_t num_blocks = 2;
  Extent coarse{8, 8};
  double n_sigma = 5.0;
  std::size_t cell_fine = 4;    // S at stride 8
  std::size_t cell_medium = 2;  // S at stride 16
  std::size_t samples = 8;      // g
  AttentionMode mode = AttentionMode::adaptive_span;
  double fixed_span_px = 13.0;
  FfnKernel ffn_kernel = FfnKernel::conv3;
  bool tie_directions = true;  // both directions share one weight set per block

  // ParameterError on any inconsistent field.
  void validate() const;
};

nlohmann::json to_json(const GlaConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
GlaConfig gla_config_from_json(const nlohmann::json& j);

struct FfnWeights {
  Var kernel;  // 3 x 3 x 2D x D, or 2D x D for the linear variant
  Var bias;
  Var ln_gain, ln_bias;

  void visit(const std::string& prefix, const ParamVisitor& f);
};

FfnWeights init_ffn(std::size_t dim, FfnKernel kind, Rng& rng);

// F + LN(K(F || M)) with K a 3x3 convolution or a per-position linear map.
Var ffn(const Var& f, const Var& m, const FfnWeights& w, FfnKernel kind);

struct InitRoundWeights {
  Projection proj;
  Var log_tau;
  FfnWeights ffn;
};

struct InitWeights {
  std::vector<InitRoundWeights> rounds;  // two

  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct DirectionWeights {
  Projection coarse, medium, fine;
  std::vector<Dense> fusion;  // 3D -> D -> D
  FfnWeights ffn;
  FlowHeadWeights flow_head;
  TemperatureSet temperatures;

  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct GlaBlockWeights {
  std::vector<DirectionWeights> directions;  // one when tied, else [A->B, B->A]

  const DirectionWeights& for_source_b(bool source_is_b) const;
  void visit(const std::string& prefix, const ParamVisitor& f);
};

struct GlaWeights {
  InitWeights init;
  std::vector<GlaBlockWeights> blocks;

  void visit(const std::string& prefix, const ParamVisitor& f);
};

GlaWeights init_gla(const GlaConfig& cfg, Rng& rng);

struct Pyramid {
  Var coarse;  // H0 x W0
  Var medium;  // stride 16
  Var fine;    // stride 8
};

Pyramid build_pyramid(const Var& fine, Extent coarse);

// Two rounds of symmetric global cross attention at the coarse extent; the
// accumulated coarse residual is upsampled and added to the inputs.
std::pair<FeatureMap, FeatureMap> init_block(const FeatureMap& a, const FeatureMap& b, const InitWeights& w,
                                             const GlaConfig& cfg);

// MLP over the channel concatenation; all messages must share one extent.
Var fuse_messages(const Var& mc, const Var& mm, const Var& mf, const std::vector<Dense>& fusion);

struct BlockOutput {
  FeatureMap a, b;
  BlockFlows flows;
  SpanGrid span_a, span_b;  // fine-level spans (empty in single_level mode)
};

BlockOutput gla_block(const FeatureMap& a, const FeatureMap& b, const GlaBlockWeights& w, const GlaConfig& cfg);

struct StackOutput {
  FeatureMap a, b;
  std::vector<BlockFlows> flows;
  std::vector<std::pair<SpanGrid, SpanGrid>> spans;
};

StackOutput run_stack(const FeatureMap& a, const FeatureMap& b, const GlaWeights& w, const GlaConfig& cfg);

}  // namespace aspan
