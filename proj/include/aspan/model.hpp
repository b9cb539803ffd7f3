#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "aspan/backbone.hpp"
#include "aspan/encoding.hpp"
#include "aspan/gla.hpp"
#include "aspan/matcher.hpp"
#include "aspan/synth.hpp"

namespace aspan {

struct ModelConfig {
  std::size_t in_channels = 1;
  GlaConfig gla;  // gla.dim is the stride-8 feature width
  double theta = 0.2;
  std::size_t window = 5;
  double match_tau_init = 10.0;
  Extent train_extent{64, 64};
  bool normalized_pe = true;  // false encodes raw grid positions at any extent

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ModelWeights {
  BackboneWeights backbone;
  GlaWeights gla;
  Var log_match_tau;

  void visit(const ParamVisitor& f);
  std::size_t parameter_count();
};

ModelWeights init_model(const ModelConfig& cfg, std::uint64_t seed);
// Deep copy of every parameter value.
ModelWeights clone(ModelWeights& w, const ModelConfig& cfg);

// Directory of named tensor files plus manifest.json holding the config.
void save_weights(const std::filesystem::path& dir, ModelWeights& w, const ModelConfig& cfg);
std::pair<ModelConfig, ModelWeights> load_weights(const std::filesystem::path& dir);

struct ForwardOutput {
  FeatureMap fine_a, fine_b;  // stride-2 backbone maps
  StackOutput stack;          // stride-8 maps after all blocks, flows per block
  ScoreMatrix scores;
  PEMap pe;
};

// Images are H x W x C; each is standardized to zero mean and unit variance first.
ForwardOutput forward(const ModelWeights& w, const ModelConfig& cfg, const Tensor& image_a, const Tensor& image_b);

struct PairTargets {
  CellPairs coarse;
  Tensor fine;  // coarse.size() x 2, warped A cell centres in B pixels
  FlowTarget flow_a, flow_b;
};

PairTargets make_targets(const SynthPair& p, std::size_t stride = 8);

struct LossParts {
  Var total;
  double coarse = 0, fine = 0, flow = 0;
  bool empty = false;  // no ground-truth matches in this pair
};

// Coarse term on the dual-softmax scores, fine term on ground-truth coarse
// pairs refined from the stride-2 maps, flow term over every block.
LossParts compute_loss(const ForwardOutput& out, const PairTargets& t, const ModelConfig& cfg, double alpha);

MatchSet extract_matches(const ForwardOutput& out, const ModelConfig& cfg);

}  // namespace aspan
