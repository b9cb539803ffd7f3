#pragma once

#include <string>
#include <utility>

#include "aspan/feature_map.hpp"
#include "aspan/params.hpp"

namespace aspan {

struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t dim = 64;  // stride-8 channels; stages run dim/4 -> dim/2 -> dim
};

// Three conv3x3 stages, each followed by 2x average pooling. The stride-2 map
// is the second stage's activation before it is pooled.
struct BackboneWeights {
  Var conv1_kernel, conv1_bias;
  Var conv2_kernel, conv2_bias;
  Var conv3_kernel, conv3_bias;

  void visit(const std::string& prefix, const ParamVisitor& f);
};

BackboneWeights init_backbone(const BackboneConfig& cfg, Rng& rng);

struct BackboneOutput {
  FeatureMap coarse;  // stride 8, dim channels
  FeatureMap fine;    // stride 2, dim/2 channels
};

// image is H x W x C with H and W divisible by 8, else InputError.
BackboneOutput extract_features(const Var& image, const BackboneWeights& w);

}  // namespace aspan
