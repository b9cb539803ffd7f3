#include "aspan/backbone.hpp"

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"

namespace aspan {

namespace {

Var conv_kernel(std::size_t din, std::size_t dout, Rng& rng) {
  return glorot({3, 3, din, dout}, 9 * din, 9 * dout, rng);
}

}  // namespace

void BackboneWeights::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".conv1.kernel", conv1_kernel);
  f(prefix + ".conv1.bias", conv1_bias);
  f(prefix + ".conv2.kernel", conv2_kernel);
  f(prefix + ".conv2.bias", conv2_bias);
  f(prefix + ".conv3.kernel", conv3_kernel);
  f(prefix + ".conv3.bias", conv3_bias);
}

BackboneWeights init_backbone(const BackboneConfig& cfg, Rng& rng) {
  if (cfg.in_channels == 0) throw ParameterError("backbone: in_channels must be positive");
  if (cfg.dim < 4 || cfg.dim % 4 != 0) throw ParameterError("backbone: dim must be a positive multiple of 4");
  const std::size_t c1 = cfg.dim / 4, c2 = cfg.dim / 2, c3 = cfg.dim;
  BackboneWeights w;
  w.conv1_kernel = conv_kernel(cfg.in_channels, c1, rng);
  w.conv1_bias = zeros_param({c1});
  w.conv2_kernel = conv_kernel(c1, c2, rng);
  w.conv2_bias = zeros_param({c2});
  w.conv3_kernel = conv_kernel(c2, c3, rng);
  w.conv3_bias = zeros_param({c3});
  return w;
}

BackboneOutput extract_features(const Var& image, const BackboneWeights& w) {
  if (image.shape().size() != 3) throw InputError("extract_features: image must be H x W x C");
  const std::size_t h = image.shape()[0], wd = image.shape()[1];
  if (h == 0 || wd == 0 || h % 8 != 0 || wd % 8 != 0) {
    throw InputError("extract_features: image extent " + std::to_string(h) + "x" + std::to_string(wd) +
                     " is not divisible by 8");
  }
  if (image.shape()[2] != w.conv1_kernel.shape()[2]) {
    throw InputError("extract_features: image has " + std::to_string(image.shape()[2]) +
                     " channels, weights expect " + std::to_string(w.conv1_kernel.shape()[2]));
  }
  const Extent extent{h, wd};
  Var x = avg_pool(relu(conv3x3(image, w.conv1_kernel, w.conv1_bias)), 2);
  Var s2 = relu(conv3x3(x, w.conv2_kernel, w.conv2_bias));
  Var s8 = avg_pool(conv3x3(avg_pool(s2, 2), w.conv3_kernel, w.conv3_bias), 2);
  return {{s8, 8, extent}, {s2, 2, extent}};
}

}  // namespace aspan
