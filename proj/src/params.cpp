#include "aspan/params.hpp"

#include <cmath>
#include <numbers>

namespace aspan {

double normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Var glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.storage()) v = uniform(rng, -limit, limit);
  return Var::parameter(std::move(t));
}

Var zeros_param(Shape shape) { return Var::parameter(Tensor(std::move(shape))); }

Var constant_param(Shape shape, double value) { return Var::parameter(Tensor(std::move(shape), value)); }

Dense init_dense(std::size_t din, std::size_t dout, Rng& rng) {
  return {glorot({din, dout}, din, dout, rng), zeros_param({dout})};
}

std::vector<Dense> init_mlp(std::initializer_list<std::size_t> dims, Rng& rng) {
  std::vector<Dense> layers;
  const std::vector<std::size_t> d(dims);
  for (std::size_t i = 0; i + 1 < d.size(); ++i) layers.push_back(init_dense(d[i], d[i + 1], rng));
  return layers;
}

void visit_mlp(std::vector<Dense>& layers, const std::string& prefix, const ParamVisitor& f) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    f(prefix + "." + std::to_string(i) + ".weight", layers[i].weight);
    f(prefix + "." + std::to_string(i) + ".bias", layers[i].bias);
  }
}

}  // namespace aspan
