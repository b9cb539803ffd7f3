#include "aspan/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"

namespace aspan {
namespace {

Tensor reduction_weights(const Shape& shape) {
  std::mt19937_64 rng(0x5eedULL);
  Tensor w(shape);
  for (double& v : w.storage()) v = 0.5 + static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return w;
}

double reduce(const Var& out, const Tensor& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += weights[i] * out.value()[i];
  return s;
}

}  // namespace

GradCheckResult grad_check(const GradFunction& f, const std::vector<Tensor>& inputs, double eps) {
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(Var::parameter(t));

  Var out = f(vars);
  if (!out.value().all_finite()) throw NumericError("grad_check: non-finite forward value");
  const Tensor weights = reduction_weights(out.shape());
  Var loss = sum(mul(out, Var::constant(weights)));
  backward(loss);

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t v = 0; v < vars.size(); ++v) {
    const Tensor analytic = vars[v].grad();
    for (std::size_t i = 0; i < inputs[v].size(); ++i) {
      std::vector<Var> probe;
      probe.reserve(inputs.size());
      for (const Tensor& t : inputs) probe.push_back(Var::constant(t));
      auto central = [&](double h) {
        probe[v].mutable_value()[i] = inputs[v][i] + h;
        const double fp = reduce(f(probe), weights);
        probe[v].mutable_value()[i] = inputs[v][i] - h;
        const double fm = reduce(f(probe), weights);
        return (fp - fm) / (2.0 * h);
      };
      // Richardson extrapolation cancels the h^2 term of the central difference.
      const double numeric = (4.0 * central(0.5 * eps) - central(eps)) / 3.0;
      const double a = analytic[i];
      if (!std::isfinite(numeric) || !std::isfinite(a)) throw NumericError("grad_check: non-finite gradient");
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace aspan
