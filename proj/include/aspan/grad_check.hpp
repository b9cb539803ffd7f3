#pragma once

#include <functional>
#include <vector>

#include "aspan/autograd.hpp"

namespace aspan {

using GradFunction = std::function<Var(const std::vector<Var>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central-difference check of every element of every input, Richardson
// extrapolated from steps eps and eps/2. A non-scalar output
// is reduced by a fixed pseudo-random weighted sum (weights in [0.5, 1.5]) so
// that directions the plain sum annihilates, like softmax normalization, are
// still probed. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. Throws NumericError on non-finite values.
GradCheckResult grad_check(const GradFunction& f, const std::vector<Tensor>& inputs, double eps = 1e-4);

}  // namespace aspan
