#pragma once

// Randomized finite-difference cases shared by the unit tests and the
// acceptance suite. Each case draws fresh inputs from the generator.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aspan/grad_check.hpp"

namespace aspan::testing {

struct GradCase {
  std::string name;
  std::function<std::pair<GradFunction, std::vector<Tensor>>(std::mt19937_64&)> make;
};

std::vector<GradCase> primitive_grad_cases();
// Attention kernels, FFN and fusion: the model-level differentiable ops.
std::vector<GradCase> attention_grad_cases();
// Coarse, fine and flow losses through the layers that feed them.
std::vector<GradCase> composite_loss_grad_cases();

}  // namespace aspan::testing
