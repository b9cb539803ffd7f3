#include <cmath>

#include "aspan/ops.hpp"
#include "grad_cases.hpp"
#include "../test_util.hpp"

namespace aspan::testing {

std::vector<GradCase> primitive_grad_cases() {
  using Inputs = std::vector<Tensor>;
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, auto make) { cases.push_back({std::move(name), make}); };

  add_case("matmul", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return matmul(v[0], v[1]); }),
                     Inputs{random_tensor({5, 4}, rng), random_tensor({4, 3}, rng)}};
  });
  add_case("bmm", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return bmm(v[0], v[1]); }),
                     Inputs{random_tensor({3, 2, 4}, rng), random_tensor({3, 4, 5}, rng)}};
  });
  add_case("elementwise", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) {
                       Var a = mul(sigmoid(v[0]), exp(scale(v[1], 0.5)));
                       return add(sub(a, square(v[1])), log(add_scalar(square(v[0]), 1.0)));
                     }),
                     Inputs{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}};
  });
  add_case("relu_bias_concat_slice", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) {
                       std::vector<Var> parts{v[0], relu(v[1])};
                       Var c = concat_last(parts);
                       return add_bias(slice_last(c, 1, 5), v[2]);
                     }),
                     Inputs{random_tensor({2, 3, 3}, rng), random_tensor({2, 3, 2}, rng), random_tensor({4}, rng)}};
  });
  add_case("softmax_rows_learned_temperature", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return softmax(v[0], 1, exp(v[1])); }),
                     Inputs{random_tensor({4, 5}, rng, -2, 2), random_tensor({1}, rng, -0.5, 0.5)}};
  });
  add_case("softmax_cols", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return softmax(v[0], 0, 3.0); }),
                     Inputs{random_tensor({4, 5}, rng)}};
  });
  add_case("log_dual_softmax", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return log_dual_softmax(v[0]); }),
                     Inputs{random_tensor({4, 6}, rng, -3, 3)}};
  });
  add_case("avg_pool_ragged", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return avg_pool(v[0], 2); }),
                     Inputs{random_tensor({5, 3, 2}, rng)}};
  });
  add_case("resize_bilinear", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return resize_bilinear(v[0], 7, 5); }),
                     Inputs{random_tensor({3, 4, 2}, rng)}};
  });
  add_case("bilinear_sample", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return bilinear_sample(v[0], v[1]); }),
                     Inputs{random_tensor({4, 5, 3}, rng), offgrid_coords(6, 4, 3, rng)}};
  });
  add_case("conv3x3", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return conv3x3(v[0], v[1], v[2]); }),
                     Inputs{random_tensor({4, 3, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)}};
  });
  add_case("layer_norm", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2]); }),
                     Inputs{random_tensor({3, 5}, rng), random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng)}};
  });
  add_case("mlp_forward", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) {
                       std::vector<Dense> layers{{v[1], v[2]}, {v[3], v[4]}};
                       return mlp_forward(v[0], layers);
                     }),
                     Inputs{random_tensor({4, 3}, rng), random_tensor({3, 6}, rng), random_tensor({6}, rng),
                            random_tensor({6, 2}, rng), random_tensor({2}, rng)}};
  });
  add_case("transpose_gather_mean", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) {
                       const std::vector<std::size_t> idx{0, 3, 3, 5};
                       return mul_scalar(gather(transpose(v[0]), idx), mean(v[1]));
                     }),
                     Inputs{random_tensor({2, 3}, rng), random_tensor({4}, rng)}};
  });
  return cases;
}

}  // namespace aspan::testing
