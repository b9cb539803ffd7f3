#include <cmath>

#include "aspan/flow.hpp"
#include "aspan/gla.hpp"
#include "aspan/matcher.hpp"
#include "aspan/ops.hpp"
#include "aspan/span_attention.hpp"
#include "grad_cases.hpp"
#include "../test_util.hpp"

namespace aspan::testing {

namespace {

using Inputs = std::vector<Tensor>;

FlowMap random_flow(std::mt19937_64& rng, Extent grid, std::size_t stride, Extent image) {
  FlowMap f{Tensor({grid.h, grid.w, 4}), stride, image};
  std::uniform_real_distribution<double> ux(0, static_cast<double>(image.w)), uy(0, static_cast<double>(image.h));
  std::uniform_real_distribution<double> sig(0.5, 3.0);
  for (std::size_t i = 0; i < grid.h * grid.w; ++i) {
    f.grid[4 * i] = ux(rng);
    f.grid[4 * i + 1] = uy(rng);
    f.grid[4 * i + 2] = sig(rng);
    f.grid[4 * i + 3] = sig(rng);
  }
  return f;
}

}  // namespace

std::vector<GradCase> attention_grad_cases() {
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, auto make) { cases.push_back({std::move(name), make}); };

  add_case("attention_kernel", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) { return attention_kernel(v[0], v[1], v[2], exp(v[3])); }),
                     Inputs{random_tensor({5, 4}, rng), random_tensor({6, 4}, rng), random_tensor({6, 4}, rng),
                            random_tensor({1}, rng, -0.5, 0.5)}};
  });
  add_case("local_attention_kernel", [](std::mt19937_64& rng) {
    // Off-lattice span samples so the bilinear scatter is exercised.
    SpanParams p;
    p.cell_size = 2;
    p.samples = 3;
    p.n_sigma = 1.0;
    const SpanGrid span = compute_span(random_flow(rng, {4, 5}, 1, {5, 6}), p, {5, 6});
    return std::pair{GradFunction([span](const std::vector<Var>& v) {
                       return local_attention_kernel(v[0], v[1], v[2], span, exp(v[3]));
                     }),
                     Inputs{random_tensor({4, 5, 3}, rng), random_tensor({5, 6, 3}, rng), random_tensor({5, 6, 3}, rng),
                            random_tensor({1}, rng, -0.5, 0.5)}};
  });
  add_case("global_attention_projected", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) {
                       return global_attention(v[0], v[1], {v[2], v[3], v[4]}, Var::constant(Tensor({1}, 0.7)));
                     }),
                     Inputs{random_tensor({2, 3, 4}, rng), random_tensor({3, 2, 4}, rng), random_tensor({4, 4}, rng),
                            random_tensor({4, 4}, rng), random_tensor({4, 4}, rng)}};
  });
  add_case("ffn_conv3", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) {
                       return ffn(v[0], v[1], {v[2], v[3], v[4], v[5]}, FfnKernel::conv3);
                     }),
                     Inputs{random_tensor({3, 3, 4}, rng), random_tensor({3, 3, 4}, rng), random_tensor({3, 3, 8, 4}, rng),
                            random_tensor({4}, rng), random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)}};
  });
  add_case("fuse_messages", [](std::mt19937_64& rng) {
    return std::pair{GradFunction([](const std::vector<Var>& v) {
                       std::vector<Dense> mlp{{v[3], v[4]}};
                       return fuse_messages(v[0], v[1], v[2], mlp);
                     }),
                     Inputs{random_tensor({2, 2, 3}, rng), random_tensor({2, 2, 3}, rng), random_tensor({2, 2, 3}, rng),
                            random_tensor({9, 3}, rng), random_tensor({3}, rng)}};
  });
  return cases;
}

std::vector<GradCase> composite_loss_grad_cases() {
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, auto make) { cases.push_back({std::move(name), make}); };

  add_case("coarse_loss", [](std::mt19937_64& rng) {
    const std::vector<std::pair<std::size_t, std::size_t>> gt{{0, 1}, {2, 2}, {3, 0}, {5, 4}};
    return std::pair{GradFunction([gt](const std::vector<Var>& v) {
                       return coarse_loss(score_matrix(v[0], v[1], exp(v[2])), gt).value;
                     }),
                     Inputs{random_tensor({6, 4}, rng, -2, 2), random_tensor({5, 4}, rng, -2, 2),
                            random_tensor({1}, rng, 0.5, 1.5)}};
  });
  add_case("fine_loss", [](std::mt19937_64& rng) {
    // 16 x 16 image: 2 x 2 coarse cells at stride 8, 8 x 8 stride-2 maps.
    const std::vector<std::pair<std::size_t, std::size_t>> pairs{{0, 0}, {1, 3}, {3, 2}};
    Tensor fa = random_tensor({8, 8, 3}, rng), fb = random_tensor({8, 8, 3}, rng);
    Tensor gt = random_tensor({3, 2}, rng, 0.0, 15.0);
    Tensor variance;
    {
      NoGradGuard guard;
      variance = refine_matches(pairs, {Var::constant(fa), 2, {16, 16}}, {Var::constant(fb), 2, {16, 16}}, {2, 2}, 8, 5)
                     .variance;
    }
    return std::pair{GradFunction([pairs, gt, variance](const std::vector<Var>& v) {
                       const Refinement r = refine_matches(pairs, {v[0], 2, {16, 16}}, {v[1], 2, {16, 16}}, {2, 2}, 8, 5);
                       return fine_loss(r.coords_b, gt, variance).value;
                     }),
                     Inputs{fa, fb}};
  });
  add_case("flow_loss", [](std::mt19937_64& rng) {
    const Extent image{24, 24};
    FlowTarget ta{random_tensor({3, 3, 2}, rng, 0.0, 24.0), {1, 1, 0, 1, 1, 1, 0, 1, 1}};
    FlowTarget tb{random_tensor({3, 3, 2}, rng, 0.0, 24.0), {1, 0, 1, 1, 1, 1, 1, 1, 0}};
    return std::pair{GradFunction([=](const std::vector<Var>& v) {
                       FlowHeadWeights head{{{v[2], v[3]}, {v[4], v[5]}}};
                       std::vector<BlockFlows> blocks{{regress_flow({v[0], 8, image}, head), regress_flow({v[1], 8, image}, head)}};
                       return flow_loss(blocks, ta, tb).value;
                     }),
                     Inputs{random_tensor({3, 3, 4}, rng), random_tensor({3, 3, 4}, rng), random_tensor({4, 6}, rng),
                            random_tensor({6}, rng), random_tensor({6, 4}, rng, -0.5, 0.5), random_tensor({4}, rng)}};
  });
  return cases;
}

}  // namespace aspan::testing
