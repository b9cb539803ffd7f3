#include <gtest/gtest.h>

#include <random>

#include "aspan/errors.hpp"
#include "aspan/gla.hpp"
#include "aspan/grad_check.hpp"
#include "aspan/ops.hpp"
#include "test_util.hpp"

namespace aspan {
namespace {

using testing::random_tensor;

GlaConfig small_config(std::size_t dim = 8, std::size_t blocks = 2) {
  GlaConfig c;
  c.dim = dim;
  c.num_blocks = blocks;
  c.coarse = {3, 3};
  c.samples = 4;
  c.cell_fine = 2;
  return c;
}

FeatureMap random_map(std::mt19937_64& g, std::size_t h, std::size_t w, std::size_t d) {
  return {Var::constant(random_tensor({h, w, d}, g)), 8, {h * 8, w * 8}};
}

void zero_all(GlaWeights& w) {
  w.visit("", [](const std::string&, Var& p) { p.mutable_value().fill(0.0); });
}

TEST(BuildPyramid, ExtentsAndConstants) {
  const Pyramid p = build_pyramid(Var::constant(Tensor({8, 8, 3}, 1.5)), {4, 4});
  EXPECT_EQ(p.medium.shape(), (Shape{4, 4, 3}));
  EXPECT_EQ(p.coarse.shape(), (Shape{4, 4, 3}));
  for (double v : p.coarse.value().data()) EXPECT_NEAR(v, 1.5, 1e-14);
  for (double v : p.medium.value().data()) EXPECT_NEAR(v, 1.5, 1e-14);
  const Pyramid indoor = build_pyramid(Var::constant(Tensor({60, 80, 2})), {15, 20});
  EXPECT_EQ(indoor.coarse.shape(), (Shape{15, 20, 2}));
  EXPECT_EQ(indoor.medium.shape(), (Shape{30, 40, 2}));
}

TEST(BuildPyramid, CoarseTokenCountIndependentOfInput) {
  for (std::size_t s : {8u, 12u, 24u}) {
    EXPECT_EQ(build_pyramid(Var::constant(Tensor({s, s, 2})), {8, 8}).coarse.shape(), (Shape{8, 8, 2}));
  }
}

TEST(Ffn, ZeroKernelIsResidualIdentity) {
  std::mt19937_64 g(1);
  Rng rng(1);
  for (FfnKernel kind : {FfnKernel::conv3, FfnKernel::linear}) {
    FfnWeights w = init_ffn(4, kind, rng);
    w.kernel.mutable_value().fill(0.0);
    const Tensor f = random_tensor({3, 5, 4}, g);
    const Var out = ffn(Var::constant(f), Var::constant(random_tensor({3, 5, 4}, g)), w, kind);
    EXPECT_EQ(out.shape(), f.shape());
    EXPECT_LT(max_abs_diff(out.value(), f), 1e-15);
  }
}

TEST(FuseMessages, ZeroShapeAndOrder) {
  std::mt19937_64 g(2);
  Rng rng(2);
  std::vector<Dense> mlp = init_mlp({12, 4, 4}, rng);
  const Var z = Var::constant(Tensor({2, 3, 4}));
  const Var out0 = fuse_messages(z, z, z, mlp);
  EXPECT_EQ(out0.shape(), (Shape{2, 3, 4}));
  for (double v : out0.value().data()) EXPECT_EQ(v, 0.0);
  const Var a = Var::constant(random_tensor({2, 3, 4}, g)), b = Var::constant(random_tensor({2, 3, 4}, g));
  const Var c = Var::constant(random_tensor({2, 3, 4}, g));
  EXPECT_GT(max_abs_diff(fuse_messages(a, b, c, mlp).value(), fuse_messages(a, c, b, mlp).value()), 1e-6);
  EXPECT_THROW(fuse_messages(a, Var::constant(Tensor({1, 3, 4})), c, mlp), DimensionError);
}

TEST(InitBlock, SymmetricInputsStayEqualAndShapesHold) {
  std::mt19937_64 g(3);
  Rng rng(3);
  const GlaConfig cfg = small_config();
  const GlaWeights w = init_gla(cfg, rng);
  const FeatureMap f = random_map(g, 4, 5, 8);
  const auto [a, b] = init_block(f, f, w.init, cfg);
  EXPECT_EQ(a.grid.shape(), f.grid.shape());
  EXPECT_TRUE(a.grid.value() == b.grid.value());
}

TEST(InitBlock, ZeroAttentionLeavesOnlyFfnPath) {
  std::mt19937_64 g(4);
  Rng rng(4);
  const GlaConfig cfg = small_config();
  GlaWeights w = init_gla(cfg, rng);
  for (auto& r : w.init.rounds) {
    r.proj.query.mutable_value().fill(0.0);
    r.proj.key.mutable_value().fill(0.0);
    r.proj.value.mutable_value().fill(0.0);
  }
  const FeatureMap fa = random_map(g, 4, 4, 8), fb = random_map(g, 4, 4, 8);
  const auto [a, b] = init_block(fa, fb, w.init, cfg);
  NoGradGuard guard;
  Var c = resize_bilinear(fa.grid, 3, 3);
  const Var c0 = c;
  const Var zero = Var::constant(Tensor({3, 3, 8}));
  for (const auto& r : w.init.rounds) c = ffn(c, zero, r.ffn, cfg.ffn_kernel);
  const Var expect = add(fa.grid, resize_bilinear(sub(c, c0), 4, 4));
  EXPECT_LT(max_abs_diff(a.grid.value(), expect.value()), 1e-13);
}

TEST(GlaBlock, FourBlocksChainWithMatchingShapes) {
  std::mt19937_64 g(5);
  Rng rng(5);
  const GlaConfig cfg = small_config(8, 4);
  const GlaWeights w = init_gla(cfg, rng);
  const StackOutput out = run_stack(random_map(g, 6, 6, 8), random_map(g, 6, 6, 8), w, cfg);
  EXPECT_EQ(out.a.grid.shape(), (Shape{6, 6, 8}));
  EXPECT_EQ(out.b.grid.shape(), (Shape{6, 6, 8}));
  EXPECT_EQ(out.flows.size(), 4u);
  EXPECT_EQ(out.flows[3].a.mean.shape(), (Shape{6, 6, 2}));
}

TEST(GlaBlock, SingleLevelIgnoresFineAndMediumProjections) {
  std::mt19937_64 g(6);
  Rng rng(6);
  GlaConfig cfg = small_config();
  cfg.mode = AttentionMode::single_level;
  GlaWeights w = init_gla(cfg, rng);
  const FeatureMap a = random_map(g, 4, 4, 8), b = random_map(g, 4, 4, 8);
  const Tensor before = gla_block(a, b, w.blocks[0], cfg).a.grid.value();
  for (auto& d : w.blocks[0].directions) {
    d.fine.query.mutable_value().fill(3.0);
    d.medium.value.mutable_value().fill(-2.0);
  }
  EXPECT_TRUE(gla_block(a, b, w.blocks[0], cfg).a.grid.value() == before);
}

TEST(GlaBlock, AdaptiveAndFixedSpansDiffer) {
  std::mt19937_64 g(7);
  Rng rng(7);
  GlaConfig cfg = small_config();
  cfg.samples = 8;
  const GlaWeights w = init_gla(cfg, rng);
  // Heterogeneous sigma from random features on a grid larger than the spans.
  const FeatureMap a = random_map(g, 16, 16, 8), b = random_map(g, 16, 16, 8);
  const Tensor adaptive = gla_block(a, b, w.blocks[0], cfg).a.grid.value();
  cfg.mode = AttentionMode::fixed_span;
  const Tensor fixed = gla_block(a, b, w.blocks[0], cfg).a.grid.value();
  EXPECT_GT(max_abs_diff(adaptive, fixed), 1e-8);
}

TEST(RunStack, SingleBlockEqualsManualComposition) {
  std::mt19937_64 g(8);
  Rng rng(8);
  const GlaConfig cfg = small_config(8, 1);
  const GlaWeights w = init_gla(cfg, rng);
  const FeatureMap a = random_map(g, 4, 6, 8), b = random_map(g, 4, 6, 8);
  const StackOutput s = run_stack(a, b, w, cfg);
  const auto [ia, ib] = init_block(a, b, w.init, cfg);
  const BlockOutput m = gla_block(ia, ib, w.blocks[0], cfg);
  EXPECT_TRUE(s.a.grid.value() == m.a.grid.value());
  EXPECT_TRUE(s.b.grid.value() == m.b.grid.value());
  EXPECT_TRUE(run_stack(a, b, w, cfg).a.grid.value() == s.a.grid.value());
}

TEST(RunStack, ZeroLinearStackIsIdentity) {
  std::mt19937_64 g(9);
  Rng rng(9);
  GlaConfig cfg = small_config();
  cfg.ffn_kernel = FfnKernel::linear;
  GlaWeights w = init_gla(cfg, rng);
  zero_all(w);
  const FeatureMap a = random_map(g, 4, 4, 8), b = random_map(g, 4, 4, 8);
  const StackOutput s = run_stack(a, b, w, cfg);
  EXPECT_LT(max_abs_diff(s.a.grid.value(), a.grid.value()), 1e-14);
  EXPECT_LT(max_abs_diff(s.b.grid.value(), b.grid.value()), 1e-14);
}

TEST(RunStack, UntiedDirectionsUseSeparateWeights) {
  std::mt19937_64 g(10);
  Rng rng(10);
  GlaConfig cfg = small_config();
  cfg.tie_directions = false;
  const GlaWeights w = init_gla(cfg, rng);
  EXPECT_EQ(w.blocks[0].directions.size(), 2u);
  const FeatureMap f = random_map(g, 4, 4, 8);
  const StackOutput s = run_stack(f, f, w, cfg);
  EXPECT_GT(max_abs_diff(s.a.grid.value(), s.b.grid.value()), 1e-8);
}

TEST(RunStack, GradientForBlockOneProbeWeight) {
  std::mt19937_64 g(11);
  Rng rng(11);
  const GlaConfig cfg = small_config(4, 2);
  GlaWeights w = init_gla(cfg, rng);
  const FeatureMap a = random_map(g, 4, 4, 4), b = random_map(g, 4, 4, 4);
  const Tensor probe = w.blocks[0].directions[0].fine.value.value();
  const auto r = grad_check(
      [&](const std::vector<Var>& v) {
        GlaWeights local = w;
        local.blocks[0].directions[0].fine.value = v[0];
        const StackOutput s = run_stack(a, b, local, cfg);
        return add(mean(square(s.a.grid)), mean(s.b.grid));
      },
      {probe});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GlaConfig, JsonRoundTripAndValidation) {
  GlaConfig c = small_config();
  c.mode = AttentionMode::fixed_span;
  c.ffn_kernel = FfnKernel::linear;
  const GlaConfig back = gla_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(gla_config_from_json(nlohmann::json::object()).fixed_span_px, 13.0);
  EXPECT_THROW(gla_config_from_json({{"num_blocks", 0}}), ParameterError);
  EXPECT_THROW(gla_config_from_json({{"bogus", 1}}), ParameterError);
  EXPECT_THROW(gla_config_from_json({{"attention_mode", "sparse"}}), ParameterError);
  EXPECT_THROW(gla_config_from_json({{"dim", 6}}), ParameterError);
}

}  // namespace
}  // namespace aspan
