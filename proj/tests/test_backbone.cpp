#include <gtest/gtest.h>

#include <random>

#include "aspan/backbone.hpp"
#include "aspan/errors.hpp"
#include "test_util.hpp"

namespace aspan {
namespace {

TEST(Backbone, ReferenceShapes) {
  Rng rng(1);
  const BackboneWeights w = init_backbone({1, 64}, rng);
  std::mt19937_64 g(2);
  const BackboneOutput out = extract_features(Var::constant(testing::random_tensor({64, 64, 1}, g)), w);
  EXPECT_EQ(out.coarse.grid.shape(), (Shape{8, 8, 64}));
  EXPECT_EQ(out.fine.grid.shape(), (Shape{32, 32, 32}));
  EXPECT_EQ(out.coarse.stride, 8u);
  EXPECT_EQ(out.fine.stride, 2u);
  EXPECT_EQ(out.coarse.image.w, 64u);
}

TEST(Backbone, NonSquareAndRgb) {
  Rng rng(1);
  const BackboneWeights w = init_backbone({3, 16}, rng);
  std::mt19937_64 g(2);
  const BackboneOutput out = extract_features(Var::constant(testing::random_tensor({24, 40, 3}, g)), w);
  EXPECT_EQ(out.coarse.grid.shape(), (Shape{3, 5, 16}));
  EXPECT_EQ(out.fine.grid.shape(), (Shape{12, 20, 8}));
}

TEST(Backbone, Deterministic) {
  Rng rng(5);
  const BackboneWeights w = init_backbone({1, 32}, rng);
  std::mt19937_64 g(6);
  const Tensor img = testing::random_tensor({32, 32, 1}, g);
  const BackboneOutput a = extract_features(Var::constant(img), w);
  const BackboneOutput b = extract_features(Var::constant(img), w);
  EXPECT_TRUE(a.coarse.grid.value() == b.coarse.grid.value());
  EXPECT_TRUE(a.fine.grid.value() == b.fine.grid.value());
}

TEST(Backbone, ConstantImageGivesTranslationInvariantInterior) {
  // Zero padding only disturbs the border; a constant image yields a constant
  // interior, so shifting the frame does not change interior features.
  Rng rng(7);
  const BackboneWeights w = init_backbone({1, 16}, rng);
  const BackboneOutput out = extract_features(Var::constant(Tensor({64, 64, 1}, 0.3)), w);
  const Tensor& f = out.fine.grid.value();
  for (std::size_t y = 4; y < 28; ++y) {
    for (std::size_t x = 4; x < 28; ++x) {
      for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(f.at(y, x, c), f.at(10, 10, c), 1e-12);
    }
  }
  // Zero-bias stack on a zero image stays zero everywhere.
  const BackboneOutput z = extract_features(Var::constant(Tensor({32, 32, 1})), w);
  for (double v : z.coarse.grid.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, RejectsBadExtents) {
  Rng rng(1);
  const BackboneWeights w = init_backbone({1, 16}, rng);
  EXPECT_THROW(extract_features(Var::constant(Tensor({60, 64, 1})), w), InputError);
  EXPECT_THROW(extract_features(Var::constant(Tensor({64, 64, 3})), w), InputError);
}

TEST(Backbone, GlorotBoundsAndVisitOrder) {
  Rng rng(1);
  BackboneWeights w = init_backbone({1, 64}, rng);
  const double limit = std::sqrt(6.0 / (9.0 * 16 + 9.0 * 32));
  for (double v : w.conv2_kernel.value().data()) EXPECT_LE(std::abs(v), limit);
  std::vector<std::string> names;
  w.visit("bb", [&](const std::string& n, Var&) { names.push_back(n); });
  EXPECT_EQ(names.front(), "bb.conv1.kernel");
  EXPECT_EQ(names.size(), 6u);
}

}  // namespace
}  // namespace aspan
