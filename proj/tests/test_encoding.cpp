#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "aspan/encoding.hpp"
#include "aspan/errors.hpp"
#include "aspan/ops.hpp"
#include "test_util.hpp"

namespace aspan {
namespace {

TEST(SinusoidalPe, OriginAlternatesZeroOne) {
  const PEMap pe = sinusoidal_pe(4, 5, 16);
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(pe.grid.at(0, 0, c), c % 2 == 0 ? 0.0 : 1.0) << c;
}

TEST(SinusoidalPe, BoundedAndFrequencies) {
  const PEMap pe = sinusoidal_pe(9, 7, 32);
  for (double v : pe.grid.data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  ASSERT_EQ(pe.frequencies.size(), 8u);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(pe.frequencies[k], 1.0 / std::pow(10000.0, 4.0 * k / 32.0));
}

TEST(SinusoidalPe, RowChannelsFollowY) {
  const PEMap pe = sinusoidal_pe(6, 6, 8);
  const double w1 = pe.frequencies[1];
  EXPECT_DOUBLE_EQ(pe.grid.at(3, 2, 4), std::sin(w1 * 2.0));
  EXPECT_DOUBLE_EQ(pe.grid.at(3, 2, 6), std::sin(w1 * 3.0));
  EXPECT_DOUBLE_EQ(pe.grid.at(3, 2, 7), std::cos(w1 * 3.0));
}

TEST(SinusoidalPe, RejectsDimensionNotMultipleOfFour) {
  EXPECT_THROW(sinusoidal_pe(2, 2, 6), ParameterError);
  EXPECT_THROW(sinusoidal_pe(2, 2, 0), ParameterError);
}

TEST(SinusoidalPe, InjectiveOnSmallGrid) {
  const PEMap pe = sinusoidal_pe(16, 16, 32);
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < 256; ++i) {
    seen.insert(std::vector<double>(pe.grid.ptr() + i * 32, pe.grid.ptr() + (i + 1) * 32));
  }
  EXPECT_EQ(seen.size(), 256u);
}

TEST(NormalizedPe, EqualExtentIsBitwisePlainPe) {
  const PEMap a = sinusoidal_pe(8, 10, 32);
  const PEMap b = normalized_pe({8, 10}, {8, 10}, 32);
  EXPECT_TRUE(a.grid == b.grid);
  EXPECT_EQ(b.alpha, 1.0);
  EXPECT_EQ(b.beta, 1.0);
}

TEST(NormalizedPe, DoubleResolutionSamplesTrainPositions) {
  const PEMap train = sinusoidal_pe(8, 8, 16);
  const PEMap test = normalized_pe({16, 16}, {8, 8}, 16);
  EXPECT_EQ(test.alpha, 0.5);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(test.grid.at(2 * y, 2 * x, c), train.grid.at(y, x, c));
    }
  }
}

TEST(NormalizedPe, ScaledCornerStaysInTrainRange) {
  const PEMap pe = normalized_pe({12, 18}, {8, 8}, 16);
  EXPECT_LE((18 - 1) * pe.alpha, 8.0);
  EXPECT_LE((12 - 1) * pe.beta, 8.0);
  EXPECT_THROW(normalized_pe({0, 4}, {8, 8}, 16), ParameterError);
}

TEST(AddPe, ZeroCasesAndInverse) {
  std::mt19937_64 rng(3);
  const Tensor f = testing::random_tensor({4, 4, 8}, rng);
  const PEMap pe = sinusoidal_pe(4, 4, 8);
  PEMap zero = pe;
  zero.grid.fill(0.0);
  EXPECT_TRUE(add_pe({Var::constant(f), 8, {32, 32}}, zero).grid.value() == f);
  EXPECT_TRUE(add_pe({Var::constant(Tensor({4, 4, 8})), 8, {32, 32}}, pe).grid.value() == pe.grid);
  const Var back = sub(add_pe({Var::constant(f), 8, {32, 32}}, pe).grid, Var::constant(pe.grid));
  EXPECT_LT(max_abs_diff(back.value(), f), 1e-12);
  EXPECT_THROW(add_pe({Var::constant(f), 8, {32, 32}}, sinusoidal_pe(4, 5, 8)), DimensionError);
}

}  // namespace
}  // namespace aspan
