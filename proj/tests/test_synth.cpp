#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "aspan/errors.hpp"
#include "aspan/feature_map.hpp"
#include "aspan/synth.hpp"

namespace aspan {
namespace {

namespace fs = std::filesystem;

WarpConfig fixed_warp(const Homography& h) {
  WarpConfig c;
  c.pixel_homography = h;
  c.occluder_prob = 0.0;
  c.photometric = false;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("aspan_test_" + name);
  fs::remove_all(p);
  return p;
}

TEST(GenPair, IdentityWarpCopiesImageAndFlow) {
  const SynthPair p = gen_pair(11, {64, 64}, fixed_warp(Homography{}));
  EXPECT_TRUE(p.image_a == p.image_b);
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      EXPECT_NEAR(p.flow_ab.at(y, x, 0), static_cast<double>(x), 1e-9);
      EXPECT_NEAR(p.flow_ab.at(y, x, 1), static_cast<double>(y), 1e-9);
      EXPECT_EQ(p.vis_a.at(y, x), 1.0);
    }
  }
  const CellPairs gt = gt_coarse_matches(p, 8);
  ASSERT_EQ(gt.size(), 64u);
  for (const auto& [i, j] : gt) EXPECT_EQ(i, j);
}

TEST(GenPair, TranslationShiftsContentAndHidesBorder) {
  const SynthPair p = gen_pair(12, {64, 64}, fixed_warp(Homography::translation(10, 0)));
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      EXPECT_NEAR(p.flow_ab.at(y, x, 0), x + 10.0, 1e-9);
      EXPECT_EQ(p.vis_a.at(y, x), x < 54 ? 1.0 : 0.0);
      EXPECT_EQ(p.vis_b.at(y, x), x >= 10 ? 1.0 : 0.0);
      if (x < 54) EXPECT_NEAR(p.image_b.at(y, x + 10, 0), p.image_a.at(y, x, 0), 1e-6);
    }
  }
}

TEST(GenPair, EightPixelShiftMovesOneCell) {
  const SynthPair p = gen_pair(13, {64, 64}, fixed_warp(Homography::translation(8, 0)));
  const CellPairs gt = gt_coarse_matches(p, 8);
  EXPECT_EQ(gt.size(), 56u);
  for (const auto& [i, j] : gt) {
    EXPECT_NE(i % 8, 7u);
    EXPECT_EQ(j, i + 1);
  }
}

TEST(GenPair, RandomWarpsAreInvertibleAndConsistent) {
  WarpConfig cfg;
  cfg.tier = WarpTier::hard;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SynthPair p = gen_pair(seed, {64, 64}, cfg);
    const Homography inv = p.homography.inverse();
    double worst = 0.0;
    for (std::size_t y = 0; y < 64; y += 3) {
      for (std::size_t x = 0; x < 64; x += 3) {
        if (p.vis_a.at(y, x) == 0.0) continue;
        const double xb = p.flow_ab.at(y, x, 0), yb = p.flow_ab.at(y, x, 1);
        const auto [xr, yr] = inv.apply(xb, yb);
        EXPECT_NEAR(xr, static_cast<double>(x), 1e-8);
        EXPECT_NEAR(yr, static_cast<double>(y), 1e-8);
        // Cycle through the stored dense B->A field, bilinearly interpolated.
        const std::size_t x0 = std::min<std::size_t>(static_cast<std::size_t>(xb), 62);
        const std::size_t y0 = std::min<std::size_t>(static_cast<std::size_t>(yb), 62);
        const double fx = xb - x0, fy = yb - y0;
        for (std::size_t c = 0; c < 2; ++c) {
          const double v = (1 - fy) * ((1 - fx) * p.flow_ba.at(y0, x0, c) + fx * p.flow_ba.at(y0, x0 + 1, c)) +
                           fy * ((1 - fx) * p.flow_ba.at(y0 + 1, x0, c) + fx * p.flow_ba.at(y0 + 1, x0 + 1, c));
          worst = std::max(worst, std::abs(v - static_cast<double>(c == 0 ? x : y)));
        }
      }
    }
    EXPECT_LT(worst, 0.5) << "seed " << seed;
  }
}

TEST(GtCoarseMatches, ReprojectionWithinHalfDiagonal) {
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    const SynthPair p = gen_pair(seed, {64, 64}, WarpConfig{});
    for (const auto& [i, j] : gt_coarse_matches(p, 8)) {
      const auto [xb, yb] = p.homography.apply(grid_to_pixel(i % 8, 8), grid_to_pixel(i / 8, 8));
      const double dx = pixel_to_grid(xb, 8) - static_cast<double>(j % 8);
      const double dy = pixel_to_grid(yb, 8) - static_cast<double>(j / 8);
      EXPECT_LE(std::hypot(dx, dy), std::sqrt(0.5) + 1e-12);
    }
  }
}

TEST(CellFlowTarget, MatchesHomographyAtCellCentres) {
  const SynthPair p = gen_pair(31, {64, 64}, WarpConfig{});
  const FlowTarget t = cell_flow_target(p, 8, true);
  EXPECT_EQ(t.coords.shape(), (Shape{8, 8, 2}));
  const auto [u, v] = p.homography.apply(grid_to_pixel(3, 8), grid_to_pixel(5, 8));
  EXPECT_NEAR(t.coords.at(5, 3, 0), u, 1e-12);
  EXPECT_NEAR(t.coords.at(5, 3, 1), v, 1e-12);
  EXPECT_THROW(cell_flow_target(p, 7, true), ParameterError);
}

TEST(GenPair, HarderTiersMoveFurther) {
  auto mean_shift = [](WarpTier tier) {
    WarpConfig cfg;
    cfg.tier = tier;
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const SynthPair p = gen_pair(seed, {32, 32}, cfg);
      for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) total += std::hypot(p.flow_ab.at(y, x, 0) - x, p.flow_ab.at(y, x, 1) - y);
      }
    }
    return total;
  };
  const double easy = mean_shift(WarpTier::easy), medium = mean_shift(WarpTier::medium), hard = mean_shift(WarpTier::hard);
  EXPECT_LT(easy, medium);
  EXPECT_LT(medium, hard);
}

TEST(GenPair, DeterministicPerSeed) {
  const WarpConfig cfg;
  EXPECT_TRUE(gen_pair(5, {32, 48}, cfg) == gen_pair(5, {32, 48}, cfg));
  EXPECT_FALSE(gen_pair(5, {32, 48}, cfg).image_a == gen_pair(6, {32, 48}, cfg).image_a);
  WarpConfig rgb = cfg;
  rgb.channels = 3;
  EXPECT_EQ(gen_pair(5, {32, 32}, rgb).image_a.shape(), (Shape{32, 32, 3}));
}

TEST(GenPair, RejectsBadExtentAndConfig) {
  EXPECT_THROW(gen_pair(1, {60, 64}, WarpConfig{}), InputError);
  EXPECT_THROW(gen_pair(1, {0, 64}, WarpConfig{}), InputError);
  WarpConfig c;
  c.channels = 2;
  EXPECT_THROW(gen_pair(1, {64, 64}, c), ParameterError);
  Homography singular;
  singular.m = {1, 0, 0, 2, 0, 0, 0, 0, 1};
  EXPECT_THROW(gen_pair(1, {64, 64}, fixed_warp(singular)), ParameterError);
}

TEST(WarpConfig, JsonRoundTrip) {
  WarpConfig c;
  c.tier = WarpTier::hard;
  c.occluder_prob = 0.25;
  c.pixel_homography = Homography::translation(3, -2);
  const WarpConfig back = warp_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(parse_warp_tier("brutal"), ParameterError);
  EXPECT_THROW(warp_config_from_json({{"occluder_prob", 2.0}}), ParameterError);
}

TEST(Dataset, RoundTripAndDeterminism) {
  DatasetManifest m;
  m.seed = 77;
  m.count = 3;
  m.extent = {32, 32};
  for (std::size_t k = 0; k < m.count; ++k) m.pairs.push_back("pair_" + std::to_string(k));
  const auto pairs = generate_dataset(m);
  EXPECT_TRUE(pairs[1] == generate_dataset(m)[1]);
  EXPECT_EQ(pairs[2].seed, derive_seed(77, 2));
  const fs::path dir = scratch_dir("dataset");
  write_dataset(dir, m, pairs);
  const auto [m2, back] = read_dataset(dir);
  EXPECT_EQ(m2.seed, 77u);
  EXPECT_EQ(m2.pairs, m.pairs);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_TRUE(back[k] == pairs[k]);
  fs::remove_all(dir);
}

TEST(Dataset, TruncatedTensorIsFormatError) {
  const fs::path dir = scratch_dir("truncated");
  write_pair(dir, gen_pair(3, {32, 32}, WarpConfig{}));
  fs::resize_file(dir / "flow_ab.aspt", fs::file_size(dir / "flow_ab.aspt") / 2);
  EXPECT_THROW(read_pair(dir), FormatError);
  fs::remove_all(dir);
  EXPECT_THROW(read_dataset(dir), IoError);
}

}  // namespace
}  // namespace aspan
