#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "aspan/flow.hpp"
#include "aspan/tensor.hpp"

namespace aspan {

// Row-major 3x3 projective map on (x, y, 1).
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography translation(double tx, double ty);
  // Homogeneous denominator of the mapped point; positive on valid frames.
  double denominator(double x, double y) const;
  std::pair<double, double> apply(double x, double y) const;
  Homography inverse() const;
  Homography operator*(const Homography& o) const;
  double det() const;
};

enum class WarpTier { easy, medium, hard };

std::string to_string(WarpTier t);
WarpTier parse_warp_tier(const std::string& s);

struct WarpConfig {
  WarpTier tier = WarpTier::medium;
  // Replaces the random warp; in pixel coordinates of the requested extent.
  std::optional<Homography> pixel_homography;
  double occluder_prob = 0.5;
  bool photometric = true;
  std::size_t channels = 1;
};

nlohmann::json to_json(const WarpConfig& c);
WarpConfig warp_config_from_json(const nlohmann::json& j);

// Axis-aligned occluder rectangle in B pixels, half-open [x0, x1) x [y0, y1).
struct Occluder {
  double x0, y0, x1, y1;
  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct SynthPair {
  Tensor image_a, image_b;  // H x W x C in [0, 1]
  Tensor flow_ab, flow_ba;  // H x W x 2 pixel coordinates in the other image
  Tensor vis_a, vis_b;      // H x W, 1 visible / 0 not
  Homography homography;    // A pixels -> B pixels
  std::vector<Occluder> occluders;
  std::uint64_t seed = 0;
  Extent extent;

  bool operator==(const SynthPair& o) const;
};

// The scene (texture, warp, occluders, photometric change) depends on the seed
// only, so the same seed rendered at another extent shows the same content.
SynthPair gen_pair(std::uint64_t seed, Extent extent, const WarpConfig& cfg);

// Visibility of an A-pixel coordinate after warping, under the pair's geometry.
bool visible_in_b(const SynthPair& p, double xa, double ya);
bool visible_in_a(const SynthPair& p, double xb, double yb);

using CellPairs = std::vector<std::pair<std::size_t, std::size_t>>;

// Warped A cell centre rounded to the nearest B cell, kept when the B cell maps
// back to the same A cell and both centres are visible.
CellPairs gt_coarse_matches(const SynthPair& p, std::size_t stride);

// Warped cell centres and their visibility for one direction on the stride grid.
FlowTarget cell_flow_target(const SynthPair& p, std::size_t stride, bool a_to_b);

struct DatasetManifest {
  std::vector<std::string> pairs;
  WarpConfig warp;
  Extent extent;
  std::uint64_t seed = 0;
  std::size_t count = 0;
};

// Pair k uses seed derive_seed(manifest seed, k).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);
std::vector<SynthPair> generate_dataset(const DatasetManifest& m);

void write_pair(const std::filesystem::path& dir, const SynthPair& p);
SynthPair read_pair(const std::filesystem::path& dir);
void write_dataset(const std::filesystem::path& dir, const DatasetManifest& m, const std::vector<SynthPair>& pairs);
std::pair<DatasetManifest, std::vector<SynthPair>> read_dataset(const std::filesystem::path& dir);

}  // namespace aspan
