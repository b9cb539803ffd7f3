#include "aspan/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "aspan/errors.hpp"
#include "aspan/params.hpp"
#include "aspan/tensor_io.hpp"

namespace aspan {

Homography Homography::translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }

double Homography::denominator(double x, double y) const { return m[6] * x + m[7] * y + m[8]; }

std::pair<double, double> Homography::apply(double x, double y) const {
  const double w = denominator(x, y);
  return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
}

double Homography::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  const double d = det();
  if (std::abs(d) < 1e-12) throw NumericError("homography is singular");
  Homography r;
  r.m = {(m[4] * m[8] - m[5] * m[7]) / d, (m[2] * m[7] - m[1] * m[8]) / d, (m[1] * m[5] - m[2] * m[4]) / d,
         (m[5] * m[6] - m[3] * m[8]) / d, (m[0] * m[8] - m[2] * m[6]) / d, (m[2] * m[3] - m[0] * m[5]) / d,
         (m[3] * m[7] - m[4] * m[6]) / d, (m[1] * m[6] - m[0] * m[7]) / d, (m[0] * m[4] - m[1] * m[3]) / d};
  return r;
}

Homography Homography::operator*(const Homography& o) const {
  Homography r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r.m[3 * i + j] = m[3 * i] * o.m[j] + m[3 * i + 1] * o.m[3 + j] + m[3 * i + 2] * o.m[6 + j];
    }
  }
  return r;
}

std::string to_string(WarpTier t) {
  switch (t) {
    case WarpTier::easy: return "easy";
    case WarpTier::medium: return "medium";
    case WarpTier::hard: return "hard";
  }
  return "?";
}

WarpTier parse_warp_tier(const std::string& s) {
  if (s == "easy") return WarpTier::easy;
  if (s == "medium") return WarpTier::medium;
  if (s == "hard") return WarpTier::hard;
  throw ParameterError("unknown warp tier '" + s + "'");
}

nlohmann::json to_json(const WarpConfig& c) {
  nlohmann::json j{{"tier", to_string(c.tier)},
                   {"occluder_prob", c.occluder_prob},
                   {"photometric", c.photometric},
                   {"channels", c.channels}};
  if (c.pixel_homography) j["pixel_homography"] = c.pixel_homography->m;
  return j;
}

WarpConfig warp_config_from_json(const nlohmann::json& j) {
  WarpConfig c;
  try {
    if (j.contains("tier")) c.tier = parse_warp_tier(j.at("tier").get<std::string>());
    c.occluder_prob = j.value("occluder_prob", c.occluder_prob);
    c.photometric = j.value("photometric", c.photometric);
    c.channels = j.value("channels", c.channels);
    if (j.contains("pixel_homography")) c.pixel_homography = Homography{j.at("pixel_homography").get<std::array<double, 9>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("warp config: ") + e.what());
  }
  if (!(c.occluder_prob >= 0.0 && c.occluder_prob <= 1.0)) throw ParameterError("warp config: occluder_prob outside [0, 1]");
  if (c.channels != 1 && c.channels != 3) throw ParameterError("warp config: channels must be 1 or 3");
  return c;
}

bool SynthPair::operator==(const SynthPair& o) const {
  if (!(image_a == o.image_a && image_b == o.image_b && flow_ab == o.flow_ab && flow_ba == o.flow_ba &&
        vis_a == o.vis_a && vis_b == o.vis_b && homography.m == o.homography.m && seed == o.seed &&
        extent.h == o.extent.h && extent.w == o.extent.w && occluders.size() == o.occluders.size())) {
    return false;
  }
  for (std::size_t k = 0; k < occluders.size(); ++k) {
    const Occluder &a = occluders[k], &b = o.occluders[k];
    if (a.x0 != b.x0 || a.y0 != b.y0 || a.x1 != b.x1 || a.y1 != b.y1) return false;
  }
  return true;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t key, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = splitmix64(key ^ splitmix64(static_cast<std::uint64_t>(ix) * 0x632be59bd9b4e019ULL ^
                                                      static_cast<std::uint64_t>(iy)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t key, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double a = lattice(key, ix, iy), b = lattice(key, ix + 1, iy);
  const double c = lattice(key, ix, iy + 1), d = lattice(key, ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

struct Blob {
  bool ellipse;
  double cx, cy, rx, ry, c, s, level;

  bool contains(double u, double v) const {
    const double dx = u - cx, dy = v - cy;
    const double a = (c * dx + s * dy) / rx, b = (-s * dx + c * dy) / ry;
    return ellipse ? a * a + b * b <= 1.0 : std::abs(a) <= 1.0 && std::abs(b) <= 1.0;
  }
};

// Continuous texture over normalized coordinates, unbounded so warped views
// always find content.
struct Scene {
  std::uint64_t key = 0;
  std::vector<Blob> blobs;

  double eval(double u, double v) const {
    double n = 0.0, amp = 1.0, norm = 0.0, f = 3.0;
    for (int o = 0; o < 4; ++o, amp *= 0.5, f *= 2.0) {
      n += amp * value_noise(key + static_cast<std::uint64_t>(o), u * f, v * f);
      norm += amp;
    }
    double t = std::clamp(0.5 + 1.6 * (n / norm - 0.5), 0.0, 1.0);
    for (const Blob& b : blobs) {
      if (b.contains(u, v)) t = 0.75 * b.level + 0.25 * t;
    }
    return t;
  }
};

Scene make_scene(Rng& rng) {
  Scene s;
  s.key = rng();
  const int count = 8 + static_cast<int>(uniform01(rng) * 8);
  for (int k = 0; k < count; ++k) {
    const double angle = uniform(rng, 0.0, std::numbers::pi);
    s.blobs.push_back({uniform01(rng) < 0.5, uniform(rng, -0.3, 1.3), uniform(rng, -0.3, 1.3),
                       uniform(rng, 0.04, 0.18), uniform(rng, 0.04, 0.18), std::cos(angle), std::sin(angle),
                       uniform01(rng)});
  }
  return s;
}

struct TierLimits {
  double rot_deg, scale_lo, scale_hi, trans, persp;
};

TierLimits limits(WarpTier t) {
  switch (t) {
    case WarpTier::easy: return {8, 0.9, 1.1, 0.06, 0.1};
    case WarpTier::medium: return {20, 0.8, 1.25, 0.12, 0.25};
    case WarpTier::hard: return {40, 0.67, 1.5, 0.2, 0.5};
  }
  return {0, 1, 1, 0, 0};
}

Homography random_normalized_warp(Rng& rng, WarpTier tier) {
  const TierLimits L = limits(tier);
  const double a = uniform(rng, -L.rot_deg, L.rot_deg) * std::numbers::pi / 180.0;
  const double s = std::exp(uniform(rng, std::log(L.scale_lo), std::log(L.scale_hi)));
  const double tx = uniform(rng, -L.trans, L.trans), ty = uniform(rng, -L.trans, L.trans);
  const double px = uniform(rng, -L.persp, L.persp), py = uniform(rng, -L.persp, L.persp);
  const Homography centre{{1, 0, -0.5, 0, 1, -0.5, 0, 0, 1}};
  const Homography persp{{1, 0, 0, 0, 1, 0, px, py, 1}};
  const Homography rs{{s * std::cos(a), -s * std::sin(a), 0, s * std::sin(a), s * std::cos(a), 0, 0, 0, 1}};
  const Homography back{{1, 0, 0.5 + tx, 0, 1, 0.5 + ty, 0, 0, 1}};
  return back * rs * persp * centre;
}

// Normalized (u, v) = ((x + 0.5) / W, (y + 0.5) / H) for pixel centres.
Homography pixel_to_normalized(Extent e) {
  const double w = static_cast<double>(e.w), h = static_cast<double>(e.h);
  return {{1 / w, 0, 0.5 / w, 0, 1 / h, 0.5 / h, 0, 0, 1}};
}

bool positive_on_frame(const Homography& h) {
  for (double x : {0.0, 1.0}) {
    for (double y : {0.0, 1.0}) {
      if (h.denominator(x, y) <= 1e-3) return false;
    }
  }
  return true;
}

double overlap_fraction(const Homography& hn) {
  int inside = 0;
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 8; ++j) {
      const auto [u, v] = hn.apply((j + 0.5) / 8.0, (i + 0.5) / 8.0);
      inside += (u >= 0 && u <= 1 && v >= 0 && v <= 1) ? 1 : 0;
    }
  }
  return inside / 64.0;
}

constexpr double kSubsample[2] = {-0.25, 0.25};

}  // namespace

SynthPair gen_pair(std::uint64_t seed, Extent extent, const WarpConfig& cfg) {
  if (extent.h == 0 || extent.w == 0 || extent.h % 8 != 0 || extent.w % 8 != 0) {
    throw InputError("gen_pair: extent " + std::to_string(extent.h) + "x" + std::to_string(extent.w) +
                     " is not divisible by 8");
  }
  if (cfg.channels != 1 && cfg.channels != 3) throw ParameterError("gen_pair: channels must be 1 or 3");
  Rng rng(seed);
  const Scene scene = make_scene(rng);
  const Scene occluder_scene = make_scene(rng);

  const Homography n = pixel_to_normalized(extent);
  Homography hn;
  if (cfg.pixel_homography) {
    hn = n * *cfg.pixel_homography * n.inverse();
  } else {
    hn = random_normalized_warp(rng, cfg.tier);
    for (int attempt = 0; attempt < 100; ++attempt) {
      if (std::abs(hn.det()) >= 1e-6 && positive_on_frame(hn) && positive_on_frame(hn.inverse()) &&
          overlap_fraction(hn) >= 0.4) {
        break;
      }
      hn = random_normalized_warp(rng, cfg.tier);
    }
  }
  if (std::abs(hn.det()) < 1e-6) throw ParameterError("gen_pair: degenerate homography");
  const Homography hn_inv = hn.inverse();

  SynthPair p;
  p.seed = seed;
  p.extent = extent;
  p.homography = n.inverse() * hn * n;
  const Homography h_inv = p.homography.inverse();

  const double W = static_cast<double>(extent.w), H = static_cast<double>(extent.h);
  if (uniform01(rng) < cfg.occluder_prob) {
    const int count = uniform01(rng) < 0.5 ? 1 : 2;
    for (int k = 0; k < count; ++k) {
      const double ow = uniform(rng, 0.15, 0.35), oh = uniform(rng, 0.15, 0.35);
      const double u0 = uniform(rng, 0.0, 1.0 - ow), v0 = uniform(rng, 0.0, 1.0 - oh);
      p.occluders.push_back({u0 * W - 0.5, v0 * H - 0.5, (u0 + ow) * W - 0.5, (v0 + oh) * H - 0.5});
    }
  }
  double gain = 1.0, bias = 0.0;
  std::array<double, 3> tint{1.0, 1.0, 1.0};
  if (cfg.photometric) {
    gain = uniform(rng, 0.8, 1.2);
    bias = uniform(rng, -0.1, 0.1);
  }
  if (cfg.channels == 3) {
    for (double& t : tint) t = uniform(rng, 0.6, 1.0);
  }
  Rng noise(splitmix64(seed ^ 0x6e6f697365ULL) ^ (extent.h << 20) ^ extent.w);
  const double sigma = cfg.photometric ? 0.02 : 0.0;

  const std::size_t C = cfg.channels;
  p.image_a = Tensor({extent.h, extent.w, C});
  p.image_b = Tensor({extent.h, extent.w, C});
  auto store = [&](Tensor& img, std::size_t y, std::size_t x, double v) {
    for (std::size_t c = 0; c < C; ++c) {
      double val = v * tint[c];
      if (sigma > 0.0) val += sigma * normal(noise);
      img.at(y, x, c) = static_cast<double>(static_cast<float>(std::clamp(val, 0.0, 1.0)));
    }
  };
  for (std::size_t y = 0; y < extent.h; ++y) {
    for (std::size_t x = 0; x < extent.w; ++x) {
      double va = 0.0, vb = 0.0;
      for (double dy : kSubsample) {
        for (double dx : kSubsample) {
          const double xs = static_cast<double>(x) + dx, ys = static_cast<double>(y) + dy;
          const auto [ua, wa] = n.apply(xs, ys);
          va += scene.eval(ua, wa);
          bool occluded = false;
          for (const Occluder& o : p.occluders) occluded = occluded || o.contains(xs, ys);
          if (occluded) {
            vb += occluder_scene.eval(ua, wa);
          } else {
            const auto [u, v] = hn_inv.apply(ua, wa);
            vb += gain * scene.eval(u, v) + bias;
          }
        }
      }
      store(p.image_a, y, x, va / 4.0);
      store(p.image_b, y, x, vb / 4.0);
    }
  }

  p.flow_ab = Tensor({extent.h, extent.w, 2});
  p.flow_ba = Tensor({extent.h, extent.w, 2});
  p.vis_a = Tensor({extent.h, extent.w});
  p.vis_b = Tensor({extent.h, extent.w});
  for (std::size_t y = 0; y < extent.h; ++y) {
    for (std::size_t x = 0; x < extent.w; ++x) {
      const double xd = static_cast<double>(x), yd = static_cast<double>(y);
      const auto [bx, by] = p.homography.apply(xd, yd);
      p.flow_ab.at(y, x, 0) = bx;
      p.flow_ab.at(y, x, 1) = by;
      p.vis_a.at(y, x) = visible_in_b(p, xd, yd) ? 1.0 : 0.0;
      const auto [ax, ay] = h_inv.apply(xd, yd);
      p.flow_ba.at(y, x, 0) = ax;
      p.flow_ba.at(y, x, 1) = ay;
      p.vis_b.at(y, x) = visible_in_a(p, xd, yd) ? 1.0 : 0.0;
    }
  }
  return p;
}

namespace {

bool inside_frame(const SynthPair& p, double x, double y) {
  return x >= 0.0 && y >= 0.0 && x <= static_cast<double>(p.extent.w) - 1.0 &&
         y <= static_cast<double>(p.extent.h) - 1.0;
}

bool occluded(const SynthPair& p, double xb, double yb) {
  return std::any_of(p.occluders.begin(), p.occluders.end(), [&](const Occluder& o) { return o.contains(xb, yb); });
}

}  // namespace

bool visible_in_b(const SynthPair& p, double xa, double ya) {
  if (p.homography.denominator(xa, ya) <= 0.0) return false;
  const auto [xb, yb] = p.homography.apply(xa, ya);
  return inside_frame(p, xb, yb) && !occluded(p, xb, yb);
}

bool visible_in_a(const SynthPair& p, double xb, double yb) {
  const Homography inv = p.homography.inverse();
  if (inv.denominator(xb, yb) <= 0.0) return false;
  const auto [xa, ya] = inv.apply(xb, yb);
  return inside_frame(p, xa, ya) && !occluded(p, xb, yb);
}

CellPairs gt_coarse_matches(const SynthPair& p, std::size_t stride) {
  if (stride == 0 || p.extent.h % stride != 0 || p.extent.w % stride != 0) {
    throw ParameterError("gt_coarse_matches: stride must divide the image extent");
  }
  const std::size_t gh = p.extent.h / stride, gw = p.extent.w / stride;
  const Homography inv = p.homography.inverse();
  auto to_cell = [&](double x, double y, std::size_t& cell) {
    const long cx = std::lround(pixel_to_grid(x, stride)), cy = std::lround(pixel_to_grid(y, stride));
    if (cx < 0 || cy < 0 || cx >= static_cast<long>(gw) || cy >= static_cast<long>(gh)) return false;
    cell = static_cast<std::size_t>(cy) * gw + static_cast<std::size_t>(cx);
    return true;
  };
  CellPairs out;
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      const double xa = grid_to_pixel(static_cast<double>(j), stride), ya = grid_to_pixel(static_cast<double>(i), stride);
      if (!visible_in_b(p, xa, ya)) continue;
      const auto [xb, yb] = p.homography.apply(xa, ya);
      std::size_t cb = 0, back = 0;
      if (!to_cell(xb, yb, cb)) continue;
      const double xbc = grid_to_pixel(static_cast<double>(cb % gw), stride);
      const double ybc = grid_to_pixel(static_cast<double>(cb / gw), stride);
      if (!visible_in_a(p, xbc, ybc)) continue;
      const auto [xr, yr] = inv.apply(xbc, ybc);
      if (to_cell(xr, yr, back) && back == i * gw + j) out.emplace_back(i * gw + j, cb);
    }
  }
  return out;
}

FlowTarget cell_flow_target(const SynthPair& p, std::size_t stride, bool a_to_b) {
  if (stride == 0 || p.extent.h % stride != 0 || p.extent.w % stride != 0) {
    throw ParameterError("cell_flow_target: stride must divide the image extent");
  }
  const std::size_t gh = p.extent.h / stride, gw = p.extent.w / stride;
  const Homography h = a_to_b ? p.homography : p.homography.inverse();
  FlowTarget t{Tensor({gh, gw, 2}), std::vector<std::uint8_t>(gh * gw, 0)};
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      const double x = grid_to_pixel(static_cast<double>(j), stride), y = grid_to_pixel(static_cast<double>(i), stride);
      const auto [u, v] = h.apply(x, y);
      t.coords.at(i, j, 0) = u;
      t.coords.at(i, j, 1) = v;
      t.visible[i * gw + j] = (a_to_b ? visible_in_b(p, x, y) : visible_in_a(p, x, y)) ? 1 : 0;
    }
  }
  return t;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base ^ splitmix64(index + 0x5eedULL));
}

std::vector<SynthPair> generate_dataset(const DatasetManifest& m) {
  std::vector<SynthPair> pairs;
  pairs.reserve(m.count);
  for (std::size_t k = 0; k < m.count; ++k) pairs.push_back(gen_pair(derive_seed(m.seed, k), m.extent, m.warp));
  return pairs;
}

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_pair(const std::filesystem::path& dir, const SynthPair& p) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_tensor(dir / "image_a.aspt", p.image_a, DType::f32);
  write_tensor(dir / "image_b.aspt", p.image_b, DType::f32);
  write_tensor(dir / "flow_ab.aspt", p.flow_ab);
  write_tensor(dir / "flow_ba.aspt", p.flow_ba);
  write_tensor(dir / "vis_a.aspt", p.vis_a, DType::f32);
  write_tensor(dir / "vis_b.aspt", p.vis_b, DType::f32);
  nlohmann::json occ = nlohmann::json::array();
  for (const Occluder& o : p.occluders) occ.push_back({o.x0, o.y0, o.x1, o.y1});
  write_json(dir / "meta.json", {{"seed", p.seed},
                                 {"extent", {p.extent.h, p.extent.w}},
                                 {"homography", p.homography.m},
                                 {"occluders", occ}});
}

SynthPair read_pair(const std::filesystem::path& dir) {
  SynthPair p;
  p.image_a = read_tensor(dir / "image_a.aspt");
  p.image_b = read_tensor(dir / "image_b.aspt");
  p.flow_ab = read_tensor(dir / "flow_ab.aspt");
  p.flow_ba = read_tensor(dir / "flow_ba.aspt");
  p.vis_a = read_tensor(dir / "vis_a.aspt");
  p.vis_b = read_tensor(dir / "vis_b.aspt");
  const nlohmann::json meta = read_json(dir / "meta.json");
  try {
    p.seed = meta.at("seed").get<std::uint64_t>();
    p.extent = {meta.at("extent")[0].get<std::size_t>(), meta.at("extent")[1].get<std::size_t>()};
    p.homography.m = meta.at("homography").get<std::array<double, 9>>();
    for (const auto& o : meta.at("occluders")) {
      p.occluders.push_back({o[0].get<double>(), o[1].get<double>(), o[2].get<double>(), o[3].get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/meta.json: " + e.what());
  }
  const Shape img{p.extent.h, p.extent.w};
  if (p.image_a.rank() != 3 || p.image_a.dim(0) != p.extent.h || p.image_a.dim(1) != p.extent.w ||
      p.image_b.shape() != p.image_a.shape() || p.vis_a.shape() != img || p.vis_b.shape() != img ||
      p.flow_ab.shape() != Shape{p.extent.h, p.extent.w, 2} || p.flow_ba.shape() != p.flow_ab.shape()) {
    throw FormatError(dir.string() + ": tensor shapes disagree with meta.json");
  }
  return p;
}

void write_dataset(const std::filesystem::path& dir, const DatasetManifest& m, const std::vector<SynthPair>& pairs) {
  if (pairs.size() != m.pairs.size()) throw ParameterError("write_dataset: manifest and pair counts differ");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t k = 0; k < pairs.size(); ++k) write_pair(dir / m.pairs[k], pairs[k]);
  write_json(dir / "manifest.json", {{"format", "aspan-synth"},
                                     {"version", 1},
                                     {"seed", m.seed},
                                     {"count", m.count},
                                     {"extent", {m.extent.h, m.extent.w}},
                                     {"warp", to_json(m.warp)},
                                     {"pairs", m.pairs}});
}

std::pair<DatasetManifest, std::vector<SynthPair>> read_dataset(const std::filesystem::path& dir) {
  const nlohmann::json j = read_json(dir / "manifest.json");
  DatasetManifest m;
  try {
    if (j.at("format").get<std::string>() != "aspan-synth" || j.at("version").get<int>() != 1) {
      throw FormatError(dir.string() + ": unsupported manifest format");
    }
    m.seed = j.at("seed").get<std::uint64_t>();
    m.count = j.at("count").get<std::size_t>();
    m.extent = {j.at("extent")[0].get<std::size_t>(), j.at("extent")[1].get<std::size_t>()};
    m.warp = warp_config_from_json(j.at("warp"));
    m.pairs = j.at("pairs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir.string() + "/manifest.json: " + e.what());
  }
  std::vector<SynthPair> pairs;
  for (const std::string& name : m.pairs) pairs.push_back(read_pair(dir / name));
  return {m, pairs};
}

}  // namespace aspan
