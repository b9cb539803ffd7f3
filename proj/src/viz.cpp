#include "aspan/viz.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include "aspan/errors.hpp"
#include "aspan/tensor_io.hpp"

namespace aspan {

namespace {

using Rgb = std::array<double, 3>;

Tensor to_rgb(const Tensor& img) {
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3)) {
    throw DimensionError("image must be H x W x 1 or H x W x 3, got " + shape_str(img.shape()));
  }
  if (img.dim(2) == 3) return img;
  Tensor out({img.dim(0), img.dim(1), 3});
  for (std::size_t i = 0; i < img.dim(0) * img.dim(1); ++i) out[3 * i] = out[3 * i + 1] = out[3 * i + 2] = img[i];
  return out;
}

Rgb ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  return {t, 0.15, 1.0 - t};
}

void put(Tensor& img, long x, long y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= static_cast<long>(img.dim(1)) || y >= static_cast<long>(img.dim(0))) return;
  for (std::size_t k = 0; k < 3; ++k) img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), k) = c[k];
}

void line(Tensor& img, double x0, double y0, double x1, double y1, const Rgb& c) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    put(img, std::lround(x0 + t * (x1 - x0)), std::lround(y0 + t * (y1 - y0)), c);
  }
}

void rect(Tensor& img, double x0, double y0, double x1, double y1, const Rgb& c) {
  line(img, x0, y0, x1, y0, c);
  line(img, x1, y0, x1, y1, c);
  line(img, x1, y1, x0, y1, c);
  line(img, x0, y1, x0, y0, c);
}

std::string next_token(std::istream& is) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string rest;
      std::getline(is, rest);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      tok.push_back(ch);
      break;
    }
  }
  while (is.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) tok.push_back(ch);
  return tok;
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  const std::string magic = next_token(is);
  if (magic != "P5" && magic != "P6") throw FormatError(path.string() + ": only binary P5/P6 images are supported");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token(is));
    h = std::stoul(next_token(is));
    maxval = std::stoul(next_token(is));
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": malformed header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw FormatError(path.string() + ": unsupported header values");
  const std::size_t c = magic == "P5" ? 1 : 3;
  std::string bytes(h * w * c, '\0');
  if (!is.read(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw FormatError(path.string() + ": truncated pixel data");
  }
  Tensor img({h, w, c});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / static_cast<double>(maxval);
  }
  return img;
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  Tensor img = ext == ".aspt" ? read_tensor(path) : read_pnm(path);
  if (img.rank() == 2) img = img.reshaped({img.dim(0), img.dim(1), 1});
  if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3)) {
    throw InputError(path.string() + ": expected an H x W x C image, got " + shape_str(img.shape()));
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  const Tensor rgb = to_rgb(image);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << rgb.dim(1) << ' ' << rgb.dim(0) << "\n255\n";
  for (double v : rgb.data()) os.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor match_overlay(const Tensor& image_a, const Tensor& image_b, const MatchSet& m) {
  const Tensor a = to_rgb(image_a), b = to_rgb(image_b);
  if (a.dim(0) != b.dim(0)) throw DimensionError("match_overlay: images differ in height");
  const std::size_t h = a.dim(0), wa = a.dim(1), wb = b.dim(1);
  Tensor out({h, wa + wb, 3});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t x = 0; x < wa; ++x) out.at(y, x, k) = 0.6 * a.at(y, x, k);
      for (std::size_t x = 0; x < wb; ++x) out.at(y, wa + x, k) = 0.6 * b.at(y, x, k);
    }
  }
  for (const FineMatch& f : m.fine) line(out, f.xa, f.ya, f.xb + static_cast<double>(wa), f.yb, ramp(f.score));
  return out;
}

Tensor uncertainty_heatmap(const FlowMap& flow) {
  const std::size_t gh = flow.grid.dim(0), gw = flow.grid.dim(1);
  std::vector<double> ls(gh * gw);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < ls.size(); ++i) {
    ls[i] = 0.5 * (std::log(flow.grid[4 * i + 2]) + std::log(flow.grid[4 * i + 3]));
    lo = std::min(lo, ls[i]);
    hi = std::max(hi, ls[i]);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  const std::size_t H = flow.image.h, W = flow.image.w;
  Tensor out({H, W, 3});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t cell = std::min(y / flow.stride, gh - 1) * gw + std::min(x / flow.stride, gw - 1);
      const Rgb c = ramp((hi - ls[cell]) / span);
      for (std::size_t k = 0; k < 3; ++k) out.at(y, x, k) = c[k];
    }
  }
  return out;
}

Tensor span_overlay(const Tensor& image_b, const SpanGrid& span, std::size_t stride, std::size_t every) {
  Tensor out = to_rgb(image_b);
  for (double& v : out.storage()) v *= 0.6;
  if (every == 0) every = 1;
  const double s = static_cast<double>(stride), off = (s - 1.0) / 2.0;
  for (std::size_t k = 0; k < span.cells.size(); k += every) {
    const SpanCell& c = span.cells[k];
    const Rgb color = ramp(span.cells.size() > 1 ? static_cast<double>(k) / (span.cells.size() - 1) : 0.5);
    rect(out, (c.cx - c.hx) * s + off, (c.cy - c.hy) * s + off, (c.cx + c.hx) * s + off, (c.cy + c.hy) * s + off, color);
    put(out, std::lround(c.cx * s + off), std::lround(c.cy * s + off), {1.0, 1.0, 1.0});
  }
  return out;
}

}  // namespace aspan
