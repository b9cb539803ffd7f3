#include "aspan/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "json.hpp"

#include "aspan/errors.hpp"
#include "aspan/ops.hpp"

namespace aspan {

Tensor ScoreMatrix::scores() const {
  Tensor s = log_scores.value();
  for (double& v : s.storage()) v = std::exp(v);
  return s;
}

ScoreMatrix score_matrix(const Var& fa, const Var& fb, const Var& tau) {
  if (fa.shape().size() != 2 || fb.shape().size() != 2 || fa.shape()[1] != fb.shape()[1]) {
    throw DimensionError("score_matrix: token sets " + shape_str(fa.shape()) + " vs " + shape_str(fb.shape()));
  }
  if (tau.size() != 1 || !(tau.value()[0] > 0.0)) throw ParameterError("score_matrix: temperature must be positive");
  const double norm = 1.0 / static_cast<double>(fa.shape()[1]);
  Var c = mul_scalar(scale(matmul(fa, transpose(fb)), norm), tau);
  return {c, log_dual_softmax(c)};
}

std::vector<CoarseMatch> mnn_filter(const Tensor& scores, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("mnn_filter: theta must lie in (0, 1)");
  if (scores.rank() != 2) throw DimensionError("mnn_filter: scores must be 2-D");
  const std::size_t n = scores.dim(0), m = scores.dim(1);
  std::vector<CoarseMatch> out;
  if (n == 0 || m == 0) return out;
  std::vector<std::size_t> col_best(m, 0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 1; i < n; ++i) {
      if (scores.at(i, j) > scores.at(col_best[j], j)) col_best[j] = i;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (scores.at(i, j) > scores.at(i, best)) best = j;
    }
    if (col_best[best] == i && scores.at(i, best) >= theta) out.push_back({i, best, scores.at(i, best)});
  }
  return out;
}

Refinement refine_matches(const std::vector<std::pair<std::size_t, std::size_t>>& pairs, const FeatureMap& fine_a,
                          const FeatureMap& fine_b, Extent coarse_grid, std::size_t coarse_stride,
                          std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ParameterError("refine_matches: window must be odd");
  if (fine_a.channels() != fine_b.channels()) throw DimensionError("refine_matches: channel mismatch");
  const std::size_t n = pairs.size(), d = fine_a.channels(), ww = window * window;
  const std::size_t fs = fine_b.stride;
  const int r = static_cast<int>(window / 2);
  Refinement out{Var(), Tensor({n, 2}), Tensor({n})};
  if (n == 0) {
    out.coords_b = Var::constant(Tensor({0, 2}));
    return out;
  }
  // Every window position becomes one sample coordinate on the B map; the A
  // centre vector is sampled likewise and correlated with its window.
  Tensor a_coords({n, 2}), b_coords({n * ww, 2}), b_pixels({n * ww, 2});
  const double hb = static_cast<double>(fine_b.height() - 1), wb = static_cast<double>(fine_b.width() - 1);
  for (std::size_t k = 0; k < n; ++k) {
    const auto [ia, jb] = pairs[k];
    const double xa = grid_to_pixel(static_cast<double>(ia % coarse_grid.w), coarse_stride);
    const double ya = grid_to_pixel(static_cast<double>(ia / coarse_grid.w), coarse_stride);
    out.coords_a[2 * k] = xa;
    out.coords_a[2 * k + 1] = ya;
    a_coords[2 * k] = pixel_to_grid(xa, fine_a.stride);
    a_coords[2 * k + 1] = pixel_to_grid(ya, fine_a.stride);
    const double cx = pixel_to_grid(grid_to_pixel(static_cast<double>(jb % coarse_grid.w), coarse_stride), fs);
    const double cy = pixel_to_grid(grid_to_pixel(static_cast<double>(jb / coarse_grid.w), coarse_stride), fs);
    std::size_t s = k * ww;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx, ++s) {
        const double x = std::clamp(cx + dx, 0.0, wb), y = std::clamp(cy + dy, 0.0, hb);
        b_coords[2 * s] = x;
        b_coords[2 * s + 1] = y;
        b_pixels[2 * s] = grid_to_pixel(x, fs);
        b_pixels[2 * s + 1] = grid_to_pixel(y, fs);
      }
    }
  }
  Var fa = bilinear_sample(fine_a.grid, Var::constant(a_coords));                      // n x d
  Var fb = reshape(bilinear_sample(fine_b.grid, Var::constant(b_coords)), {n, ww, d});  // n x ww x d
  Var logits = reshape(bmm(fb, reshape(fa, {n, d, 1})), {n, ww});
  Var heat = softmax(logits, 1, 1.0 / std::sqrt(static_cast<double>(d)));
  Var coords = reshape(bmm(reshape(heat, {n, 1, ww}), Var::constant(b_pixels.reshaped({n, ww, 2}))), {n, 2});
  const Tensor& h = heat.value();
  for (std::size_t k = 0; k < n; ++k) {
    double ex = 0, ey = 0, ex2 = 0;
    for (std::size_t s = 0; s < ww; ++s) {
      const double p = h[k * ww + s], x = b_pixels[2 * (k * ww + s)], y = b_pixels[2 * (k * ww + s) + 1];
      ex += p * x;
      ey += p * y;
      ex2 += p * (x * x + y * y);
    }
    out.variance[k] = std::max(ex2 - ex * ex - ey * ey, 0.0);
  }
  out.coords_b = coords;
  return out;
}

LossTerm coarse_loss(const ScoreMatrix& s, const std::vector<std::pair<std::size_t, std::size_t>>& gt) {
  if (gt.empty()) return {Var::constant(Tensor::scalar(0.0)), true};
  std::vector<std::size_t> idx;
  idx.reserve(gt.size());
  const std::size_t n = s.rows(), m = s.cols();
  for (const auto& [i, j] : gt) {
    if (i >= n || j >= m) throw DimensionError("coarse_loss: ground-truth cell out of range");
    idx.push_back(i * m + j);
  }
  return {scale(mean(gather(s.log_scores, idx)), -1.0), false};
}

LossTerm fine_loss(const Var& refined, const Tensor& gt, const Tensor& variance) {
  if (refined.shape() != gt.shape()) {
    throw DimensionError("fine_loss: refined " + shape_str(refined.shape()) + " vs gt " + shape_str(gt.shape()));
  }
  const std::size_t n = gt.size() / 2;
  if (variance.size() != n) throw DimensionError("fine_loss: variance length mismatch");
  if (n == 0) return {Var::constant(Tensor::scalar(0.0)), true};
  Tensor w(gt.shape());
  for (std::size_t k = 0; k < n; ++k) {
    const double inv = 1.0 / (std::max(variance[k], kVarianceFloor) * static_cast<double>(n));
    w[2 * k] = w[2 * k + 1] = inv;
  }
  return {sum(mul(square(sub(refined, Var::constant(gt))), Var::constant(std::move(w)))), false};
}

Var total_loss(const Var& coarse, const Var& fine, const Var& flow, double alpha) {
  if (!(alpha >= 0.0)) throw ParameterError("total_loss: alpha must be non-negative");
  Var l = add(coarse, fine);
  return alpha == 0.0 ? l : add(l, scale(flow, alpha));
}

void write_matches_jsonl(std::ostream& os, const MatchSet& m) {
  for (std::size_t k = 0; k < m.fine.size(); ++k) {
    const FineMatch& f = m.fine[k];
    nlohmann::json j{{"xa", f.xa}, {"ya", f.ya}, {"xb", f.xb}, {"yb", f.yb}, {"score", f.score}};
    if (k < m.coarse.size()) {
      j["i"] = m.coarse[k].i;
      j["j"] = m.coarse[k].j;
    }
    os << j.dump() << '\n';
  }
}

MatchSet read_matches_jsonl(std::istream& is) {
  MatchSet m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      FineMatch f{j.at("xa").get<double>(), j.at("ya").get<double>(), j.at("xb").get<double>(),
                  j.at("yb").get<double>(), j.at("score").get<double>()};
      m.fine.push_back(f);
      if (j.contains("i")) m.coarse.push_back({j.at("i").get<std::size_t>(), j.at("j").get<std::size_t>(), f.score});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("match line: ") + e.what());
    }
  }
  return m;
}

}  // namespace aspan
