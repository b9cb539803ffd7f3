#include "aspan/span_attention.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "aspan/errors.hpp"
#include "aspan/kernels.hpp"
#include "aspan/ops.hpp"

namespace aspan {
namespace {

std::atomic<std::uint64_t> g_multiply_adds{0};

void count(std::uint64_t n) { g_multiply_adds.fetch_add(n, std::memory_order_relaxed); }

double positive_temperature(const Var& tau, const char* op) {
  if (tau.size() != 1) throw DimensionError(std::string(op) + ": temperature must hold one element");
  const double t = tau.value()[0];
  if (!(t > 0.0)) throw ParameterError(std::string(op) + ": temperature must be positive");
  return t;
}

// Scratch for one softmax(tau Q K^T) V evaluation on contiguous token blocks.
struct AttentionBlock {
  std::vector<double> logits;  // n x m
  std::vector<double> probs;   // n x m
};

void attend_forward(std::size_t n, std::size_t m, std::size_t d, const double* q, const double* k, const double* v,
                    double tau, AttentionBlock& blk, double* out) {
  blk.logits.assign(n * m, 0.0);
  blk.probs.resize(n * m);
  kernels::gemm_nt(n, m, d, q, k, blk.logits.data());
  for (std::size_t i = 0; i < n; ++i) {
    const double* l = blk.logits.data() + i * m;
    double* p = blk.probs.data() + i * m;
    const double mx = *std::max_element(l, l + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      p[j] = std::exp(tau * (l[j] - mx));
      z += p[j];
    }
    for (std::size_t j = 0; j < m; ++j) p[j] /= z;
  }
  kernels::gemm_nn(n, d, m, blk.probs.data(), v, out);
}

// Accumulates dq, dk, dv (any may be null) and returns d tau.
double attend_backward(std::size_t n, std::size_t m, std::size_t d, const double* q, const double* k,
                       const double* v, double tau, const AttentionBlock& blk, const double* dout, double* dq,
                       double* dk, double* dv) {
  if (dv) kernels::gemm_tn(m, d, n, blk.probs.data(), dout, dv);
  std::vector<double> dz(n * m, 0.0);
  kernels::gemm_nt(n, m, d, dout, v, dz.data());
  double dtau = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = blk.probs.data() + i * m;
    const double* l = blk.logits.data() + i * m;
    double* g = dz.data() + i * m;
    const double inner = kernels::dot(p, g, m);
    for (std::size_t j = 0; j < m; ++j) {
      g[j] = p[j] * (g[j] - inner);
      dtau += g[j] * l[j];
      g[j] *= tau;
    }
  }
  if (dq) kernels::gemm_nn(n, d, m, dz.data(), k, dq);
  if (dk) kernels::gemm_tn(m, d, n, dz.data(), q, dk);
  return dtau;
}

struct Tap {
  std::size_t i00, i01, i10, i11;
  double w00, w01, w10, w11;
};

Tap make_tap(double x, double y, std::size_t h, std::size_t w) {
  const double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const std::size_t x0 = static_cast<std::size_t>(std::floor(xc)), y0 = static_cast<std::size_t>(std::floor(yc));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = xc - static_cast<double>(x0), fy = yc - static_cast<double>(y0);
  return {y0 * w + x0,          y0 * w + x1,   y1 * w + x0,          y1 * w + x1,
          (1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
}

void gather_taps(const double* map, std::size_t d, const std::vector<Tap>& taps, double* out) {
  std::fill(out, out + taps.size() * d, 0.0);
  for (std::size_t s = 0; s < taps.size(); ++s) {
    const Tap& t = taps[s];
    double* o = out + s * d;
    kernels::axpy(t.w00, map + t.i00 * d, o, d);
    kernels::axpy(t.w01, map + t.i01 * d, o, d);
    kernels::axpy(t.w10, map + t.i10 * d, o, d);
    kernels::axpy(t.w11, map + t.i11 * d, o, d);
  }
}

void scatter_taps(const double* g, std::size_t d, const std::vector<Tap>& taps, double* map_grad) {
  for (std::size_t s = 0; s < taps.size(); ++s) {
    const Tap& t = taps[s];
    const double* gs = g + s * d;
    kernels::axpy(t.w00, gs, map_grad + t.i00 * d, d);
    kernels::axpy(t.w01, gs, map_grad + t.i01 * d, d);
    kernels::axpy(t.w10, gs, map_grad + t.i10 * d, d);
    kernels::axpy(t.w11, gs, map_grad + t.i11 * d, d);
  }
}

std::vector<std::size_t> cell_queries(const SpanCell& c, std::size_t width) {
  std::vector<std::size_t> idx;
  for (std::size_t r = c.row_begin; r < c.row_end; ++r) {
    for (std::size_t col = c.col_begin; col < c.col_end; ++col) idx.push_back(r * width + col);
  }
  return idx;
}

void fill_samples(SpanGrid& grid) {
  const std::size_t g = grid.samples, per = g * g;
  grid.coords = Tensor({grid.cells.size() * per, 2});
  for (std::size_t c = 0; c < grid.cells.size(); ++c) {
    const SpanCell& cell = grid.cells[c];
    for (std::size_t a = 0; a < g; ++a) {
      for (std::size_t b = 0; b < g; ++b) {
        const double ty = g > 1 ? static_cast<double>(a) / static_cast<double>(g - 1) : 0.5;
        const double tx = g > 1 ? static_cast<double>(b) / static_cast<double>(g - 1) : 0.5;
        double* p = grid.coords.ptr() + 2 * (c * per + a * g + b);
        p[0] = cell.cx - cell.hx + 2.0 * cell.hx * tx;
        p[1] = cell.cy - cell.hy + 2.0 * cell.hy * ty;
      }
    }
  }
}

std::vector<SpanCell> partition(Extent query, std::size_t s) {
  std::vector<SpanCell> cells;
  for (std::size_t r = 0; r < query.h; r += s) {
    for (std::size_t c = 0; c < query.w; c += s) {
      cells.push_back({r, std::min(r + s, query.h), c, std::min(c + s, query.w), 0, 0, 0, 0});
    }
  }
  return cells;
}

// Clamps a half-extent to [h_min, full] and the centre so the rectangle stays
// inside [0, extent - 1].
void clamp_axis(double& centre, double& half, double h_min, std::size_t extent) {
  const double full = (static_cast<double>(extent) - 1.0) / 2.0;
  half = std::clamp(half, std::min(h_min, full), full);
  centre = std::clamp(centre, half, static_cast<double>(extent) - 1.0 - half);
}

}  // namespace

SpanGrid compute_span(const FlowMap& flow, const SpanParams& p, Extent target) {
  if (p.cell_size == 0 || p.samples == 0) throw ParameterError("compute_span: cell size and sample count must be positive");
  if (target.h == 0 || target.w == 0) throw ParameterError("compute_span: empty target grid");
  if (flow.stride == 0) throw ParameterError("compute_span: flow stride must be positive");
  const Extent query{flow.height(), flow.width()};
  SpanGrid grid{partition(query, p.cell_size), p.samples, query, target, Tensor()};
  const double h_min = (static_cast<double>(p.samples) - 1.0) / 2.0;
  const double stride = static_cast<double>(flow.stride);
  for (SpanCell& c : grid.cells) {
    double ux = 0, uy = 0, sx = 0, sy = 0;
    for (std::size_t r = c.row_begin; r < c.row_end; ++r) {
      for (std::size_t col = c.col_begin; col < c.col_end; ++col) {
        const double* f = flow.grid.ptr() + 4 * (r * query.w + col);
        ux += f[0];
        uy += f[1];
        sx += f[2];
        sy += f[3];
      }
    }
    const double n = static_cast<double>((c.row_end - c.row_begin) * (c.col_end - c.col_begin));
    c.cx = pixel_to_grid(ux / n, flow.stride);
    c.cy = pixel_to_grid(uy / n, flow.stride);
    if (p.fixed_half_px) {
      c.hx = c.hy = *p.fixed_half_px / stride;
    } else {
      c.hx = p.n_sigma * (sx / n) / stride;
      c.hy = p.n_sigma * (sy / n) / stride;
    }
    clamp_axis(c.cx, c.hx, h_min, target.w);
    clamp_axis(c.cy, c.hy, h_min, target.h);
  }
  fill_samples(grid);
  return grid;
}

SpanGrid full_span(Extent query, Extent target, std::size_t cell_size, std::size_t samples) {
  if (cell_size == 0 || samples == 0) throw ParameterError("full_span: cell size and sample count must be positive");
  SpanGrid grid{partition(query, cell_size), samples, query, target, Tensor()};
  for (SpanCell& c : grid.cells) {
    c.hx = (static_cast<double>(target.w) - 1.0) / 2.0;
    c.hy = (static_cast<double>(target.h) - 1.0) / 2.0;
    c.cx = c.hx;
    c.cy = c.hy;
  }
  fill_samples(grid);
  return grid;
}

void Projection::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".query", query);
  f(prefix + ".key", key);
  f(prefix + ".value", value);
}

Projection init_projection(std::size_t dim, Rng& rng) {
  Projection p;
  p.query = glorot({dim, dim}, dim, dim, rng);
  p.key = glorot({dim, dim}, dim, dim, rng);
  p.value = glorot({dim, dim}, dim, dim, rng);
  return p;
}

void TemperatureSet::visit(const std::string& prefix, const ParamVisitor& f) {
  f(prefix + ".log_fine", log_fine);
  f(prefix + ".log_medium", log_medium);
  f(prefix + ".log_coarse", log_coarse);
}

TemperatureSet init_temperatures(std::size_t dim) {
  const double v = -0.5 * std::log(static_cast<double>(dim));
  return {constant_param({1}, v), constant_param({1}, v), constant_param({1}, v)};
}

Var attention_kernel(const Var& q, const Var& k, const Var& v, const Var& tau) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2) {
    throw DimensionError("attention_kernel: token sets must be 2-D");
  }
  const std::size_t n = q.shape()[0], m = k.shape()[0], d = q.shape()[1];
  if (k.shape()[1] != d || v.shape() != k.shape() || m == 0) {
    throw DimensionError("attention_kernel: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                         shape_str(v.shape()));
  }
  const double t = positive_temperature(tau, "attention_kernel");
  Tensor out({n, d});
  auto blk = std::make_shared<AttentionBlock>();
  attend_forward(n, m, d, q.value().ptr(), k.value().ptr(), v.value().ptr(), t, *blk, out.ptr());
  count(2 * static_cast<std::uint64_t>(n) * m * d);
  return make_result(std::move(out), {q, k, v, tau}, [n, m, d, t, blk](Node& self) {
    auto grad_of = [&](std::size_t i) { return self.parents[i]->requires_grad ? self.parents[i]->grad_buffer().ptr() : nullptr; };
    const double dtau = attend_backward(n, m, d, self.parents[0]->value.ptr(), self.parents[1]->value.ptr(),
                                        self.parents[2]->value.ptr(), t, *blk, self.grad.ptr(), grad_of(0),
                                        grad_of(1), grad_of(2));
    if (self.parents[3]->requires_grad) self.parents[3]->grad_buffer()[0] += dtau;
  });
}

Var local_attention_kernel(const Var& q_map, const Var& k_map, const Var& v_map, const SpanGrid& span,
                           const Var& tau) {
  if (q_map.shape().size() != 3 || k_map.shape().size() != 3 || v_map.shape() != k_map.shape()) {
    throw DimensionError("local_attention_kernel: maps must be H x W x D with matching key/value shapes");
  }
  const std::size_t hq = q_map.shape()[0], wq = q_map.shape()[1], d = q_map.shape()[2];
  const std::size_t ht = k_map.shape()[0], wt = k_map.shape()[1];
  if (k_map.shape()[2] != d) throw DimensionError("local_attention_kernel: channel mismatch");
  if (span.query.h != hq || span.query.w != wq || span.target.h != ht || span.target.w != wt) {
    throw DimensionError("local_attention_kernel: span grid was built for different extents");
  }
  const double t = positive_temperature(tau, "local_attention_kernel");
  const std::size_t m = span.tokens_per_cell();

  struct CellState {
    std::vector<std::size_t> queries;
    std::vector<Tap> taps;
    AttentionBlock blk;
  };
  auto states = std::make_shared<std::vector<CellState>>(span.cells.size());
  Tensor out({hq, wq, d});
  std::vector<double> qc, ks(m * d), vs(m * d), oc;
  std::uint64_t macs = 0;
  for (std::size_t c = 0; c < span.cells.size(); ++c) {
    CellState& st = (*states)[c];
    st.queries = cell_queries(span.cells[c], wq);
    const std::size_t n = st.queries.size();
    st.taps.resize(m);
    for (std::size_t s = 0; s < m; ++s) {
      const double* p = span.coords.ptr() + 2 * (c * m + s);
      st.taps[s] = make_tap(p[0], p[1], ht, wt);
    }
    gather_taps(k_map.value().ptr(), d, st.taps, ks.data());
    gather_taps(v_map.value().ptr(), d, st.taps, vs.data());
    qc.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(q_map.value().ptr() + st.queries[i] * d, d, qc.data() + i * d);
    }
    oc.assign(n * d, 0.0);
    attend_forward(n, m, d, qc.data(), ks.data(), vs.data(), t, st.blk, oc.data());
    for (std::size_t i = 0; i < n; ++i) std::copy_n(oc.data() + i * d, d, out.ptr() + st.queries[i] * d);
    macs += 8 * static_cast<std::uint64_t>(m) * d + 2 * static_cast<std::uint64_t>(n) * m * d;
  }
  count(macs);

  return make_result(std::move(out), {q_map, k_map, v_map, tau}, [states, m, d, t](Node& self) {
    const bool want_q = self.parents[0]->requires_grad;
    const bool want_k = self.parents[1]->requires_grad;
    const bool want_v = self.parents[2]->requires_grad;
    const double* qv = self.parents[0]->value.ptr();
    std::vector<double> qc, ks(m * d), vs(m * d), go, dq, dk(m * d), dv(m * d);
    double dtau = 0.0;
    for (CellState& st : *states) {
      const std::size_t n = st.queries.size();
      gather_taps(self.parents[1]->value.ptr(), d, st.taps, ks.data());
      gather_taps(self.parents[2]->value.ptr(), d, st.taps, vs.data());
      qc.resize(n * d);
      go.resize(n * d);
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(qv + st.queries[i] * d, d, qc.data() + i * d);
        std::copy_n(self.grad.ptr() + st.queries[i] * d, d, go.data() + i * d);
      }
      dq.assign(n * d, 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      dtau += attend_backward(n, m, d, qc.data(), ks.data(), vs.data(), t, st.blk, go.data(),
                              want_q ? dq.data() : nullptr, want_k ? dk.data() : nullptr,
                              want_v ? dv.data() : nullptr);
      if (want_q) {
        double* g = self.parents[0]->grad_buffer().ptr();
        for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, dq.data() + i * d, g + st.queries[i] * d, d);
      }
      if (want_k) scatter_taps(dk.data(), d, st.taps, self.parents[1]->grad_buffer().ptr());
      if (want_v) scatter_taps(dv.data(), d, st.taps, self.parents[2]->grad_buffer().ptr());
    }
    if (self.parents[3]->requires_grad) self.parents[3]->grad_buffer()[0] += dtau;
  });
}

namespace {

Var project(const Var& map, const Var& w) {
  const std::size_t h = map.shape()[0], wd = map.shape()[1];
  return reshape(matmul(reshape(map, {h * wd, map.shape()[2]}), w), {h, wd, w.shape()[1]});
}

void require_map(const Var& m, const Projection& p, const char* op) {
  if (m.shape().size() != 3) throw DimensionError(std::string(op) + ": expected an H x W x D map");
  if (m.shape()[2] != p.query.shape()[0]) {
    throw DimensionError(std::string(op) + ": map has " + std::to_string(m.shape()[2]) +
                         " channels, projection expects " + std::to_string(p.query.shape()[0]));
  }
}

}  // namespace

Var global_attention(const Var& source, const Var& target, const Projection& proj, const Var& tau) {
  require_map(source, proj, "global_attention");
  require_map(target, proj, "global_attention");
  const std::size_t hs = source.shape()[0], ws = source.shape()[1], d = source.shape()[2];
  const std::size_t nt = target.shape()[0] * target.shape()[1];
  Var q = matmul(reshape(source, {hs * ws, d}), proj.query);
  Var tt = reshape(target, {nt, d});
  Var out = attention_kernel(q, matmul(tt, proj.key), matmul(tt, proj.value), tau);
  return reshape(out, {hs, ws, proj.value.shape()[1]});
}

Var local_cross_attention(const Var& source, const Var& target, const SpanGrid& span, const Projection& proj,
                          const Var& tau) {
  require_map(source, proj, "local_cross_attention");
  require_map(target, proj, "local_cross_attention");
  return local_attention_kernel(project(source, proj.query), project(target, proj.key),
                                project(target, proj.value), span, tau);
}

std::uint64_t attention_multiply_adds() { return g_multiply_adds.load(std::memory_order_relaxed); }

void reset_attention_counter() { g_multiply_adds.store(0, std::memory_order_relaxed); }

}  // namespace aspan
