#include "aspan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aspan/errors.hpp"
#include "aspan/kernels.hpp"

namespace aspan {
namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank(const Var& x, std::size_t rank, const char* op) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }

Tensor& gbuf(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }

template <class F, class D>
Var unary(const Var& x, F f, D df_from_xy) {
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result(std::move(out), {x}, [df_from_xy](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& g = gbuf(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df_from_xy(xv[i], self.value[i]);
  });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  add_inplace(out, b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  add_inplace(out, b.value(), -1.0);
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) self.parents[1]->accumulate(self.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (wants(self, 0)) {
      Tensor& g = gbuf(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = gbuf(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& x, double c) {
  Tensor out = x.value();
  for (double& v : out.storage()) v *= c;
  return make_result(std::move(out), {x}, [c](Node& self) { self.parents[0]->accumulate(self.grad, c); });
}

Var add_scalar(const Var& x, double c) {
  Tensor out = x.value();
  for (double& v : out.storage()) v += c;
  return make_result(std::move(out), {x}, [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var mul_scalar(const Var& x, const Var& s) {
  if (s.size() != 1) throw DimensionError("mul_scalar: scale must hold one element");
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.storage()) v *= sv;
  return make_result(std::move(out), {x, s}, [](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const double sv = self.parents[1]->value[0];
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad, sv);
    if (wants(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
      gbuf(self, 1)[0] += acc;
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const std::size_t d = bias.size();
  if (x.shape().empty() || x.shape().back() != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const std::size_t rows = out.size() / d;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += bias.value()[j];
  return make_result(std::move(out), {x, bias}, [d](Node& self) {
    if (wants(self, 0)) self.parents[0]->accumulate(self.grad);
    if (wants(self, 1)) {
      Tensor& g = gbuf(self, 1);
      const std::size_t rows = self.grad.size() / d;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[r * d + j];
    }
  });
}

Var exp(const Var& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var log(const Var& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double xv, double) { return 1.0 / xv; });
}

Var sigmoid(const Var& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double xv, double) { return 2.0 * xv; });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result(Tensor::scalar(s), {x}, [](Node& self) {
    Tensor& g = gbuf(self, 0);
    const double gs = self.grad[0];
    for (double& v : g.storage()) v += gs;
  });
}

Var mean(const Var& x) {
  if (x.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  kernels::gemm_nn(m, n, k, a.value().ptr(), b.value().ptr(), out.ptr());
  return make_result(std::move(out), {a, b}, [m, n, k](Node& self) {
    const double* g = self.grad.ptr();
    if (wants(self, 0)) kernels::gemm_nt(m, k, n, g, self.parents[1]->value.ptr(), gbuf(self, 0).ptr());
    if (wants(self, 1)) kernels::gemm_tn(k, n, m, self.parents[0]->value.ptr(), g, gbuf(self, 1).ptr());
  });
}

Var transpose(const Var& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.value()[i * c + j];
  return make_result(std::move(out), {x}, [r, c](Node& self) {
    Tensor& g = gbuf(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Var bmm(const Var& a, const Var& b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  if (b.shape()[0] != batch || b.shape()[1] != k) {
    throw DimensionError("bmm: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  Tensor out({batch, m, n});
  for (std::size_t t = 0; t < batch; ++t)
    kernels::gemm_nn(m, n, k, a.value().ptr() + t * m * k, b.value().ptr() + t * k * n, out.ptr() + t * m * n);
  return make_result(std::move(out), {a, b}, [batch, m, n, k](Node& self) {
    const double* av = self.parents[0]->value.ptr();
    const double* bv = self.parents[1]->value.ptr();
    for (std::size_t t = 0; t < batch; ++t) {
      const double* g = self.grad.ptr() + t * m * n;
      if (wants(self, 0)) kernels::gemm_nt(m, k, n, g, bv + t * k * n, gbuf(self, 0).ptr() + t * m * k);
      if (wants(self, 1)) kernels::gemm_tn(k, n, m, av + t * m * k, g, gbuf(self, 1).ptr() + t * k * n);
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = gbuf(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    Shape pl = p.shape();
    if (pl.empty()) throw DimensionError("concat_last: scalar input");
    widths.push_back(pl.back());
    total += pl.back();
    pl.pop_back();
    if (pl != lead) throw DimensionError("concat_last: leading extents differ");
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor out(out_shape);
  const std::size_t rows = shape_size(lead);
  std::size_t offset = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const double* src = parts[q].value().ptr();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src + r * widths[q], widths[q], out.ptr() + r * total + offset);
    offset += widths[q];
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_result(std::move(out), std::move(parents), [widths, rows, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t q = 0; q < widths.size(); ++q) {
      if (wants(self, q)) {
        Tensor& g = gbuf(self, q);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < widths[q]; ++j) g[r * widths[q] + j] += self.grad[r * total + offset + j];
      }
      offset += widths[q];
    }
  });
}

Var slice_last(const Var& x, std::size_t begin, std::size_t end) {
  if (x.shape().empty() || begin >= end || end > x.shape().back()) {
    throw DimensionError("slice_last: bad range for " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back(), w = end - begin;
  Shape out_shape = x.shape();
  out_shape.back() = w;
  Tensor out(out_shape);
  const std::size_t rows = x.size() / d;
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.value().ptr() + r * d + begin, w, out.ptr() + r * w);
  return make_result(std::move(out), {x}, [d, w, rows, begin](Node& self) {
    Tensor& g = gbuf(self, 0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) g[r * d + begin + j] += self.grad[r * w + j];
  });
}

Var gather(const Var& x, std::span<const std::size_t> indices) {
  Tensor out({indices.size()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= x.size()) throw DimensionError("gather: index out of range");
    out[k] = x.value()[indices[k]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result(std::move(out), {x}, [idx = std::move(idx)](Node& self) {
    Tensor& g = gbuf(self, 0);
    for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += self.grad[k];
  });
}

namespace {

// Slice iteration for a 2-D tensor: `count` slices of `len` elements spaced by
// `step`, slice s starting at s * `outer`.
struct SliceLayout {
  std::size_t count, len, step, outer;
};

SliceLayout layout_for(const Shape& shape, int axis) {
  if (shape.size() != 2) throw DimensionError("softmax expects a 2-D tensor, got " + shape_str(shape));
  const std::size_t r = shape[0], c = shape[1];
  if (axis == 1 || axis == -1) return {r, c, 1, c};
  if (axis == 0 || axis == -2) return {c, r, c, 1};
  throw DimensionError("softmax: axis out of range");
}

Tensor softmax_values(const Tensor& x, const SliceLayout& l, double tau) {
  Tensor out(x.shape());
  for (std::size_t s = 0; s < l.count; ++s) {
    const std::size_t base = s * l.outer;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < l.len; ++i) mx = std::max(mx, tau * x[base + i * l.step]);
    double z = 0.0;
    for (std::size_t i = 0; i < l.len; ++i) {
      const double e = std::exp(tau * x[base + i * l.step] - mx);
      out[base + i * l.step] = e;
      z += e;
    }
    for (std::size_t i = 0; i < l.len; ++i) out[base + i * l.step] /= z;
  }
  return out;
}

// Gradient of softmax(tau * x) wrt the logits tau * x, written into dz.
void softmax_logit_grad(const Tensor& y, const Tensor& gy, const SliceLayout& l, Tensor& dz) {
  for (std::size_t s = 0; s < l.count; ++s) {
    const std::size_t base = s * l.outer;
    double dotp = 0.0;
    for (std::size_t i = 0; i < l.len; ++i) dotp += y[base + i * l.step] * gy[base + i * l.step];
    for (std::size_t i = 0; i < l.len; ++i) {
      const std::size_t at = base + i * l.step;
      dz[at] = y[at] * (gy[at] - dotp);
    }
  }
}

}  // namespace

Var softmax(const Var& x, int axis, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("softmax: temperature must be positive");
  const SliceLayout l = layout_for(x.shape(), axis);
  Tensor out = softmax_values(x.value(), l, temperature);
  return make_result(std::move(out), {x}, [l, temperature](Node& self) {
    Tensor dz(self.value.shape());
    softmax_logit_grad(self.value, self.grad, l, dz);
    self.parents[0]->accumulate(dz, temperature);
  });
}

Var softmax(const Var& x, int axis, const Var& temperature) {
  if (temperature.size() != 1) throw DimensionError("softmax: temperature must hold one element");
  const double tau = temperature.value()[0];
  if (!(tau > 0.0)) throw ParameterError("softmax: temperature must be positive");
  const SliceLayout l = layout_for(x.shape(), axis);
  Tensor out = softmax_values(x.value(), l, tau);
  return make_result(std::move(out), {x, temperature}, [l](Node& self) {
    const double tau = self.parents[1]->value[0];
    const Tensor& xv = self.parents[0]->value;
    Tensor dz(self.value.shape());
    softmax_logit_grad(self.value, self.grad, l, dz);
    if (wants(self, 0)) self.parents[0]->accumulate(dz, tau);
    if (wants(self, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < dz.size(); ++i) acc += dz[i] * xv[i];
      gbuf(self, 1)[0] += acc;
    }
  });
}

Var log_dual_softmax(const Var& c) {
  require_rank(c, 2, "log_dual_softmax");
  const std::size_t n = c.shape()[0], m = c.shape()[1];
  const Tensor& cv = c.value();
  Tensor row_sm = softmax_values(cv, layout_for(c.shape(), 1), 1.0);
  Tensor col_sm = softmax_values(cv, layout_for(c.shape(), 0), 1.0);
  std::vector<double> row_lse(n), col_lse(m);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, cv[i * m + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(cv[i * m + j] - mx);
    row_lse[i] = mx + std::log(z);
  }
  for (std::size_t j = 0; j < m; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, cv[i * m + j]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(cv[i * m + j] - mx);
    col_lse[j] = mx + std::log(z);
  }
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = 2.0 * cv[i * m + j] - row_lse[i] - col_lse[j];
  return make_result(std::move(out), {c},
                     [n, m, row_sm = std::move(row_sm), col_sm = std::move(col_sm)](Node& self) {
                       const Tensor& g = self.grad;
                       std::vector<double> rsum(n, 0.0), csum(m, 0.0);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < m; ++j) {
                           rsum[i] += g[i * m + j];
                           csum[j] += g[i * m + j];
                         }
                       Tensor& dc = gbuf(self, 0);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < m; ++j) {
                           const std::size_t at = i * m + j;
                           dc[at] += 2.0 * g[at] - row_sm[at] * rsum[i] - col_sm[at] * csum[j];
                         }
                     });
}

Var avg_pool(const Var& map, std::size_t stride) {
  require_rank(map, 3, "avg_pool");
  if (stride < 1) throw ParameterError("avg_pool: stride must be >= 1");
  const std::size_t h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
  const std::size_t oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  Tensor out({oh, ow, d});
  const Tensor& in = map.value();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::size_t y1 = std::min(h, (oy + 1) * stride), x1 = std::min(w, (ox + 1) * stride);
      const double inv = 1.0 / static_cast<double>((y1 - oy * stride) * (x1 - ox * stride));
      double* o = out.ptr() + (oy * ow + ox) * d;
      for (std::size_t y = oy * stride; y < y1; ++y)
        for (std::size_t x = ox * stride; x < x1; ++x) kernels::axpy(inv, in.ptr() + (y * w + x) * d, o, d);
    }
  return make_result(std::move(out), {map}, [h, w, d, oh, ow, stride](Node& self) {
    Tensor& g = gbuf(self, 0);
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t y1 = std::min(h, (oy + 1) * stride), x1 = std::min(w, (ox + 1) * stride);
        const double inv = 1.0 / static_cast<double>((y1 - oy * stride) * (x1 - ox * stride));
        const double* go = self.grad.ptr() + (oy * ow + ox) * d;
        for (std::size_t y = oy * stride; y < y1; ++y)
          for (std::size_t x = ox * stride; x < x1; ++x) kernels::axpy(inv, go, g.ptr() + (y * w + x) * d, d);
      }
  });
}

namespace {

struct Lerp {
  std::size_t i0, i1;
  double f;  // weight of i1
};

std::vector<Lerp> align_corner_lerps(std::size_t in, std::size_t out) {
  std::vector<Lerp> l(out);
  const double ratio = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  for (std::size_t o = 0; o < out; ++o) {
    const double src = static_cast<double>(o) * ratio;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    l[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return l;
}

}  // namespace

Var resize_bilinear(const Var& map, std::size_t out_h, std::size_t out_w) {
  require_rank(map, 3, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw ParameterError("resize_bilinear: output extent must be >= 1");
  const std::size_t h = map.shape()[0], w = map.shape()[1], d = map.shape()[2];
  if (out_h == h && out_w == w) {
    return reshape(map, map.shape());
  }
  auto ly = align_corner_lerps(h, out_h);
  auto lx = align_corner_lerps(w, out_w);
  Tensor out({out_h, out_w, d});
  const double* in = map.value().ptr();
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const Lerp& a = ly[oy];
      const Lerp& b = lx[ox];
      double* o = out.ptr() + (oy * out_w + ox) * d;
      kernels::axpy((1 - a.f) * (1 - b.f), in + (a.i0 * w + b.i0) * d, o, d);
      kernels::axpy((1 - a.f) * b.f, in + (a.i0 * w + b.i1) * d, o, d);
      kernels::axpy(a.f * (1 - b.f), in + (a.i1 * w + b.i0) * d, o, d);
      kernels::axpy(a.f * b.f, in + (a.i1 * w + b.i1) * d, o, d);
    }
  return make_result(std::move(out), {map}, [w, d, out_h, out_w, ly, lx](Node& self) {
    double* g = gbuf(self, 0).ptr();
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Lerp& a = ly[oy];
        const Lerp& b = lx[ox];
        const double* go = self.grad.ptr() + (oy * out_w + ox) * d;
        kernels::axpy((1 - a.f) * (1 - b.f), go, g + (a.i0 * w + b.i0) * d, d);
        kernels::axpy((1 - a.f) * b.f, go, g + (a.i0 * w + b.i1) * d, d);
        kernels::axpy(a.f * (1 - b.f), go, g + (a.i1 * w + b.i0) * d, d);
        kernels::axpy(a.f * b.f, go, g + (a.i1 * w + b.i1) * d, d);
      }
  });
}

namespace {

struct Tap {
  std::size_t x0, x1, y0, y1;
  double fx, fy;
  bool x_free, y_free;  // false when clamping pinned the axis
};

Tap make_tap(double x, double y, std::size_t h, std::size_t w) {
  Tap t{};
  const double xmax = static_cast<double>(w - 1), ymax = static_cast<double>(h - 1);
  t.x_free = x > 0.0 && x < xmax;
  t.y_free = y > 0.0 && y < ymax;
  const double xc = std::clamp(x, 0.0, xmax), yc = std::clamp(y, 0.0, ymax);
  t.x0 = static_cast<std::size_t>(std::floor(xc));
  t.y0 = static_cast<std::size_t>(std::floor(yc));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = xc - static_cast<double>(t.x0);
  t.fy = yc - static_cast<double>(t.y0);
  return t;
}

}  // namespace

Var bilinear_sample(const Var& map, const Var& coords) {
  require_rank(map, 3, "bilinear_sample");
  require_rank(coords, 2, "bilinear_sample");
  if (coords.shape()[1] != 2) throw DimensionError("bilinear_sample: coords must be n x 2");
  const std::size_t h = map.shape()[0], w = map.shape()[1], d = map.shape()[2], n = coords.shape()[0];
  Tensor out({n, d});
  const double* m = map.value().ptr();
  std::vector<Tap> taps(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tap t = make_tap(coords.value()[2 * i], coords.value()[2 * i + 1], h, w);
    taps[i] = t;
    double* o = out.ptr() + i * d;
    kernels::axpy((1 - t.fy) * (1 - t.fx), m + (t.y0 * w + t.x0) * d, o, d);
    kernels::axpy((1 - t.fy) * t.fx, m + (t.y0 * w + t.x1) * d, o, d);
    kernels::axpy(t.fy * (1 - t.fx), m + (t.y1 * w + t.x0) * d, o, d);
    kernels::axpy(t.fy * t.fx, m + (t.y1 * w + t.x1) * d, o, d);
  }
  return make_result(std::move(out), {map, coords}, [w, d, n, taps = std::move(taps)](Node& self) {
    const double* m = self.parents[0]->value.ptr();
    for (std::size_t i = 0; i < n; ++i) {
      const Tap& t = taps[i];
      const double* go = self.grad.ptr() + i * d;
      if (wants(self, 0)) {
        double* g = gbuf(self, 0).ptr();
        kernels::axpy((1 - t.fy) * (1 - t.fx), go, g + (t.y0 * w + t.x0) * d, d);
        kernels::axpy((1 - t.fy) * t.fx, go, g + (t.y0 * w + t.x1) * d, d);
        kernels::axpy(t.fy * (1 - t.fx), go, g + (t.y1 * w + t.x0) * d, d);
        kernels::axpy(t.fy * t.fx, go, g + (t.y1 * w + t.x1) * d, d);
      }
      if (wants(self, 1)) {
        const double* v00 = m + (t.y0 * w + t.x0) * d;
        const double* v01 = m + (t.y0 * w + t.x1) * d;
        const double* v10 = m + (t.y1 * w + t.x0) * d;
        const double* v11 = m + (t.y1 * w + t.x1) * d;
        double gx = 0.0, gy = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          gx += go[c] * ((1 - t.fy) * (v01[c] - v00[c]) + t.fy * (v11[c] - v10[c]));
          gy += go[c] * ((1 - t.fx) * (v10[c] - v00[c]) + t.fx * (v11[c] - v01[c]));
        }
        Tensor& gc = gbuf(self, 1);
        if (t.x_free) gc[2 * i] += gx;
        if (t.y_free) gc[2 * i + 1] += gy;
      }
    }
  });
}

namespace {

// Patch matrix for a zero-padded 3x3 window: row p = (y, x), column (ky*3+kx)*din + c.
Tensor im2col3x3(const Tensor& in, std::size_t h, std::size_t w, std::size_t din) {
  Tensor cols({h * w, 9 * din});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double* row = cols.ptr() + (y * w + x) * 9 * din;
      for (int ky = 0; ky < 3; ++ky) {
        const long sy = static_cast<long>(y) + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const long sx = static_cast<long>(x) + kx - 1;
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
          std::copy_n(in.ptr() + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * din, din,
                      row + static_cast<std::size_t>(ky * 3 + kx) * din);
        }
      }
    }
  return cols;
}

void col2im3x3(const Tensor& cols, std::size_t h, std::size_t w, std::size_t din, Tensor& g) {
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double* row = cols.ptr() + (y * w + x) * 9 * din;
      for (int ky = 0; ky < 3; ++ky) {
        const long sy = static_cast<long>(y) + ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const long sx = static_cast<long>(x) + kx - 1;
          if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
          double* dst = g.ptr() + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * din;
          const double* src = row + static_cast<std::size_t>(ky * 3 + kx) * din;
          for (std::size_t c = 0; c < din; ++c) dst[c] += src[c];
        }
      }
    }
}

}  // namespace

Var conv3x3(const Var& map, const Var& kernel, const Var& bias) {
  require_rank(map, 3, "conv3x3");
  require_rank(kernel, 4, "conv3x3");
  const std::size_t h = map.shape()[0], w = map.shape()[1], din = map.shape()[2];
  const Shape& ks = kernel.shape();
  if (ks[0] != 3 || ks[1] != 3 || ks[2] != din) {
    throw DimensionError("conv3x3: kernel " + shape_str(ks) + " does not fit input " + shape_str(map.shape()));
  }
  const std::size_t dout = ks[3];
  if (bias.size() != dout) throw DimensionError("conv3x3: bias length differs from output channels");
  Tensor cols = im2col3x3(map.value(), h, w, din);
  Tensor out({h, w, dout});
  for (std::size_t p = 0; p < h * w; ++p) std::copy_n(bias.value().ptr(), dout, out.ptr() + p * dout);
  kernels::gemm_nn(h * w, dout, 9 * din, cols.ptr(), kernel.value().ptr(), out.ptr());
  return make_result(std::move(out), {map, kernel, bias}, [h, w, din, dout, cols = std::move(cols)](Node& self) {
    const std::size_t p = h * w;
    const double* g = self.grad.ptr();
    if (wants(self, 1)) kernels::gemm_tn(9 * din, dout, p, cols.ptr(), g, gbuf(self, 1).ptr());
    if (wants(self, 2)) {
      Tensor& gb = gbuf(self, 2);
      for (std::size_t q = 0; q < p; ++q)
        for (std::size_t c = 0; c < dout; ++c) gb[c] += g[q * dout + c];
    }
    if (wants(self, 0)) {
      Tensor dcols({p, 9 * din});
      kernels::gemm_nt(p, 9 * din, dout, g, self.parents[1]->value.ptr(), dcols.ptr());
      col2im3x3(dcols, h, w, din, gbuf(self, 0));
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  if (x.shape().empty()) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.size() != d || bias.size() != d) throw DimensionError("layer_norm: affine length differs from channels");
  const std::size_t rows = x.size() / d;
  Tensor xhat(x.shape());
  std::vector<double> inv_std(rows);
  Tensor out(x.shape());
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.ptr() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double nh = (xr[j] - mu) * inv;
      xhat[r * d + j] = nh;
      out[r * d + j] = gain.value()[j] * nh + bias.value()[j];
    }
  }
  return make_result(std::move(out), {x, gain, bias},
                     [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       const Tensor& g = self.grad;
                       const Tensor& gain = self.parents[1]->value;
                       if (wants(self, 1)) {
                         Tensor& gg = gbuf(self, 1);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                       }
                       if (wants(self, 2)) {
                         Tensor& gb = gbuf(self, 2);
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                       }
                       if (wants(self, 0)) {
                         Tensor& gx = gbuf(self, 0);
                         const double inv_d = 1.0 / static_cast<double>(d);
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0.0, m2 = 0.0;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * gain[j];
                             m1 += dh;
                             m2 += dh * xhat[r * d + j];
                           }
                           m1 *= inv_d;
                           m2 *= inv_d;
                           for (std::size_t j = 0; j < d; ++j) {
                             const double dh = g[r * d + j] * gain[j];
                             gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                           }
                         }
                       }
                     });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

Var mlp_forward(const Var& x, std::span<const Dense> layers) {
  if (layers.empty()) throw DimensionError("mlp_forward: no layers");
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = linear(h, layers[i].weight, layers[i].bias);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

}  // namespace aspan
