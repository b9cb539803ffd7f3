#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aspan/feature_map.hpp"
#include "aspan/flow.hpp"
#include "aspan/params.hpp"

namespace aspan {

// One S x S query cell and the rectangle it attends to in the target grid.
struct SpanCell {
  std::size_t row_begin, row_end;  // query rows [begin, end)
  std::size_t col_begin, col_end;
  double cx, cy;  // rectangle centre, target grid units
  double hx, hy;  // half-extents, target grid units
};

// coords holds cells.size() * g * g rows of (x, y) target grid coordinates,
// cell-major, row-major within a cell.
struct SpanGrid {
  std::vector<SpanCell> cells;
  std::size_t samples = 8;  // g
  Extent query;
  Extent target;
  Tensor coords;

  std::size_t tokens_per_cell() const { return samples * samples; }
};

struct SpanParams {
  std::size_t cell_size = 4;  // S
  double n_sigma = 5.0;
  std::size_t samples = 8;  // g
  // When set, every rectangle has this half-extent in pixels instead of n * sigma.
  std::optional<double> fixed_half_px;
};

// flow lives on the query grid (flow extent == query extent); its means are
// pixels of the target image and are converted with the flow stride.
SpanGrid compute_span(const FlowMap& flow, const SpanParams& p, Extent target);

// Every cell spans the whole target; with g equal to the target side the
// samples land on every lattice point.
SpanGrid full_span(Extent query, Extent target, std::size_t cell_size, std::size_t samples);

struct Projection {
  Var query, key, value;  // D x D each

  void visit(const std::string& prefix, const ParamVisitor& f);
};

Projection init_projection(std::size_t dim, Rng& rng);

// Learnable per-level temperatures, stored as logarithms.
struct TemperatureSet {
  Var log_fine, log_medium, log_coarse;

  void visit(const std::string& prefix, const ParamVisitor& f);
};

TemperatureSet init_temperatures(std::size_t dim);

// softmax_rows(tau * Q K^T) V for token sets q (n x D), k and v (m x D);
// tau holds one positive element.
Var attention_kernel(const Var& q, const Var& k, const Var& v, const Var& tau);

// Each query of cell c attends to the g*g tokens bilinearly sampled from the
// key/value maps at that cell's span coordinates. q_map is the query grid
// (H_s x W_s x D); k_map, v_map are target grids.
Var local_attention_kernel(const Var& q_map, const Var& k_map, const Var& v_map, const SpanGrid& span,
                           const Var& tau);

// Message maps aligned with the source grid; Q from source, K and V from target.
Var global_attention(const Var& source, const Var& target, const Projection& proj, const Var& tau);
Var local_cross_attention(const Var& source, const Var& target, const SpanGrid& span, const Projection& proj,
                          const Var& tau);

// Multiply-adds spent inside the attention kernels (sampling, logits and value
// mixing) since the last reset, summed over all threads.
std::uint64_t attention_multiply_adds();
void reset_attention_counter();

}  // namespace aspan
