#pragma once

// Parameter bookkeeping shared by every weights struct: a visitor walks named
// leaves in a fixed order (serialization, optimizer state, replication), and
// the initializers draw from an explicit engine so runs are reproducible.

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "aspan/autograd.hpp"
#include "aspan/ops.hpp"

namespace aspan {

using ParamVisitor = std::function<void(const std::string& name, Var& param)>;

using Rng = std::mt19937_64;

// Uniform in [0, 1) from the top 53 bits; independent of the standard library's
// distribution implementations, so generated data is identical across toolchains.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }
double normal(Rng& rng);

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Var glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Var zeros_param(Shape shape);
Var constant_param(Shape shape, double value);

Dense init_dense(std::size_t din, std::size_t dout, Rng& rng);
std::vector<Dense> init_mlp(std::initializer_list<std::size_t> dims, Rng& rng);
void visit_mlp(std::vector<Dense>& layers, const std::string& prefix, const ParamVisitor& f);

}  // namespace aspan
