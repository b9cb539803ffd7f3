#include <atomic>
#include <cstdlib>
#include <string>

#include "aspan/errors.hpp"
#include "aspan/kernels.hpp"

namespace aspan::kernels {

#ifndef ASPAN_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

namespace {

const KernelTable* initial_table() {
  if (const char* env = std::getenv("ASPAN_SIMD")) {
    const std::string_view name(env);
    if (name == "scalar") return &scalar_table();
    if (name == "avx2" && !cpu_supports(Isa::avx2)) return &scalar_table();
  }
  if (cpu_supports(Isa::avx2)) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(__i386__)
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) {
  if (!cpu_supports(isa)) throw ParameterError("requested SIMD variant is not supported on this CPU");
  current().store(isa == Isa::scalar ? &scalar_table() : avx2_table());
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  throw ParameterError("unknown SIMD variant '" + std::string(name) + "'");
}

}  // namespace aspan::kernels
