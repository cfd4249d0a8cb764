#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "neox/kernels.hpp"

namespace neox::kernels {

#if !defined(NEOX_BUILD_AVX2)
namespace avx2 {
// Never called: isa_available(Isa::avx2) is false in this configuration.
double dot(const double* a, const double* b, std::size_t n) { return scalar::dot(a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { scalar::axpy(alpha, x, y, n); }
}  // namespace avx2
#endif

namespace {

using DotFn = double (*)(const double*, const double*, std::size_t);
using AxpyFn = void (*)(double, const double*, double*, std::size_t);

struct Table {
  DotFn dot;
  AxpyFn axpy;
};

constexpr Table kScalar{&scalar::dot, &scalar::axpy};
constexpr Table kAvx2{&avx2::dot, &avx2::axpy};

bool cpu_has_avx2() {
#if defined(NEOX_BUILD_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  if (const char* env = std::getenv("NEOX_ISA")) {
    std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && cpu_has_avx2()) return Isa::avx2;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

const Table& table() { return current().load(std::memory_order_relaxed) == Isa::avx2 ? kAvx2 : kScalar; }

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) { return isa == Isa::scalar || cpu_has_avx2(); }

Isa active_isa() { return current().load(); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("kernel variant not available: " + std::string(isa_name(isa)));
  }
  current().store(isa);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  return table().dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  table().axpy(alpha, x.data(), y.data(), x.size());
}

void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<const double> bias,
            std::span<double> out) {
  if (w.size() != rows * cols || x.size() != cols || out.size() != rows ||
      (!bias.empty() && bias.size() != rows)) {
    throw std::invalid_argument("matvec: shape mismatch");
  }
  const DotFn d = table().dot;
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = d(w.data() + r * cols, x.data(), cols) + (bias.empty() ? 0.0 : bias[r]);
  }
}

}  // namespace neox::kernels
