#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Dense double-precision inner loops used by the model. Each kernel has a
// scalar reference implementation and, on x86-64, an AVX2+FMA variant; the
// variant is chosen once at startup from CPUID and can be overridden for
// testing or via NEOX_ISA=scalar|avx2.
namespace neox::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

// True when the variant was compiled in and the running CPU supports it.
bool isa_available(Isa isa);

Isa active_isa();

// Throws std::invalid_argument if the requested variant is unavailable.
void set_active_isa(Isa isa);

// sum_i a[i] * b[i]
double dot(std::span<const double> a, std::span<const double> b);

// y[i] += alpha * x[i]
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// out[r] = dot(W[r, :], x) + (bias ? bias[r] : 0) for a row-major rows x cols W.
void matvec(std::span<const double> w, std::size_t rows, std::size_t cols,
            std::span<const double> x, std::span<const double> bias,
            std::span<double> out);

// Explicit entry points, bypassing dispatch. Used by the equivalence tests.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

}  // namespace neox::kernels
