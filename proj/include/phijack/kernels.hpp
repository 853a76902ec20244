#pragma once

#include <cstddef>
#include <string>

namespace phijack::kern {

// Dispatch table for the hot arithmetic loops. Two implementations are
// provided: a scalar reference (the semantics oracle) and an AVX2/FMA
// variant selected at runtime when the CPU supports it. The two are
// equivalence-tested against each other; they may differ in the last bits
// because vector reductions reassociate sums.
//
// Matrix layout is row-major throughout. "acc" variants accumulate into C,
// plain variants overwrite it.
struct Ops {
  const char* name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
  void (*scale)(double alpha, const double* x, double* y, std::size_t n); // y = alpha*x
  void (*add)(const double* a, const double* b, double* y, std::size_t n);
  void (*sub)(const double* a, const double* b, double* y, std::size_t n);
  void (*mul)(const double* a, const double* b, double* y, std::size_t n);
  void (*fma_vec)(const double* a, const double* b, double* y, std::size_t n); // y += a.*b
  void (*exp_vec)(const double* x, double* y, std::size_t n);

  // C[m x n] = A[m x k] * B[k x n]
  void (*matmul)(const double* A, const double* B, double* C,
                 std::size_t m, std::size_t k, std::size_t n);
  // C[m x n] += A[m x k] * B[k x n]
  void (*matmul_acc)(const double* A, const double* B, double* C,
                     std::size_t m, std::size_t k, std::size_t n);
};

// Implementation tables. avx2_ops is compiled only on x86-64 builds where
// the compiler accepts -mavx2; null otherwise.
const Ops& scalar_ops();
const Ops* avx2_ops_or_null();

// Active table. Chosen once: PHIJACK_SIMD=scalar|avx2 overrides, otherwise
// the best supported variant wins.
const Ops& ops();

// Test hook: force a backend by name ("scalar", "avx2", "auto").
// Returns false if the backend is unavailable on this machine.
bool force_backend(const std::string& name);

std::string active_backend();

}  // namespace phijack::kern
