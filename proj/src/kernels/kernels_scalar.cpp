#include <cmath>
#include <cstring>

#include "phijack/kernels.hpp"

// Scalar reference kernels. Plain loops, no intrinsics; this file defines
// the numeric semantics the SIMD variants are tested against.

namespace phijack::kern {
namespace {

double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double s_sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void s_axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void s_scale(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

void s_add(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void s_sub(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void s_mul(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void s_fma_vec(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

void s_exp_vec(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void s_matmul_acc(const double* A, const double* B, double* C,
                  std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* crow = C + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double a = arow[l];
      const double* brow = B + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void s_matmul(const double* A, const double* B, double* C,
              std::size_t m, std::size_t k, std::size_t n) {
  std::memset(C, 0, m * n * sizeof(double));
  s_matmul_acc(A, B, C, m, k, n);
}

const Ops kScalar = {
    "scalar", s_dot,  s_sum, s_axpy,    s_scale,  s_add,
    s_sub,    s_mul,  s_fma_vec, s_exp_vec, s_matmul, s_matmul_acc,
};

}  // namespace

const Ops& scalar_ops() { return kScalar; }

}  // namespace phijack::kern
