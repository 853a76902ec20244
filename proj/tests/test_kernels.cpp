#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "phijack/kernels.hpp"
#include "phijack/rng.hpp"

using namespace phijack;

namespace {

std::vector<double> random_vec(size_t n, RandomStream& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// reference triple loop, independent of both kernel tables
void naive_matmul(const double* A, const double* B, double* C, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t l = 0; l < k; ++l) acc += A[i * k + l] * B[l * n + j];
      C[i * n + j] = acc;
    }
  }
}

}  // namespace

TEST_CASE("scalar matmul matches the naive triple loop exactly-ish") {
  RandomStream rng(11);
  const size_t m = 13, k = 31, n = 17;
  auto A = random_vec(m * k, rng);
  auto B = random_vec(k * n, rng);
  std::vector<double> C1(m * n), C2(m * n);
  kern::scalar_ops().matmul(A.data(), B.data(), C1.data(), m, k, n);
  naive_matmul(A.data(), B.data(), C2.data(), m, k, n);
  for (size_t i = 0; i < C1.size(); ++i) {
    CHECK(C1[i] == doctest::Approx(C2[i]).epsilon(1e-13));
  }
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const kern::Ops* avx2 = kern::avx2_ops_or_null();
  if (avx2 == nullptr) return;  // non-x86 build
  const kern::Ops& sc = kern::scalar_ops();

  RandomStream rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 1 + rng.below(300);
    auto a = random_vec(n, rng);
    auto b = random_vec(n, rng);

    CHECK(avx2->dot(a.data(), b.data(), n) ==
          doctest::Approx(sc.dot(a.data(), b.data(), n)).epsilon(1e-12));
    CHECK(avx2->sum(a.data(), n) == doctest::Approx(sc.sum(a.data(), n)).epsilon(1e-12));

    // fma contraction differs between the variants, so elementwise ops get a
    // one-ulp-scale tolerance rather than bit equality
    std::vector<double> y1 = b, y2 = b;
    avx2->axpy(0.7, a.data(), y1.data(), n);
    sc.axpy(0.7, a.data(), y2.data(), n);
    for (size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-15));

    std::vector<double> m1(n), m2(n);
    avx2->mul(a.data(), b.data(), m1.data(), n);
    sc.mul(a.data(), b.data(), m2.data(), n);
    for (size_t i = 0; i < n; ++i) CHECK(m1[i] == doctest::Approx(m2[i]).epsilon(1e-15));
  }
}

TEST_CASE("avx2 matmul forms agree with scalar within reassociation slack") {
  const kern::Ops* avx2 = kern::avx2_ops_or_null();
  if (avx2 == nullptr) return;
  RandomStream rng(7);
  for (auto [m, k, n] : {std::array<size_t, 3>{64, 192, 32}, {64, 32, 96},
                         {64, 64, 8}, {5, 9, 3}, {1, 100, 17}}) {
    auto A = random_vec(m * k, rng);
    auto B = random_vec(k * n, rng);
    std::vector<double> C1(m * n), C2(m * n);
    avx2->matmul(A.data(), B.data(), C1.data(), m, k, n);
    kern::scalar_ops().matmul(A.data(), B.data(), C2.data(), m, k, n);
    for (size_t i = 0; i < C1.size(); ++i) {
      CHECK(C1[i] == doctest::Approx(C2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("avx2 exp matches std::exp to a couple of ulps") {
  const kern::Ops* avx2 = kern::avx2_ops_or_null();
  if (avx2 == nullptr) return;
  RandomStream rng(3);
  std::vector<double> x(257);
  for (double& v : x) v = rng.uniform(-700.0, 700.0);
  x[0] = 0.0;
  x[1] = 1.0;
  x[2] = -1.0;
  x[3] = -60.0;  // typical softmax tail
  std::vector<double> y(x.size());
  avx2->exp_vec(x.data(), y.data(), x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double ref = std::exp(x[i]);
    CHECK(y[i] == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("backend forcing works and reports its name") {
  const std::string before = kern::active_backend();
  CHECK(kern::force_backend("scalar"));
  CHECK(kern::active_backend() == "scalar");
  CHECK(kern::force_backend("auto"));
  CHECK_FALSE(kern::force_backend("never-heard-of-it"));
  CHECK(kern::force_backend(before));
}
