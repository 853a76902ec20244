#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "phijack/encoder.hpp"
#include "phijack/graph.hpp"
#include "phijack/pretrain.hpp"
#include "phijack/rng.hpp"

using namespace phijack;

namespace {

Patch random_patch(int side, uint64_t seed) {
  Patch p(side, 0, 0);
  RandomStream rng(seed);
  for (double& v : p.data) v = rng.uniform(0.05, 0.95);
  return p;
}

PatchObjective quadratic_objective() {
  return [](Graph& g, Value p) { return g.sum_all(g.mul(p, p)); };
}

}  // namespace

TEST_CASE("linear objective has an all-ones gradient") {
  Patch p = random_patch(4, 1);
  auto grad = patch_gradient([](Graph& g, Value v) { return g.sum_all(v); }, p);
  for (double gi : grad) CHECK(gi == 1.0);
}

TEST_CASE("quadratic objective gradient is 2p elementwise") {
  Patch p = random_patch(4, 2);
  auto grad = patch_gradient(quadratic_objective(), p);
  for (size_t i = 0; i < grad.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(2.0 * p.data[i]).epsilon(1e-14));
  }
}

TEST_CASE("constant objective has an identically zero gradient") {
  Patch p = random_patch(4, 3);
  auto grad = patch_gradient(
      [](Graph& g, Value v) {
        (void)v;
        return g.sum_all(g.constant_copy({1.0, 2.0, 3.0}, 3, 1));
      },
      p);
  for (double gi : grad) CHECK(gi == 0.0);
}

TEST_CASE("finite differences: linear objective is exact to 1e-10") {
  Patch p = random_patch(4, 4);
  const auto report = finite_difference_check(
      [](Graph& g, Value v) { return g.sum_all(v); }, p, 1e-3, 20, 99);
  CHECK(report.max_rel() <= 1e-10);
}

TEST_CASE("finite differences: zero samples give an empty report") {
  Patch p = random_patch(4, 5);
  const auto report = finite_difference_check(quadratic_objective(), p, 1e-5, 0, 1);
  CHECK(report.entries.empty());
  CHECK(report.max_rel() == 0.0);
  CHECK(report.frac_within(1e-4) == 1.0);
}

TEST_CASE("gradient of a sum equals the sum of gradients") {
  Patch p = random_patch(5, 6);
  RandomStream rng(7);
  std::vector<double> c(p.data.size());
  for (double& v : c) v = rng.uniform(-1.0, 1.0);

  const PatchObjective f = [&](Graph& g, Value v) {
    return g.dot_all(v, g.constant(c.data(), static_cast<int>(c.size()), 1));
  };
  const PatchObjective h = quadratic_objective();
  const PatchObjective fh = [&](Graph& g, Value v) {
    return g.add(g.dot_all(v, g.constant(c.data(), static_cast<int>(c.size()), 1)),
                 g.sum_all(g.mul(v, v)));
  };
  auto gf = patch_gradient(f, p);
  auto gh = patch_gradient(h, p);
  auto gfh = patch_gradient(fh, p);
  for (size_t i = 0; i < gf.size(); ++i) {
    CHECK(gfh[i] == doctest::Approx(gf[i] + gh[i]).epsilon(1e-13));
  }
}

TEST_CASE("cosine gradient is orthogonal to its argument") {
  // for cossim(a,b) as a function of a: <grad_a, a> = 0 up to the eps guard
  RandomStream rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Patch a(3, 0, 0);  // 27 coordinates used as a plain vector
    for (double& v : a.data) v = rng.uniform(-1.0, 1.0);
    std::vector<double> b(a.data.size());
    for (double& v : b) v = rng.uniform(-1.0, 1.0);

    // eps = 0 here: the guard itself adds an O(eps) radial component
    auto grad = patch_gradient(
        [&](Graph& g, Value v) {
          Value bt = g.constant(b.data(), 1, static_cast<int>(b.size()));
          Value vt = g.transpose(v);  // [1, n]
          Value cos = g.matmul_nt(g.l2normalize_rows(vt, 0.0), g.l2normalize_rows(bt, 0.0));
          return g.sum_all(cos);
        },
        a);
    double inner = 0.0;
    for (size_t i = 0; i < grad.size(); ++i) inner += grad[i] * a.data[i];
    CHECK(std::fabs(inner) <= 1e-10);
  }
}

TEST_CASE("every primitive passes a finite-difference spot check") {
  // one composite objective touching matmul, matmul_nt, softmax, layernorm,
  // l2normalize, rowwise_dot, slice, concat, gather, transpose, topk, xent
  RandomStream rng(9);
  const int n = 6;
  std::vector<double> w(n * n), gamma(n, 1.0), beta(n, 0.0), anchor(2 * n);
  for (double& v : w) v = rng.uniform(-0.7, 0.7);
  for (double& v : anchor) v = rng.uniform(-1.0, 1.0);
  for (double& v : gamma) v = rng.uniform(0.5, 1.5);
  for (double& v : beta) v = rng.uniform(-0.2, 0.2);

  const PatchObjective obj = [&](Graph& g, Value p) {
    std::vector<int> idx(24);
    for (int i = 0; i < 24; ++i) idx[i] = i;
    Value x = g.gather_flat(p, idx, 4, n);
    Value wm = g.constant(w.data(), n, n);
    Value h = g.matmul(x, wm);
    h = g.layernorm_rows(h, g.constant(gamma.data(), 1, n), g.constant(beta.data(), 1, n), 1e-5);
    Value att = g.softmax_rows(g.scale(g.matmul_nt(h, h), 0.5));
    Value mixed = g.matmul(att, h);
    Value left = g.slice_cols(mixed, 0, 3);
    Value right = g.slice_cols(mixed, 3, 3);
    Value cat = g.concat_cols({left, right});
    Value sel = g.gather_rows(cat, {0, 2, 3});
    Value zn = g.l2normalize_rows(sel, 1e-8);
    Value e = g.l2normalize_rows(g.constant(anchor.data(), 2, n), 1e-8);
    Value sims = g.matmul_nt(zn, e);
    Value topk = g.topk_row_mean(sims, 1);
    Value cos = g.rowwise_dot(zn, g.transpose(g.transpose(zn)));
    Value xent = g.xent_rows(g.scale(sims, 3.0), {0, 1, 0}, {1, 1, 1, 1, 1, 1}, {1.0, 0.5, 1.0});
    return g.add(g.add(g.mean_all(topk), g.scale(g.sum_all(cos), 0.1)), xent);
  };

  Patch p(0, 0, 0);
  p.data.resize(24);
  RandomStream prand(21);
  for (double& v : p.data) v = prand.uniform(-0.9, 0.9);

  const auto report = finite_difference_check(obj, p, 1e-6, 24, 1234);
  CHECK(report.entries.size() == 24);
  CHECK(report.max_rel(1e-8) < 2e-6);
}

TEST_CASE("compose_patch routes gradients only through the rectangle") {
  Image img(16, 16);
  RandomStream rng(10);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);
  Patch p = random_patch(4, 11);
  p.anchor_row = 5;
  p.anchor_col = 6;

  auto grad = patch_gradient(
      [&](Graph& g, Value v) {
        Value im = g.constant(img.data.data(), static_cast<int>(img.data.size()), 1);
        Value iadv = g.compose_patch(im, v, 16, 16, 4, 5, 6);
        return g.sum_all(iadv);
      },
      p);
  for (double gi : grad) CHECK(gi == 1.0);  // every patch pixel shows up once
}

TEST_CASE("non-finite forward values raise a numeric error naming the op") {
  try {
    Graph g2;
    Value b = g2.constant_copy({1e308, 1e308}, 1, 2);
    (void)g2.mul(b, b);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("mul") != std::string::npos);
  }
}

TEST_CASE("forward recomputation is bit-identical") {
  RandomStream rng(12);
  Graph g;
  std::vector<double> xdata(32);
  for (double& v : xdata) v = rng.uniform(-1.0, 1.0);
  Value x = g.constant(xdata.data(), 4, 8);
  Value y = g.softmax_rows(g.matmul_nt(x, x));
  Value z = g.sum_all(g.mul(y, y));
  (void)z;
  CHECK(g.verify_recompute());
}

TEST_CASE("shape errors are reported as shape errors") {
  Graph g;
  Value a = g.constant_copy({1, 2, 3, 4}, 2, 2);
  Value b = g.constant_copy({1, 2, 3}, 3, 1);
  CHECK_THROWS_AS((void)g.add(a, b), Error);
  try {
    (void)g.matmul(a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
  }
}

TEST_CASE("topk tie-breaking favors the lower column index") {
  Graph g;
  Value a = g.constant_copy({0.5, 0.9, 0.9, 0.1}, 1, 4);
  Value t = g.topk_row_mean(a, 2);
  CHECK(g.scalar_value(t) == doctest::Approx(0.9).epsilon(1e-15));
  // gradient lands on columns 1 and 2, not 3
  Graph g2;
  std::vector<double> data{0.5, 0.9, 0.9, 0.1};
  Value leaf = g2.leaf(data.data(), 1, 4, true);
  Value t2 = g2.topk_row_mean(leaf, 2);
  g2.backward(t2);
  auto gr = g2.grad(leaf);
  CHECK(gr[0] == 0.0);
  CHECK(gr[1] == doctest::Approx(0.5));
  CHECK(gr[2] == doctest::Approx(0.5));
  CHECK(gr[3] == 0.0);
}

TEST_CASE("gradients flow through the full encoder to patch pixels") {
  EncoderConfig cfg;
  cfg.seed = 77;
  VisionEncoder enc(cfg, world_vocabulary());

  Image img(64, 64);
  RandomStream rng(13);
  for (double& v : img.data) v = rng.uniform(0.0, 1.0);
  Patch p = random_patch(14, 14);
  p.anchor_row = 0;
  p.anchor_col = 24;

  // a cosine objective against fixed clean features, the same shape the
  // suppression loss takes
  const TokenFeatures clean = enc.encode(img);
  const PatchObjective obj = [&](Graph& g, Value v) {
    Value im = g.constant(img.data.data(), static_cast<int>(img.data.size()), 1);
    Value iadv = g.compose_patch(im, v, 64, 64, 14, 0, 24);
    auto fw = enc.forward(g, iadv, 64, 64);
    Value zc = g.constant(clean.tokens.data(), clean.token_count(), clean.dim);
    Value cos = g.rowwise_dot(g.l2normalize_rows(fw.z, 1e-8), g.l2normalize_rows(zc, 1e-8));
    Value asum = g.mean_all(fw.head_attention[0]);
    return g.add(g.mean_all(cos), g.scale(asum, 0.3));
  };

  const auto report = finite_difference_check(obj, p, 1e-5, 60, 555);
  CHECK(report.frac_within(1e-4, 1e-8) >= 0.99);
  CHECK(report.max_rel(1e-6) < 1e-2);
}
