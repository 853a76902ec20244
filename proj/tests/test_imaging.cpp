#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "phijack/imaging.hpp"
#include "phijack/rng.hpp"

using namespace phijack;

namespace {

Image random_image(int h, int w, uint64_t seed) {
  Image img(h, w);
  RandomStream rng(seed);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

Patch random_patch(int side, int r, int c, uint64_t seed) {
  Patch p(side, r, c);
  RandomStream rng(seed);
  for (double& v : p.data) v = rng.uniform();
  return p;
}

// independent per-pixel oracle applying the mask equation
Image compose_oracle(const Image& img, const Patch& p) {
  Image out(img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const bool in_mask = r >= p.anchor_row && r < p.anchor_row + p.side && c >= p.anchor_col &&
                           c < p.anchor_col + p.side;
      for (int ch = 0; ch < 3; ++ch) {
        const double m = in_mask ? 1.0 : 0.0;
        out.at(r, c, ch) =
            img.at(r, c, ch) * (1.0 - m) +
            (in_mask ? p.at(r - p.anchor_row, c - p.anchor_col, ch) : 0.0) * m;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("all-zero patch over an all-zero image is the identity") {
  Image img(32, 32);
  Patch p(8, 4, 4);
  auto [out, mask] = compose_adversarial(img, p);
  CHECK(out.data == img.data);
  CHECK(mask.count() == 64);
}

TEST_CASE("patch value 1.0 dominates the masked pixel") {
  Image img = random_image(32, 32, 1);
  Patch p(4, 10, 12);
  for (double& v : p.data) v = 1.0;
  auto [out, mask] = compose_adversarial(img, p);
  for (int r = 10; r < 14; ++r)
    for (int c = 12; c < 16; ++c)
      for (int ch = 0; ch < 3; ++ch) CHECK(out.at(r, c, ch) == 1.0);
}

TEST_CASE("composition matches the per-pixel oracle") {
  Image img = random_image(64, 64, 2);
  Patch p = random_patch(14, 3, 5, 3);
  auto [out, mask] = compose_adversarial(img, p);
  Image oracle = compose_oracle(img, p);
  CHECK(out.data == oracle.data);
  // pixels outside the mask are bit-identical to the input
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (!mask.at(r, c))
        for (int ch = 0; ch < 3; ++ch) CHECK(out.at(r, c, ch) == img.at(r, c, ch));
}

TEST_CASE("composition is idempotent") {
  Image img = random_image(48, 48, 4);
  Patch p = random_patch(10, 7, 20, 5);
  auto [once, m1] = compose_adversarial(img, p);
  auto [twice, m2] = compose_adversarial(once, p);
  CHECK(once.data == twice.data);
  CHECK(m1.data == m2.data);
}

TEST_CASE("out-of-bounds anchor raises a placement error") {
  Image img(32, 32);
  Patch p(8, 28, 0);
  try {
    compose_adversarial(img, p);
    FAIL("expected placement error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Placement);
  }
}

TEST_CASE("patch sizing: 5% of 64x64 gives side 14") {
  Patch p = patch_for_area_fraction(64, 64, 0.05, 7, 0, 0);
  CHECK(p.side == 14);  // round(sqrt(204.8))
  for (double v : p.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("patch sizing: 1% of 100x100 gives side 10 exactly") {
  Patch p = patch_for_area_fraction(100, 100, 0.01, 7, 0, 0);
  CHECK(p.side == 10);
}

TEST_CASE("patch sizing honors the rounding-slack area bound") {
  RandomStream rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int h = 16 + static_cast<int>(rng.below(120));
    const int w = 16 + static_cast<int>(rng.below(120));
    const double f = rng.uniform(0.005, 0.3);
    Patch p = patch_for_area_fraction(h, w, f, trial, 0, 0);
    const double area = static_cast<double>(p.side) * p.side;
    CHECK(std::fabs(area / (h * w) - f) <= (2.0 * p.side + 1.0) / (h * w));
  }
}

TEST_CASE("degenerate fraction raises a sizing error") {
  try {
    patch_for_area_fraction(4, 4, 0.01, 7, 0, 0);  // side would be < 1
    FAIL("expected sizing error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Sizing);
  }
  CHECK_THROWS_AS(patch_for_area_fraction(64, 64, 0.0, 7, 0, 0), Error);
  CHECK_THROWS_AS(patch_for_area_fraction(64, 64, 1.0, 7, 0, 0), Error);
}

TEST_CASE("tokens_under_region: full mask selects every token") {
  PixelMask mask(64, 64);
  for (auto& v : mask.data) v = 1;
  auto tokens = tokens_under_region(mask, 8, 0.5);
  CHECK(tokens.size() == 64);
}

TEST_CASE("tokens_under_region: empty mask selects nothing") {
  PixelMask mask(64, 64);
  CHECK(tokens_under_region(mask, 8, 0.5).empty());
}

TEST_CASE("tokens_under_region: 14x14 at origin with patch 8 selects {0,1,8,9}") {
  // coverage fractions are 64/64, 48/64, 48/64, 36/64 - all >= 0.5
  PixelMask mask(64, 64);
  for (int r = 0; r < 14; ++r)
    for (int c = 0; c < 14; ++c) mask.at(r, c) = 1;
  auto tokens = tokens_under_region(mask, 8, 0.5);
  CHECK(tokens == std::vector<int>{0, 1, 8, 9});
}

TEST_CASE("tokens_under_region matches a block-overlap oracle on random masks") {
  RandomStream rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    PixelMask mask(32, 32);
    const int side = 3 + static_cast<int>(rng.below(14));
    const int r0 = static_cast<int>(rng.below(32 - side));
    const int c0 = static_cast<int>(rng.below(32 - side));
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) mask.at(r0 + r, c0 + c) = 1;
    const double thr = rng.uniform(0.1, 0.9);
    auto got = tokens_under_region(mask, 8, thr);

    std::vector<int> expect;
    for (int tr = 0; tr < 4; ++tr) {
      for (int tc = 0; tc < 4; ++tc) {
        int covered = 0;
        for (int r = 0; r < 8; ++r)
          for (int c = 0; c < 8; ++c) covered += mask.at(tr * 8 + r, tc * 8 + c);
        if (covered / 64.0 >= thr) expect.push_back(tr * 4 + tc);
      }
    }
    CHECK(got == expect);
  }
}

TEST_CASE("tokens_under_region is monotone under mask growth") {
  RandomStream rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    PixelMask small(32, 32), big(32, 32);
    for (int i = 0; i < 200; ++i) {
      const int r = static_cast<int>(rng.below(32));
      const int c = static_cast<int>(rng.below(32));
      small.at(r, c) = rng.below(2);
      big.at(r, c) = small.at(r, c);
    }
    for (int i = 0; i < 60; ++i) {
      big.data[rng.below(big.data.size())] = 1;
    }
    for (size_t i = 0; i < small.data.size(); ++i) big.data[i] |= small.data[i];
    auto ts = tokens_under_region(small, 8, 0.3);
    auto tb = tokens_under_region(big, 8, 0.3);
    for (int t : ts) CHECK(std::find(tb.begin(), tb.end(), t) != tb.end());
  }
}

TEST_CASE("tokens_under_region rejects non-divisible dimensions") {
  PixelMask mask(30, 32);
  CHECK_THROWS_AS(tokens_under_region(mask, 8, 0.5), Error);
}

TEST_CASE("PHJ1 round-trips through float32") {
  Patch p = random_patch(14, 2, 9, 11);
  const std::string path = "/tmp/phijack_test_patch.phj";
  save_patch(p, path);
  Patch q = load_patch(path);
  CHECK(q.side == p.side);
  CHECK(q.anchor_row == 2);
  CHECK(q.anchor_col == 9);
  for (size_t i = 0; i < p.data.size(); ++i) {
    CHECK(q.data[i] == static_cast<double>(static_cast<float>(p.data[i])));
  }
  // a float32 round-trip of the loaded values is exact
  save_patch(q, path);
  Patch r = load_patch(path);
  CHECK(r.data == q.data);
}

TEST_CASE("PHJ1 byte layout is pinned") {
  Patch p(1, 3, 7);
  p.data = {0.0, 0.5, 1.0};
  const std::string path = "/tmp/phijack_test_tiny.phj";
  save_patch(p, path);
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() == 4 + 4 * 3 + 4 * 3);
  CHECK(bytes.substr(0, 4) == "PHJ1");
  const unsigned char* b = reinterpret_cast<const unsigned char*>(bytes.data());
  CHECK(b[4] == 1);   // side, little-endian u32
  CHECK(b[8] == 3);   // anchor_row
  CHECK(b[12] == 7);  // anchor_col
  // 0.5f little-endian = 00 00 00 3f
  CHECK(b[20] == 0x00);
  CHECK(b[23] == 0x3f);
}

TEST_CASE("PPM export quantizes round-half-up") {
  Patch p(1, 0, 0);
  // 0.5/255ths: value 127.5/255 rounds up to 128
  p.data = {127.5 / 255.0, 0.0, 1.0};
  const std::string path = "/tmp/phijack_test_patch.ppm";
  save_patch_ppm(p, path);
  std::ifstream is(path);
  std::string header, dims, maxval, r, g, b;
  std::getline(is, header);
  std::getline(is, dims);
  std::getline(is, maxval);
  is >> r >> g >> b;
  CHECK(header == "P3");
  CHECK(dims == "1 1");
  CHECK(maxval == "255");
  CHECK(r == "128");
  CHECK(g == "0");
  CHECK(b == "255");
}

TEST_CASE("loading a non-patch file is an integrity error") {
  const std::string path = "/tmp/phijack_not_a_patch.phj";
  std::ofstream(path) << "definitely not a patch";
  try {
    load_patch(path);
    FAIL("expected integrity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Integrity);
  }
}
