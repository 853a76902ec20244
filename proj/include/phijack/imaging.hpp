#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phijack/common.hpp"
#include "phijack/rng.hpp"

namespace phijack {

// Raster data model. Images are row-major, channel-last, 64-bit intensities
// in [0,1]. 32-bit floats appear only in serialized artifacts.

struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // height*width*3, (r*width + c)*3 + ch

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0) {}

  double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * width + c) * 3 + ch]; }
  double at(int r, int c, int ch) const {
    return data[(static_cast<size_t>(r) * width + c) * 3 + ch];
  }
};

struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;  // values in {0,1}

  PixelMask() = default;
  PixelMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  uint8_t& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }

  size_t count() const;
};

struct Patch {
  int side = 0;
  int anchor_row = 0;
  int anchor_col = 0;
  std::vector<double> data;  // side*side*3, row-major channel-last

  Patch() = default;
  Patch(int s, int r, int c)
      : side(s), anchor_row(r), anchor_col(c), data(static_cast<size_t>(s) * s * 3, 0.0) {}

  double& at(int r, int c, int ch) { return data[(static_cast<size_t>(r) * side + c) * 3 + ch]; }
  double at(int r, int c, int ch) const {
    return data[(static_cast<size_t>(r) * side + c) * 3 + ch];
  }

  void clamp01();
};

// Token-resolution view of pixel regions: which encoder tokens the patch
// covers (the injection index set) and which carry the arm.
struct TokenGridMap {
  int token_rows = 0;
  int token_cols = 0;
  std::vector<int> patch_token_indices;    // ordered ascending
  std::vector<uint8_t> arm_token_mask;     // token_rows*token_cols, {0,1}
};

// adversarial = image*(1-M) + patch*M with M the patch rectangle.
// Pixels outside the mask are bit-identical to the input.
std::pair<Image, PixelMask> compose_adversarial(const Image& image, const Patch& patch);

// Square patch sized so side^2 is the closest integer to fraction*H*W
// (round half up on the side length). Data is uniform random in [0,1].
Patch patch_for_area_fraction(int image_h, int image_w, double fraction, uint64_t seed,
                              int anchor_row, int anchor_col);

// Token j is included iff the covered fraction of its receptive pixel block
// is >= threshold. Mask dimensions must be divisible by the encoder patch
// size.
std::vector<int> tokens_under_region(const PixelMask& mask, int encoder_patch_size,
                                     double threshold = 0.5);

PixelMask mask_for_patch(int image_h, int image_w, const Patch& patch);

// --- serialization -------------------------------------------------------

// "PHJ1": magic, u32 side, u32 anchor_row, u32 anchor_col, then
// side*side*3 float32 little-endian, row-major channel-last.
void save_patch(const Patch& patch, const std::string& path);
Patch load_patch(const std::string& path);

// Plain-text PPM (P3, 8-bit) with round-half-up quantization.
void save_patch_ppm(const Patch& patch, const std::string& path);
void save_image_ppm(const Image& image, const std::string& path);

}  // namespace phijack
