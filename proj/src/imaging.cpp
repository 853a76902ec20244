#include "phijack/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace phijack {

size_t PixelMask::count() const {
  size_t n = 0;
  for (uint8_t v : data) n += v;
  return n;
}

void Patch::clamp01() {
  for (double& v : data) v = std::min(1.0, std::max(0.0, v));
}

std::pair<Image, PixelMask> compose_adversarial(const Image& image, const Patch& patch) {
  if (patch.anchor_row < 0 || patch.anchor_col < 0 ||
      patch.anchor_row + patch.side > image.height ||
      patch.anchor_col + patch.side > image.width) {
    fail(ErrorKind::Placement,
         "patch rectangle outside image bounds: anchor (" + std::to_string(patch.anchor_row) +
             "," + std::to_string(patch.anchor_col) + "), side " + std::to_string(patch.side) +
             ", image " + std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  Image out = image;
  PixelMask mask(image.height, image.width);
  for (int r = 0; r < patch.side; ++r) {
    for (int c = 0; c < patch.side; ++c) {
      const int ir = patch.anchor_row + r;
      const int ic = patch.anchor_col + c;
      mask.at(ir, ic) = 1;
      for (int ch = 0; ch < 3; ++ch) out.at(ir, ic, ch) = patch.at(r, c, ch);
    }
  }
  return {std::move(out), std::move(mask)};
}

PixelMask mask_for_patch(int image_h, int image_w, const Patch& patch) {
  PixelMask mask(image_h, image_w);
  for (int r = 0; r < patch.side; ++r)
    for (int c = 0; c < patch.side; ++c)
      mask.at(patch.anchor_row + r, patch.anchor_col + c) = 1;
  return mask;
}

Patch patch_for_area_fraction(int image_h, int image_w, double fraction, uint64_t seed,
                              int anchor_row, int anchor_col) {
  if (fraction <= 0.0 || fraction >= 1.0) {
    fail(ErrorKind::Sizing, "area fraction must lie in (0,1), got " + std::to_string(fraction));
  }
  const double target = fraction * image_h * image_w;
  const int side = static_cast<int>(std::floor(std::sqrt(target) + 0.5));
  if (side < 1) {
    fail(ErrorKind::Sizing, "area fraction " + std::to_string(fraction) +
                                " yields a patch side below one pixel");
  }
  Patch patch(side, anchor_row, anchor_col);
  RandomStream rng(seed);
  for (double& v : patch.data) v = rng.uniform();
  return patch;
}

std::vector<int> tokens_under_region(const PixelMask& mask, int encoder_patch_size,
                                     double threshold) {
  if (encoder_patch_size <= 0 || mask.height % encoder_patch_size != 0 ||
      mask.width % encoder_patch_size != 0) {
    fail(ErrorKind::Shape, "mask dimensions must be divisible by the encoder patch size");
  }
  const int rows = mask.height / encoder_patch_size;
  const int cols = mask.width / encoder_patch_size;
  const double block = static_cast<double>(encoder_patch_size) * encoder_patch_size;
  std::vector<int> out;
  for (int tr = 0; tr < rows; ++tr) {
    for (int tc = 0; tc < cols; ++tc) {
      int covered = 0;
      for (int r = 0; r < encoder_patch_size; ++r) {
        const int ir = tr * encoder_patch_size + r;
        for (int c = 0; c < encoder_patch_size; ++c) {
          covered += mask.at(ir, tc * encoder_patch_size + c);
        }
      }
      if (covered / block >= threshold) out.push_back(tr * cols + tc);
    }
  }
  return out;
}

// --- serialization -------------------------------------------------------

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

int quantize8(double v) {
  // round half up onto [0,255]
  const double x = std::min(1.0, std::max(0.0, v)) * 255.0;
  return std::min(255, static_cast<int>(std::floor(x + 0.5)));
}

}  // namespace

void save_patch(const Patch& patch, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os.write("PHJ1", 4);
  put_u32(os, static_cast<uint32_t>(patch.side));
  put_u32(os, static_cast<uint32_t>(patch.anchor_row));
  put_u32(os, static_cast<uint32_t>(patch.anchor_col));
  for (double v : patch.data) put_f32(os, static_cast<float>(v));
  if (!os) fail(ErrorKind::Io, "write failure on " + path);
}

Patch load_patch(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PHJ1", 4) != 0) {
    fail(ErrorKind::Integrity, path + " is not a PHJ1 patch file");
  }
  Patch patch;
  patch.side = static_cast<int>(get_u32(is));
  patch.anchor_row = static_cast<int>(get_u32(is));
  patch.anchor_col = static_cast<int>(get_u32(is));
  if (patch.side <= 0 || patch.side > 4096) {
    fail(ErrorKind::Integrity, path + ": implausible patch side");
  }
  patch.data.resize(static_cast<size_t>(patch.side) * patch.side * 3);
  for (double& v : patch.data) v = static_cast<double>(get_f32(is));
  if (!is) fail(ErrorKind::Integrity, path + ": truncated patch file");
  return patch;
}

void save_patch_ppm(const Patch& patch, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << "P3\n" << patch.side << " " << patch.side << "\n255\n";
  for (int r = 0; r < patch.side; ++r) {
    for (int c = 0; c < patch.side; ++c) {
      os << quantize8(patch.at(r, c, 0)) << " " << quantize8(patch.at(r, c, 1)) << " "
         << quantize8(patch.at(r, c, 2));
      os << (c + 1 == patch.side ? "\n" : " ");
    }
  }
}

void save_image_ppm(const Image& image, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::Io, "cannot open " + path + " for writing");
  os << "P3\n" << image.width << " " << image.height << "\n255\n";
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < image.width; ++c) {
      os << quantize8(image.at(r, c, 0)) << " " << quantize8(image.at(r, c, 1)) << " "
         << quantize8(image.at(r, c, 2));
      os << (c + 1 == image.width ? "\n" : " ");
    }
  }
}

}  // namespace phijack
