#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densemarks/common.hpp"
#include "densemarks/linalg.hpp"

namespace densemarks {

template <typename T>
struct Image {
  int width = 0, height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(size_t(w) * h, fill) {}

  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  T& at(int x, int y) { return data[size_t(y) * width + x]; }
  const T& at(int x, int y) const { return data[size_t(y) * width + x]; }
  size_t pixels() const { return size_t(width) * height; }
};

// Interleaved float RGB in [0,1].
struct RgbImage {
  int width = 0, height = 0;
  std::vector<float> rgb;  // 3 * width * height

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), rgb(size_t(3) * w * h, 0.0f) {}

  float* px(int x, int y) { return &rgb[3 * (size_t(y) * width + x)]; }
  const float* px(int x, int y) const { return &rgb[3 * (size_t(y) * width + x)]; }
  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  size_t pixels() const { return size_t(width) * height; }
};

// Per-pixel canonical coordinates plus a validity (foreground) mask.
struct UvwMap {
  int width = 0, height = 0;
  std::vector<Vec3> uvw;
  std::vector<uint8_t> valid;

  UvwMap() = default;
  UvwMap(int w, int h)
      : width(w), height(h), uvw(size_t(w) * h), valid(size_t(w) * h, 0) {}

  size_t idx(int x, int y) const { return size_t(y) * width + x; }
  bool in_bounds(int x, int y) const {
    return x >= 0 && y >= 0 && x < width && y < height;
  }
  size_t pixels() const { return size_t(width) * height; }
  size_t count_valid() const {
    size_t n = 0;
    for (uint8_t v : valid) n += v ? 1 : 0;
    return n;
  }
};

// K-dimensional per-pixel features, used by the direct-feature ablation.
struct FeatureMap {
  int width = 0, height = 0, dim = 0;
  std::vector<double> feat;  // dim * width * height
  std::vector<uint8_t> valid;

  FeatureMap() = default;
  FeatureMap(int w, int h, int d)
      : width(w), height(h), dim(d),
        feat(size_t(d) * w * h, 0.0), valid(size_t(w) * h, 0) {}

  double* px(int x, int y) { return &feat[size_t(dim) * (size_t(y) * width + x)]; }
  const double* px(int x, int y) const {
    return &feat[size_t(dim) * (size_t(y) * width + x)];
  }
  size_t idx(int x, int y) const { return size_t(y) * width + x; }
};

// --- file formats -----------------------------------------------------------

void write_ppm(const std::string& path, const RgbImage& img);
RgbImage read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Image<uint8_t>& img);
Image<uint8_t> read_pgm(const std::string& path);

// "DMUVW01": u32 W, u32 H, then H*W*3 f32 LE, then H*W u8 validity.
void write_uvw(const std::string& path, const UvwMap& map);
UvwMap read_uvw(const std::string& path);

// "DMFEA01": u32 W, u32 H, u32 D, then H*W*D f32 LE, then H*W u8 validity.
void write_feature_map(const std::string& path, const FeatureMap& map);
FeatureMap read_feature_map(const std::string& path);

}  // namespace densemarks
