#include "densemarks/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "densemarks/binary_io.hpp"

namespace densemarks {

namespace {

uint8_t to_byte(float v) {
  float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<uint8_t>(std::lround(c * 255.0f));
}

// Minimal PNM header parser: magic, comments, width, height, maxval.
struct PnmHeader {
  int width = 0, height = 0;
};

PnmHeader read_pnm_header(BinReader& r, const char* magic) {
  r.magic(magic);
  int vals[3];
  for (int i = 0; i < 3; ++i) {
    // skip whitespace and comments
    char c;
    for (;;) {
      r.bytes(&c, 1);
      if (c == '#') {
        while (c != '\n') r.bytes(&c, 1);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        break;
      }
    }
    int v = 0;
    bool any = false;
    while (std::isdigit(static_cast<unsigned char>(c))) {
      v = v * 10 + (c - '0');
      any = true;
      r.bytes(&c, 1);
    }
    if (!any) r.parse_fail("expected integer in header");
    if (!std::isspace(static_cast<unsigned char>(c)))
      r.parse_fail("expected whitespace after header value");
    vals[i] = v;
  }
  if (vals[2] != 255) r.parse_fail("only maxval 255 is supported");
  if (vals[0] <= 0 || vals[1] <= 0) r.parse_fail("bad image dimensions");
  return {vals[0], vals[1]};
}

}  // namespace

void write_ppm(const std::string& path, const RgbImage& img) {
  BinWriter w(path);
  char hdr[64];
  int n = std::snprintf(hdr, sizeof hdr, "P6\n%d %d\n255\n", img.width, img.height);
  w.bytes(hdr, size_t(n));
  std::vector<uint8_t> row(size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float* p = img.px(x, y);
      row[3 * x + 0] = to_byte(p[0]);
      row[3 * x + 1] = to_byte(p[1]);
      row[3 * x + 2] = to_byte(p[2]);
    }
    w.bytes(row.data(), row.size());
  }
  w.close();
}

RgbImage read_ppm(const std::string& path) {
  BinReader r(path);
  PnmHeader h = read_pnm_header(r, "P6");
  RgbImage img(h.width, h.height);
  std::vector<uint8_t> row(size_t(h.width) * 3);
  for (int y = 0; y < h.height; ++y) {
    r.bytes(row.data(), row.size());
    for (int x = 0; x < h.width; ++x) {
      float* p = img.px(x, y);
      p[0] = row[3 * x + 0] / 255.0f;
      p[1] = row[3 * x + 1] / 255.0f;
      p[2] = row[3 * x + 2] / 255.0f;
    }
  }
  return img;
}

void write_pgm(const std::string& path, const Image<uint8_t>& img) {
  BinWriter w(path);
  char hdr[64];
  int n = std::snprintf(hdr, sizeof hdr, "P5\n%d %d\n255\n", img.width, img.height);
  w.bytes(hdr, size_t(n));
  w.bytes(img.data.data(), img.data.size());
  w.close();
}

Image<uint8_t> read_pgm(const std::string& path) {
  BinReader r(path);
  PnmHeader h = read_pnm_header(r, "P5");
  Image<uint8_t> img(h.width, h.height);
  r.bytes(img.data.data(), img.data.size());
  return img;
}

void write_uvw(const std::string& path, const UvwMap& map) {
  BinWriter w(path);
  w.magic("DMUVW01");
  w.u32(uint32_t(map.width));
  w.u32(uint32_t(map.height));
  for (const Vec3& p : map.uvw) {
    w.f32(float(p.x));
    w.f32(float(p.y));
    w.f32(float(p.z));
  }
  w.bytes(map.valid.data(), map.valid.size());
  w.close();
}

UvwMap read_uvw(const std::string& path) {
  BinReader r(path);
  r.magic("DMUVW01");
  uint32_t w = r.u32(), h = r.u32();
  if (w == 0 || h == 0 || w > (1u << 20) || h > (1u << 20))
    r.parse_fail("implausible dimensions");
  UvwMap map{int(w), int(h)};
  for (Vec3& p : map.uvw) {
    p.x = r.f32();
    p.y = r.f32();
    p.z = r.f32();
  }
  r.bytes(map.valid.data(), map.valid.size());
  return map;
}

void write_feature_map(const std::string& path, const FeatureMap& map) {
  BinWriter w(path);
  w.magic("DMFEA01");
  w.u32(uint32_t(map.width));
  w.u32(uint32_t(map.height));
  w.u32(uint32_t(map.dim));
  for (double v : map.feat) w.f32(float(v));
  w.bytes(map.valid.data(), map.valid.size());
  w.close();
}

FeatureMap read_feature_map(const std::string& path) {
  BinReader r(path);
  r.magic("DMFEA01");
  uint32_t w = r.u32(), h = r.u32(), d = r.u32();
  if (w == 0 || h == 0 || d == 0 || w > (1u << 20) || h > (1u << 20) || d > 4096)
    r.parse_fail("implausible dimensions");
  FeatureMap map{int(w), int(h), int(d)};
  for (double& v : map.feat) v = r.f32();
  r.bytes(map.valid.data(), map.valid.size());
  return map;
}

}  // namespace densemarks
