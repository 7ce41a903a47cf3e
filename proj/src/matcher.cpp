#include "densemarks/matcher.hpp"

#include <algorithm>
#include <cmath>

#include "densemarks/binary_io.hpp"

namespace densemarks {

namespace {

inline double dist2(Vec3 a, Vec3 b) {
  double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

inline int clamp_bin(double c, int bins) {
  int b = int(c);
  if (b < 0) return 0;
  if (b >= bins) return bins - 1;
  return b;
}

}  // namespace

NnIndex::NnIndex(const UvwMap& map, int bins_per_axis)
    : map_(&map), bins_(bins_per_axis), cell_(1.0 / bins_per_axis) {
  if (bins_ < 1) fail(ErrorKind::argument, "bins_per_axis must be >= 1");
  size_t nbins = size_t(bins_) * bins_ * bins_;
  std::vector<int32_t> counts(nbins, 0);
  auto bin_of = [&](Vec3 p) {
    int bx = clamp_bin(p.x / cell_, bins_);
    int by = clamp_bin(p.y / cell_, bins_);
    int bz = clamp_bin(p.z / cell_, bins_);
    return (size_t(bz) * bins_ + by) * bins_ + bx;
  };
  size_t n = map.pixels();
  size_t valid_count = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!map.valid[i]) continue;
    ++counts[bin_of(map.uvw[i])];
    ++valid_count;
  }
  if (valid_count == 0)
    fail(ErrorKind::argument, "nearest-neighbor index over an empty foreground");
  start_.assign(nbins + 1, 0);
  for (size_t b = 0; b < nbins; ++b) start_[b + 1] = start_[b] + counts[b];
  items_.resize(valid_count);
  std::vector<int32_t> cursor(start_.begin(), start_.end() - 1);
  for (size_t i = 0; i < n; ++i) {
    if (!map.valid[i]) continue;
    items_[size_t(cursor[bin_of(map.uvw[i])]++)] = int32_t(i);
  }
  // Scan order fills items ascending per bin, which the tie rule relies on.
}

std::pair<int32_t, double> NnIndex::nearest(Vec3 query) const {
  const UvwMap& m = *map_;
  int qx = clamp_bin(query.x / cell_, bins_);
  int qy = clamp_bin(query.y / cell_, bins_);
  int qz = clamp_bin(query.z / cell_, bins_);
  int32_t best_idx = -1;
  double best_d2 = std::numeric_limits<double>::infinity();

  auto scan_bin = [&](int bx, int by, int bz) {
    size_t b = (size_t(bz) * bins_ + by) * bins_ + bx;
    for (int32_t k = start_[b]; k < start_[b + 1]; ++k) {
      int32_t i = items_[size_t(k)];
      double d2 = dist2(m.uvw[size_t(i)], query);
      if (d2 < best_d2 || (d2 == best_d2 && i < best_idx)) {
        best_d2 = d2;
        best_idx = i;
      }
    }
  };

  for (int ring = 0; ring < bins_; ++ring) {
    // Any cell at Chebyshev ring r is at least (r-1)*cell away from a query
    // inside the center cell, so the search can stop once that bound
    // strictly exceeds the best hit (equality must keep scanning so the
    // lowest-index tie rule matches brute force).
    if (best_idx >= 0) {
      double lower = (ring - 1) * cell_;
      if (lower > 0.0 && best_d2 < lower * lower) break;
    }
    int x0 = qx - ring, x1 = qx + ring;
    int y0 = qy - ring, y1 = qy + ring;
    int z0 = qz - ring, z1 = qz + ring;
    bool any = false;
    for (int bz = std::max(0, z0); bz <= std::min(bins_ - 1, z1); ++bz) {
      for (int by = std::max(0, y0); by <= std::min(bins_ - 1, y1); ++by) {
        for (int bx = std::max(0, x0); bx <= std::min(bins_ - 1, x1); ++bx) {
          bool on_shell = bx == x0 || bx == x1 || by == y0 || by == y1 ||
                          bz == z0 || bz == z1;
          if (!on_shell) continue;
          any = true;
          scan_bin(bx, by, bz);
        }
      }
    }
    if (!any && best_idx >= 0) break;
  }
  return {best_idx, best_d2};
}

std::pair<int32_t, double> nearest_brute(const UvwMap& map, Vec3 query) {
  int32_t best_idx = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  size_t n = map.pixels();
  for (size_t i = 0; i < n; ++i) {
    if (!map.valid[i]) continue;
    double d2 = dist2(map.uvw[i], query);
    if (d2 < best_d2 || (d2 == best_d2 && int32_t(i) < best_idx)) {
      best_d2 = d2;
      best_idx = int32_t(i);
    }
  }
  if (best_idx < 0) fail(ErrorKind::argument, "empty source foreground");
  return {best_idx, best_d2};
}

WarpResult nn_warp(const UvwMap& source_map, const RgbImage& source_rgb,
                   const UvwMap& target_map) {
  if (source_rgb.width != source_map.width || source_rgb.height != source_map.height)
    fail(ErrorKind::argument, "source image/map dimension mismatch");
  NnIndex index(source_map);
  WarpResult out;
  out.warped = RgbImage(target_map.width, target_map.height);
  out.field.width = target_map.width;
  out.field.height = target_map.height;
  out.field.cells.resize(target_map.pixels());
  for (int y = 0; y < target_map.height; ++y) {
    for (int x = 0; x < target_map.width; ++x) {
      size_t ti = target_map.idx(x, y);
      if (!target_map.valid[ti]) continue;
      auto [idx, d2] = index.nearest(target_map.uvw[ti]);
      Correspondence c;
      c.sx = idx % source_map.width;
      c.sy = idx / source_map.width;
      c.dist = float(std::sqrt(d2));
      out.field.cells[ti] = c;
      const float* src = source_rgb.px(c.sx, c.sy);
      float* dst = out.warped.px(x, y);
      for (int k = 0; k < 3; ++k) dst[k] = src[k];
    }
  }
  return out;
}

CorrespondenceField nn_warp_brute(const UvwMap& source_map,
                                  const UvwMap& target_map) {
  CorrespondenceField field;
  field.width = target_map.width;
  field.height = target_map.height;
  field.cells.resize(target_map.pixels());
  for (size_t ti = 0; ti < target_map.pixels(); ++ti) {
    if (!target_map.valid[ti]) continue;
    auto [idx, d2] = nearest_brute(source_map, target_map.uvw[ti]);
    Correspondence c;
    c.sx = idx % source_map.width;
    c.sy = idx / source_map.width;
    c.dist = float(std::sqrt(d2));
    field.cells[ti] = c;
  }
  return field;
}

CanonPoint query_point(
    const std::vector<std::pair<const UvwMap*, std::array<int, 2>>>& refs) {
  if (refs.empty()) fail(ErrorKind::argument, "query_point needs annotations");
  Vec3 acc;
  for (const auto& [map, px] : refs) {
    if (!map->in_bounds(px[0], px[1]) || !map->valid[map->idx(px[0], px[1])])
      fail(ErrorKind::argument, "annotated pixel is not valid in its map");
    acc += map->uvw[map->idx(px[0], px[1])];
  }
  acc = (1.0 / double(refs.size())) * acc;
  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  return {clamp01(acc.x), clamp01(acc.y), clamp01(acc.z)};
}

FindResult find_point(const UvwMap& map, CanonPoint ref) {
  NnIndex index(map);
  auto [idx, d2] = index.nearest(ref.as_vec());
  return {int(idx % map.width), int(idx / map.width), std::sqrt(d2)};
}

RegionSpec RegionSpec::make_box(Vec3 lo, Vec3 hi) {
  for (int c = 0; c < 3; ++c)
    if (lo[c] < 0.0 || hi[c] > 1.0 || lo[c] > hi[c])
      fail(ErrorKind::argument, "box region must lie inside the unit cube");
  RegionSpec r;
  r.kind = Kind::box;
  r.box_min = lo;
  r.box_max = hi;
  return r;
}

RegionSpec RegionSpec::make_ball(Vec3 center, double radius) {
  for (int c = 0; c < 3; ++c)
    if (center[c] < 0.0 || center[c] > 1.0)
      fail(ErrorKind::argument, "ball center must lie inside the unit cube");
  if (radius < 0.0) fail(ErrorKind::argument, "ball radius must be >= 0");
  RegionSpec r;
  r.kind = Kind::ball;
  r.center = center;
  // Only the intersection with the cube is ever selectable; embeddings live
  // inside it.
  r.radius = radius;
  return r;
}

bool RegionSpec::contains(Vec3 p) const {
  if (kind == Kind::box) {
    for (int c = 0; c < 3; ++c)
      if (p[c] < box_min[c] || p[c] > box_max[c]) return false;
    return true;
  }
  return dist2(p, center) <= radius * radius;
}

RegionSpec region_from_votes(const std::vector<Vec3>& annotated) {
  if (annotated.empty()) fail(ErrorKind::argument, "no annotated points");
  Vec3 mean;
  for (Vec3 p : annotated) mean += p;
  mean = (1.0 / double(annotated.size())) * mean;
  std::vector<double> d(annotated.size());
  for (size_t i = 0; i < annotated.size(); ++i)
    d[i] = std::sqrt(dist2(annotated[i], mean));
  std::sort(d.begin(), d.end());
  // Nearest-rank 90th percentile.
  size_t rank = size_t(std::ceil(0.9 * double(d.size())));
  double radius = d[std::min(d.size() - 1, rank == 0 ? 0 : rank - 1)];
  auto clamp01 = [](double v) { return std::min(1.0, std::max(0.0, v)); };
  return RegionSpec::make_ball({clamp01(mean.x), clamp01(mean.y), clamp01(mean.z)},
                               radius);
}

Image<uint8_t> region_select(const UvwMap& map, const RegionSpec& region) {
  Image<uint8_t> mask(map.width, map.height, 0);
  for (int y = 0; y < map.height; ++y)
    for (int x = 0; x < map.width; ++x) {
      size_t i = map.idx(x, y);
      if (map.valid[i] && region.contains(map.uvw[i])) mask.at(x, y) = 255;
    }
  return mask;
}

MatchMetrics match_metrics(const CorrespondenceField& pred, const TrackPairs& gt) {
  MatchMetrics m;
  double sum = 0.0, sum_sq = 0.0;
  for (size_t k = 0; k < gt.count(); ++k) {
    auto a = gt.a[k], b = gt.b[k];
    if (a[0] < 0 || a[1] < 0 || a[0] >= pred.width || a[1] >= pred.height)
      fail(ErrorKind::argument, "ground-truth pixel outside the field");
    const Correspondence& c = pred.at(a[0], a[1]);
    if (c.sx < 0) fail(ErrorKind::argument, "ground-truth pixel has no match");
    double dx = double(c.sx) - b[0], dy = double(c.sy) - b[1];
    double e = std::sqrt(dx * dx + dy * dy);
    sum += e;
    sum_sq += e * e;
    ++m.points;
  }
  if (m.points == 0) fail(ErrorKind::argument, "no ground-truth pairs");
  m.mae = sum / double(m.points);
  m.rmse = std::sqrt(sum_sq / double(m.points));
  return m;
}

std::pair<int32_t, double> nearest_brute_feat(const FeatureMap& map,
                                              const double* query) {
  int32_t best_idx = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  size_t n = size_t(map.width) * map.height;
  for (size_t i = 0; i < n; ++i) {
    if (!map.valid[i]) continue;
    const double* f = &map.feat[i * size_t(map.dim)];
    double d2 = 0.0;
    for (int k = 0; k < map.dim; ++k) {
      double d = f[k] - query[k];
      d2 += d * d;
    }
    if (d2 < best_d2 || (d2 == best_d2 && int32_t(i) < best_idx)) {
      best_d2 = d2;
      best_idx = int32_t(i);
    }
  }
  if (best_idx < 0) fail(ErrorKind::argument, "empty source foreground");
  return {best_idx, best_d2};
}

void write_field(const std::string& path, const CorrespondenceField& field) {
  BinWriter w(path);
  w.magic("DMCOR01");
  w.u32(uint32_t(field.width));
  w.u32(uint32_t(field.height));
  for (const Correspondence& c : field.cells) {
    w.i32(c.sx);
    w.i32(c.sy);
    w.f32(c.sx < 0 ? 0.0f : c.dist);
  }
  w.close();
}

CorrespondenceField read_field(const std::string& path) {
  BinReader r(path);
  r.magic("DMCOR01");
  CorrespondenceField f;
  f.width = int(r.u32());
  f.height = int(r.u32());
  if (f.width <= 0 || f.height <= 0 || f.width > (1 << 20) || f.height > (1 << 20))
    r.parse_fail("implausible dimensions");
  f.cells.resize(size_t(f.width) * f.height);
  for (Correspondence& c : f.cells) {
    c.sx = r.i32();
    c.sy = r.i32();
    c.dist = r.f32();
    if (c.sx < 0) c.dist = std::numeric_limits<float>::infinity();
  }
  return f;
}

}  // namespace densemarks
