#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "densemarks/canonical_grid.hpp"
#include "densemarks/image.hpp"
#include "densemarks/synthetic_heads.hpp"

namespace densemarks {

struct Correspondence {
  int32_t sx = -1, sy = -1;  // source pixel; -1 when the target is invalid
  float dist = std::numeric_limits<float>::infinity();
};

struct CorrespondenceField {
  int width = 0, height = 0;
  std::vector<Correspondence> cells;

  const Correspondence& at(int x, int y) const {
    return cells[size_t(y) * width + x];
  }
};

// Exact nearest-neighbor search over the valid pixels of a UVW map: uniform
// 3D binning with ring expansion. Result-identical to brute force, including
// the lowest-linear-index tie rule.
class NnIndex {
public:
  explicit NnIndex(const UvwMap& map, int bins_per_axis = 16);

  // (pixel linear index, squared distance); requires at least one valid pixel.
  std::pair<int32_t, double> nearest(Vec3 query) const;

  const UvwMap& map() const { return *map_; }

private:
  const UvwMap* map_;
  int bins_;
  double cell_;
  std::vector<int32_t> start_;  // CSR offsets, bins^3 + 1
  std::vector<int32_t> items_;  // pixel linear indices, ascending within a bin
};

// Brute-force oracle with the same tie rule.
std::pair<int32_t, double> nearest_brute(const UvwMap& map, Vec3 query);

// Dense target->source warp: each valid target pixel takes the color of the
// closest source embedding.
struct WarpResult {
  RgbImage warped;
  CorrespondenceField field;
};

WarpResult nn_warp(const UvwMap& source_map, const RgbImage& source_rgb,
                   const UvwMap& target_map);
CorrespondenceField nn_warp_brute(const UvwMap& source_map,
                                  const UvwMap& target_map);

// Mean of per-map canonical coordinates at annotated pixels, clamped to the
// cube.
CanonPoint query_point(
    const std::vector<std::pair<const UvwMap*, std::array<int, 2>>>& refs);

// Valid pixel whose embedding is closest to `ref` (same tie rule as nn_warp).
struct FindResult {
  int x = -1, y = -1;
  double dist = 0.0;
};

FindResult find_point(const UvwMap& map, CanonPoint ref);

// Axis-aligned box or ball region of the canonical cube.
struct RegionSpec {
  enum class Kind { box, ball };
  Kind kind = Kind::ball;
  Vec3 box_min, box_max;
  Vec3 center;
  double radius = 0.0;

  static RegionSpec make_box(Vec3 lo, Vec3 hi);
  static RegionSpec make_ball(Vec3 center, double radius);
  bool contains(Vec3 p) const;
};

// Bounding ball of annotated cluster points: center = mean, radius = 90th
// percentile (nearest-rank) of distances to the center.
RegionSpec region_from_votes(const std::vector<Vec3>& annotated);

Image<uint8_t> region_select(const UvwMap& map, const RegionSpec& region);

// Matching-quality protocol: for each ground-truth pair (a in target, b in
// source), the error is the pixel distance between the predicted match of a
// and b.
struct MatchMetrics {
  double mae = 0.0, rmse = 0.0;
  size_t points = 0;
};

MatchMetrics match_metrics(const CorrespondenceField& pred, const TrackPairs& gt);

// Brute-force K-dim feature matching for the direct-feature ablation.
std::pair<int32_t, double> nearest_brute_feat(const FeatureMap& map,
                                              const double* query);

// "DMCOR01": u32 W, H; per pixel i32 sx, sy (-1 invalid), f32 dist.
void write_field(const std::string& path, const CorrespondenceField& field);
CorrespondenceField read_field(const std::string& path);

}  // namespace densemarks
