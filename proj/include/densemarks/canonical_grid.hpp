#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densemarks/common.hpp"
#include "densemarks/linalg.hpp"

namespace densemarks {

// A point in the canonical unit cube.
struct CanonPoint {
  double u = 0.0, v = 0.0, w = 0.0;

  Vec3 as_vec() const { return {u, v, w}; }
  static CanonPoint from_vec(Vec3 p) { return {p.x, p.y, p.z}; }
};

using FeatureVec = std::vector<double>;

// Learnable latent features over an N^3 voxel grid covering the unit cube.
// `raw` holds the trainable values; `smoothed` is the fixed Gaussian filter
// of `raw` and is the tensor all queries read from. Cube coordinate c maps
// to voxel coordinate c*(N-1) (align-corners), so cube corners coincide with
// grid corners. Voxel (x,y,z) with x fastest lives at linear index
// ((z*N + y)*N + x); each voxel stores `feature_dim` contiguous values.
struct LatentGrid {
  int resolution = 0;   // N_d, voxels per axis
  int feature_dim = 0;  // D
  double sigma = 0.0;   // filter strength, in voxels
  std::vector<double> raw;
  std::vector<double> smoothed;

  size_t voxels() const {
    return size_t(resolution) * resolution * resolution;
  }
  size_t values() const { return voxels() * size_t(feature_dim); }
  size_t voxel_index(int x, int y, int z) const {
    return (size_t(z) * resolution + y) * resolution + x;
  }
};

// Fresh grid with raw ~ N(0,1) from the seeded generator; smoothed computed.
LatentGrid new_grid(int resolution, int feature_dim, double sigma, uint64_t seed);

// Truncated, renormalized 1D Gaussian kernel; empty center-only for sigma=0.
std::vector<double> gaussian_kernel(double sigma);

// Separable 3D Gaussian filter with clamp-to-edge boundaries, applied
// channel-independently over a grid-shaped buffer.
std::vector<double> smooth_values(const std::vector<double>& values,
                                  int resolution, int feature_dim, double sigma);

// Recomputes grid.smoothed from grid.raw. Call after every raw update.
void resmooth(LatentGrid& grid);

// Transpose of smooth_values as a linear map; pushes gradients w.r.t. the
// smoothed tensor back onto raw.
std::vector<double> smooth_transpose(const std::vector<double>& grad_smoothed,
                                     int resolution, int feature_dim,
                                     double sigma);

// The 8 voxel corners participating in a trilinear query.
struct TrilinearCell {
  std::array<size_t, 8> corner;  // voxel linear indices
  std::array<double, 8> weight;  // nonnegative, sums to 1
  // Weight derivatives w.r.t. cube coordinates (chain includes the (N-1)
  // voxel scaling).
  std::array<Vec3, 8> dweight;
};

TrilinearCell trilinear_cell(const LatentGrid& grid, CanonPoint p);

// Trilinear read of the smoothed tensor at a cube point.
FeatureVec query(const LatentGrid& grid, CanonPoint p);

struct QueryGrad {
  Vec3 point_grad;  // d(upstream . feature)/d(u,v,w)
  // Sparse gradients w.r.t. smoothed entries: (value linear index, value).
  std::vector<std::pair<size_t, double>> corner_grads;
};

QueryGrad query_grad(const LatentGrid& grid, CanonPoint p,
                     const FeatureVec& upstream);

// Checkpoint: magic "DMGRID01", u32 N, u32 D, f64 sigma, raw as f32 LE in
// x-fastest voxel order. smoothed is recomputed on load.
void save_grid(const std::string& path, const LatentGrid& grid);
LatentGrid load_grid(const std::string& path);

// Stream forms, for embedding the grid inside other checkpoints.
class BinWriter;
class BinReader;
void write_grid_stream(BinWriter& w, const LatentGrid& grid);
LatentGrid read_grid_stream(BinReader& r);

}  // namespace densemarks
