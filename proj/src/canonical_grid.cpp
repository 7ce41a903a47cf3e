#include "densemarks/canonical_grid.hpp"

#include <cmath>

#include "densemarks/binary_io.hpp"
#include "densemarks/rng.hpp"

namespace densemarks {

LatentGrid new_grid(int resolution, int feature_dim, double sigma, uint64_t seed) {
  if (resolution < 2) fail(ErrorKind::argument, "grid resolution must be >= 2");
  if (feature_dim < 1) fail(ErrorKind::argument, "grid feature_dim must be >= 1");
  if (sigma < 0.0) fail(ErrorKind::argument, "grid sigma must be >= 0");
  LatentGrid g;
  g.resolution = resolution;
  g.feature_dim = feature_dim;
  g.sigma = sigma;
  g.raw.resize(g.values());
  Rng rng(seed);
  for (double& v : g.raw) v = rng.normal();
  resmooth(g);
  return g;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (sigma < 0.0) fail(ErrorKind::argument, "sigma must be >= 0");
  if (sigma == 0.0) return {1.0};
  int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(size_t(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
    k[size_t(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

// One clamp-to-edge 1D pass along the given axis (0=x, 1=y, 2=z).
void axis_pass(const std::vector<double>& src, std::vector<double>& dst, int n,
               int d, int axis, const std::vector<double>& kernel) {
  int radius = int(kernel.size() / 2);
  size_t stride_axis;
  switch (axis) {
    case 0: stride_axis = size_t(d); break;
    case 1: stride_axis = size_t(d) * n; break;
    default: stride_axis = size_t(d) * n * n; break;
  }
  // Iterate voxels; for each, gather along the axis with clamping.
  for (int z = 0; z < n; ++z) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        int pos = axis == 0 ? x : (axis == 1 ? y : z);
        size_t base = ((size_t(z) * n + y) * n + x) * d;
        size_t line_start = base - size_t(pos) * stride_axis;
        for (int c = 0; c < d; ++c) {
          double acc = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            int q = pos + t;
            if (q < 0) q = 0;
            if (q >= n) q = n - 1;
            acc += kernel[size_t(t + radius)] *
                   src[line_start + size_t(q) * stride_axis + c];
          }
          dst[base + c] = acc;
        }
      }
    }
  }
}

// Transpose of axis_pass: scatter instead of gather.
void axis_pass_transpose(const std::vector<double>& src, std::vector<double>& dst,
                         int n, int d, int axis,
                         const std::vector<double>& kernel) {
  int radius = int(kernel.size() / 2);
  size_t stride_axis;
  switch (axis) {
    case 0: stride_axis = size_t(d); break;
    case 1: stride_axis = size_t(d) * n; break;
    default: stride_axis = size_t(d) * n * n; break;
  }
  std::fill(dst.begin(), dst.end(), 0.0);
  for (int z = 0; z < n; ++z) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        int pos = axis == 0 ? x : (axis == 1 ? y : z);
        size_t base = ((size_t(z) * n + y) * n + x) * d;
        size_t line_start = base - size_t(pos) * stride_axis;
        for (int c = 0; c < d; ++c) {
          double g = src[base + c];
          if (g == 0.0) continue;
          for (int t = -radius; t <= radius; ++t) {
            int q = pos + t;
            if (q < 0) q = 0;
            if (q >= n) q = n - 1;
            dst[line_start + size_t(q) * stride_axis + c] +=
                kernel[size_t(t + radius)] * g;
          }
        }
      }
    }
  }
}

}  // namespace

std::vector<double> smooth_values(const std::vector<double>& values,
                                  int resolution, int feature_dim, double sigma) {
  if (sigma == 0.0) return values;
  std::vector<double> kernel = gaussian_kernel(sigma);
  std::vector<double> a = values;
  std::vector<double> b(values.size());
  axis_pass(a, b, resolution, feature_dim, 0, kernel);
  axis_pass(b, a, resolution, feature_dim, 1, kernel);
  axis_pass(a, b, resolution, feature_dim, 2, kernel);
  return b;
}

void resmooth(LatentGrid& grid) {
  grid.smoothed = smooth_values(grid.raw, grid.resolution, grid.feature_dim,
                                grid.sigma);
  if (!all_finite(grid.smoothed.data(), grid.smoothed.size()))
    fail(ErrorKind::numerical, "grid contains non-finite values");
}

std::vector<double> smooth_transpose(const std::vector<double>& grad_smoothed,
                                     int resolution, int feature_dim,
                                     double sigma) {
  if (sigma == 0.0) return grad_smoothed;
  std::vector<double> kernel = gaussian_kernel(sigma);
  // Reverse order of the forward passes: x, y, z gather becomes z, y, x scatter.
  std::vector<double> a(grad_smoothed.size());
  std::vector<double> b(grad_smoothed.size());
  axis_pass_transpose(grad_smoothed, a, resolution, feature_dim, 2, kernel);
  axis_pass_transpose(a, b, resolution, feature_dim, 1, kernel);
  axis_pass_transpose(b, a, resolution, feature_dim, 0, kernel);
  return a;
}

TrilinearCell trilinear_cell(const LatentGrid& grid, CanonPoint p) {
  if (p.u < 0.0 || p.u > 1.0 || p.v < 0.0 || p.v > 1.0 || p.w < 0.0 || p.w > 1.0)
    fail(ErrorKind::range, "query point outside the unit cube");
  int n = grid.resolution;
  double scale = double(n - 1);
  double tu = p.u * scale, tv = p.v * scale, tw = p.w * scale;
  int ix = std::min(int(tu), n - 2);
  int iy = std::min(int(tv), n - 2);
  int iz = std::min(int(tw), n - 2);
  double fx = tu - ix, fy = tv - iy, fz = tw - iz;

  TrilinearCell cell;
  for (int corner = 0; corner < 8; ++corner) {
    int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
    cell.corner[size_t(corner)] = grid.voxel_index(ix + dx, iy + dy, iz + dz);
    double wx = dx ? fx : 1.0 - fx;
    double wy = dy ? fy : 1.0 - fy;
    double wz = dz ? fz : 1.0 - fz;
    cell.weight[size_t(corner)] = wx * wy * wz;
    double gx = dx ? 1.0 : -1.0;
    double gy = dy ? 1.0 : -1.0;
    double gz = dz ? 1.0 : -1.0;
    cell.dweight[size_t(corner)] = {gx * wy * wz * scale,
                                    wx * gy * wz * scale,
                                    wx * wy * gz * scale};
  }
  return cell;
}

FeatureVec query(const LatentGrid& grid, CanonPoint p) {
  TrilinearCell cell = trilinear_cell(grid, p);
  FeatureVec out(size_t(grid.feature_dim), 0.0);
  for (int c = 0; c < 8; ++c) {
    const double* f = &grid.smoothed[cell.corner[size_t(c)] * grid.feature_dim];
    double w = cell.weight[size_t(c)];
    for (int d = 0; d < grid.feature_dim; ++d) out[size_t(d)] += w * f[d];
  }
  return out;
}

QueryGrad query_grad(const LatentGrid& grid, CanonPoint p,
                     const FeatureVec& upstream) {
  if (int(upstream.size()) != grid.feature_dim)
    fail(ErrorKind::argument, "upstream dimension mismatch");
  TrilinearCell cell = trilinear_cell(grid, p);
  QueryGrad g;
  g.corner_grads.reserve(8 * size_t(grid.feature_dim));
  for (int c = 0; c < 8; ++c) {
    const double* f = &grid.smoothed[cell.corner[size_t(c)] * grid.feature_dim];
    double uf = 0.0;
    for (int d = 0; d < grid.feature_dim; ++d) uf += upstream[size_t(d)] * f[d];
    g.point_grad += uf * cell.dweight[size_t(c)];
    double w = cell.weight[size_t(c)];
    size_t base = cell.corner[size_t(c)] * grid.feature_dim;
    for (int d = 0; d < grid.feature_dim; ++d)
      g.corner_grads.emplace_back(base + size_t(d), w * upstream[size_t(d)]);
  }
  return g;
}

void write_grid_stream(BinWriter& w, const LatentGrid& grid) {
  w.magic("DMGRID01");
  w.u32(uint32_t(grid.resolution));
  w.u32(uint32_t(grid.feature_dim));
  w.f64(grid.sigma);
  for (double v : grid.raw) w.f32(float(v));
}

LatentGrid read_grid_stream(BinReader& r) {
  r.magic("DMGRID01");
  LatentGrid g;
  g.resolution = int(r.u32());
  g.feature_dim = int(r.u32());
  g.sigma = r.f64();
  if (g.resolution < 2 || g.resolution > 1024 || g.feature_dim < 1 ||
      g.feature_dim > 4096 || !(g.sigma >= 0.0))
    r.parse_fail("implausible grid header");
  g.raw.resize(g.values());
  for (double& v : g.raw) v = r.f32();
  resmooth(g);
  return g;
}

void save_grid(const std::string& path, const LatentGrid& grid) {
  BinWriter w(path);
  write_grid_stream(w, grid);
  w.close();
}

LatentGrid load_grid(const std::string& path) {
  BinReader r(path);
  return read_grid_stream(r);
}

}  // namespace densemarks
