#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "densemarks/binary_io.hpp"
#include "densemarks/canonical_grid.hpp"
#include "densemarks/rng.hpp"

using namespace densemarks;

namespace {

// Brute-force (non-separable) 3D Gaussian convolution with clamp-to-edge
// boundaries; the oracle for the separable implementation.
std::vector<double> brute_gaussian_3d(const std::vector<double>& src, int n,
                                      int d, double sigma) {
  std::vector<double> kernel = gaussian_kernel(sigma);
  int radius = int(kernel.size() / 2);
  std::vector<double> dst(src.size(), 0.0);
  auto clamp = [&](int v) { return std::min(n - 1, std::max(0, v)); };
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        for (int c = 0; c < d; ++c) {
          double acc = 0.0;
          for (int kz = -radius; kz <= radius; ++kz)
            for (int ky = -radius; ky <= radius; ++ky)
              for (int kx = -radius; kx <= radius; ++kx) {
                double w = kernel[size_t(kx + radius)] *
                           kernel[size_t(ky + radius)] *
                           kernel[size_t(kz + radius)];
                size_t idx =
                    ((size_t(clamp(z + kz)) * n + clamp(y + ky)) * n +
                     clamp(x + kx)) *
                        d +
                    size_t(c);
                acc += w * src[idx];
              }
          dst[((size_t(z) * n + y) * n + x) * d + size_t(c)] = acc;
        }
  return dst;
}

double dot_all(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("new_grid: sigma=0 identity and determinism") {
  LatentGrid g = new_grid(2, 1, 0.0, 7);
  CHECK(g.raw.size() == 8);
  for (size_t i = 0; i < g.raw.size(); ++i) CHECK(g.smoothed[i] == g.raw[i]);

  LatentGrid g2 = new_grid(2, 1, 0.0, 7);
  CHECK(g.raw == g2.raw);
  CHECK(g.smoothed == g2.smoothed);
}

TEST_CASE("new_grid: standard normal statistics over 524288 draws") {
  LatentGrid g = new_grid(32, 16, 1.0, 0);
  double sum = 0.0, sum_sq = 0.0;
  for (double v : g.raw) {
    sum += v;
    sum_sq += v * v;
  }
  double n = double(g.raw.size());
  double mean = sum / n;
  double stddev = std::sqrt(sum_sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(stddev - 1.0) < 0.02);
}

TEST_CASE("new_grid: argument validation") {
  CHECK_THROWS_AS(new_grid(1, 4, 1.0, 0), Error);
  CHECK_THROWS_AS(new_grid(4, 0, 1.0, 0), Error);
  CHECK_THROWS_AS(new_grid(4, 4, -0.5, 0), Error);
}

TEST_CASE("smooth: constants preserved, impulse matches brute force") {
  const int n = 9, d = 2;
  SUBCASE("constant field") {
    std::vector<double> c(size_t(n) * n * n * d);
    for (size_t i = 0; i < c.size(); ++i) c[i] = i % 2 ? 3.5 : -1.25;
    std::vector<double> s = smooth_values(c, n, d, 1.7);
    for (size_t i = 0; i < c.size(); ++i)
      CHECK(s[i] == doctest::Approx(c[i]).epsilon(1e-13));
  }
  SUBCASE("unit impulse vs triple-loop oracle") {
    std::vector<double> f(size_t(n) * n * n, 0.0);
    f[(size_t(4) * n + 4) * n + 4] = 1.0;
    std::vector<double> fast = smooth_values(f, n, 1, 1.0);
    std::vector<double> slow = brute_gaussian_3d(f, n, 1, 1.0);
    for (size_t i = 0; i < f.size(); ++i)
      CHECK(std::abs(fast[i] - slow[i]) < 1e-12);
  }
  SUBCASE("random field vs oracle, boundary included") {
    Rng rng(3);
    std::vector<double> f(size_t(n) * n * n * d);
    for (double& v : f) v = rng.normal();
    std::vector<double> fast = smooth_values(f, n, d, 0.8);
    std::vector<double> slow = brute_gaussian_3d(f, n, d, 0.8);
    for (size_t i = 0; i < f.size(); ++i)
      CHECK(std::abs(fast[i] - slow[i]) < 1e-12);
  }
}

TEST_CASE("smooth: linearity") {
  const int n = 6, d = 3;
  Rng rng(11);
  std::vector<double> a(size_t(n) * n * n * d), b(a.size());
  for (double& v : a) v = rng.normal();
  for (double& v : b) v = rng.normal();
  double ca = 1.7, cb = -0.4;
  std::vector<double> mix(a.size());
  for (size_t i = 0; i < a.size(); ++i) mix[i] = ca * a[i] + cb * b[i];
  std::vector<double> lhs = smooth_values(mix, n, d, 1.2);
  std::vector<double> sa = smooth_values(a, n, d, 1.2);
  std::vector<double> sb = smooth_values(b, n, d, 1.2);
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(lhs[i] - (ca * sa[i] + cb * sb[i])) < 1e-12);
}

TEST_CASE("smooth transpose: adjoint identity <g, S x> == <S^T g, x>") {
  const int n = 7, d = 2;
  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> x(size_t(n) * n * n * d), g(x.size());
    for (double& v : x) v = rng.normal();
    for (double& v : g) v = rng.normal();
    double sigma = 0.5 + 0.4 * rep;
    double lhs = dot_all(g, smooth_values(x, n, d, sigma));
    double rhs = dot_all(smooth_transpose(g, n, d, sigma), x);
    CHECK(std::abs(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("query: corner, cell center, multilinear exactness") {
  SUBCASE("corners are exact") {
    LatentGrid g = new_grid(4, 3, 0.0, 5);
    FeatureVec f = query(g, {0.0, 0.0, 0.0});
    for (int c = 0; c < 3; ++c) CHECK(f[size_t(c)] == g.smoothed[size_t(c)]);
    FeatureVec f2 = query(g, {1.0, 1.0, 1.0});
    size_t last = g.voxel_index(3, 3, 3) * 3;
    for (int c = 0; c < 3; ++c) CHECK(f2[size_t(c)] == g.smoothed[last + c]);
  }
  SUBCASE("cell center is the mean of 8 corners") {
    LatentGrid g = new_grid(3, 2, 0.0, 9);
    CanonPoint center{0.25, 0.25, 0.25};  // voxel coords (0.5, 0.5, 0.5)
    FeatureVec f = query(g, center);
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            mean += g.smoothed[g.voxel_index(dx, dy, dz) * 2 + size_t(c)];
      mean /= 8.0;
      CHECK(f[size_t(c)] == doctest::Approx(mean).epsilon(1e-14));
    }
  }
  SUBCASE("trilinear reproduces f(x,y,z) = x + 2y + 3z exactly") {
    const int n = 5;
    LatentGrid g;
    g.resolution = n;
    g.feature_dim = 1;
    g.sigma = 0.0;
    g.raw.resize(g.values());
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          g.raw[g.voxel_index(x, y, z)] = x + 2.0 * y + 3.0 * z;
    resmooth(g);
    CanonPoint p{0.25, 0.5, 0.75};
    double expect = 0.25 * (n - 1) + 2.0 * 0.5 * (n - 1) + 3.0 * 0.75 * (n - 1);
    CHECK(query(g, p)[0] == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("out-of-cube rejected") {
    LatentGrid g = new_grid(4, 1, 0.0, 1);
    CHECK_THROWS_AS(query(g, {1.0001, 0.5, 0.5}), Error);
    CHECK_THROWS_AS(query(g, {0.5, -0.0001, 0.5}), Error);
  }
}

TEST_CASE("trilinear weights: nonnegative, sum to 1 over 10k random points") {
  LatentGrid g = new_grid(8, 1, 0.0, 2);
  Rng rng(77);
  for (int i = 0; i < 10000; ++i) {
    CanonPoint p{rng.uniform(), rng.uniform(), rng.uniform()};
    TrilinearCell cell = trilinear_cell(g, p);
    double sum = 0.0;
    for (double w : cell.weight) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("query is Lipschitz within a cell") {
  LatentGrid g = new_grid(6, 4, 1.0, 13);
  // A safe cell-local Lipschitz bound: per axis the interpolant changes by at
  // most (N-1) times the maximum corner spread.
  double max_abs = 0.0;
  for (double v : g.smoothed) max_abs = std::max(max_abs, std::abs(v));
  double lip = 3.0 * (g.resolution - 1) * 2.0 * max_abs;
  Rng rng(31);
  CanonPoint base{0.31, 0.42, 0.55};
  FeatureVec f0 = query(g, base);
  for (int i = 0; i < 500; ++i) {
    CanonPoint q{base.u + rng.uniform(-0.01, 0.01),
                 base.v + rng.uniform(-0.01, 0.01),
                 base.w + rng.uniform(-0.01, 0.01)};
    FeatureVec f1 = query(g, q);
    double df = 0.0;
    for (size_t c = 0; c < f0.size(); ++c)
      df = std::max(df, std::abs(f1[c] - f0[c]));
    double dp = std::max({std::abs(q.u - base.u), std::abs(q.v - base.v),
                          std::abs(q.w - base.w)});
    CHECK(df <= lip * dp + 1e-12);
  }
}

TEST_CASE("query_grad: constant grid, corner concentration, finite differences") {
  SUBCASE("constant grid has zero point gradient") {
    LatentGrid g;
    g.resolution = 4;
    g.feature_dim = 2;
    g.sigma = 0.0;
    g.raw.assign(size_t(4 * 4 * 4 * 2), 2.5);
    resmooth(g);
    QueryGrad qg = query_grad(g, {0.3, 0.6, 0.9}, {1.0, -2.0});
    CHECK(std::abs(qg.point_grad.x) < 1e-12);
    CHECK(std::abs(qg.point_grad.y) < 1e-12);
    CHECK(std::abs(qg.point_grad.z) < 1e-12);
  }
  SUBCASE("exact corner concentrates weight 1") {
    LatentGrid g = new_grid(4, 1, 0.0, 3);
    QueryGrad qg = query_grad(g, {0.0, 0.0, 0.0}, {1.0});
    double w_corner = 0.0, w_other = 0.0;
    for (auto& [idx, val] : qg.corner_grads) {
      if (idx == 0)
        w_corner += val;
      else
        w_other += std::abs(val);
    }
    CHECK(w_corner == doctest::Approx(1.0));
    CHECK(w_other == doctest::Approx(0.0));
  }
  SUBCASE("point gradient matches central differences") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
      LatentGrid g = new_grid(5, 3, rep % 2 ? 1.0 : 0.0, uint64_t(rep));
      CanonPoint p{rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                   rng.uniform(0.05, 0.95)};
      FeatureVec up(3);
      for (double& v : up) v = rng.normal();
      QueryGrad qg = query_grad(g, p, up);
      const double h = 1e-5;
      for (int axis = 0; axis < 3; ++axis) {
        CanonPoint pp = p, pm = p;
        (axis == 0 ? pp.u : axis == 1 ? pp.v : pp.w) += h;
        (axis == 0 ? pm.u : axis == 1 ? pm.v : pm.w) -= h;
        FeatureVec fp = query(g, pp), fm = query(g, pm);
        double num = 0.0;
        for (size_t c = 0; c < up.size(); ++c) num += up[c] * (fp[c] - fm[c]);
        num /= 2.0 * h;
        double ana = qg.point_grad[axis];
        double rel = std::abs(num - ana) / std::max(1e-9, std::abs(ana));
        CHECK(rel < 1e-6);
      }
    }
  }
}

TEST_CASE("checkpoint round trip recomputes smoothed bit-identically") {
  LatentGrid g = new_grid(6, 4, 1.3, 99);
  std::string path =
      (std::filesystem::temp_directory_path() / "dm_test_grid.bin").string();
  save_grid(path, g);
  LatentGrid loaded = load_grid(path);
  CHECK(loaded.resolution == g.resolution);
  CHECK(loaded.feature_dim == g.feature_dim);
  CHECK(loaded.sigma == g.sigma);
  for (size_t i = 0; i < g.raw.size(); ++i)
    CHECK(loaded.raw[i] == double(float(g.raw[i])));
  LatentGrid again = loaded;
  resmooth(again);
  CHECK(again.smoothed == loaded.smoothed);
  std::filesystem::remove(path);
}
