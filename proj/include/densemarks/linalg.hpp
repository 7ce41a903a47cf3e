#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "densemarks/common.hpp"

namespace densemarks {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double norm(Vec2 a) { return std::sqrt(a.x * a.x + a.y * a.y); }

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return (&x)[i]; }
  double operator[](int i) const { return (&x)[i]; }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 operator*(Vec3 a, double s) { return s * a; }
inline Vec3& operator+=(Vec3& a, Vec3 b) { a = a + b; return a; }
inline Vec3& operator-=(Vec3& a, Vec3 b) { a = a - b; return a; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(Vec3 a) {
  double n = norm(a);
  if (n == 0.0) fail(ErrorKind::numerical, "cannot normalize zero vector");
  return (1.0 / n) * a;
}
inline double linf(Vec3 a) {
  return std::max(std::abs(a.x), std::max(std::abs(a.y), std::abs(a.z)));
}

// Row-major 3x3 matrix.
struct Mat3 {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  double& operator()(int r, int c) { return m[3 * r + c]; }
  double operator()(int r, int c) const { return m[3 * r + c]; }

  static Mat3 identity() { return Mat3{}; }
};

inline Vec3 operator*(const Mat3& a, Vec3 v) {
  return {a.m[0] * v.x + a.m[1] * v.y + a.m[2] * v.z,
          a.m[3] * v.x + a.m[4] * v.y + a.m[5] * v.z,
          a.m[6] * v.x + a.m[7] * v.y + a.m[8] * v.z};
}

inline Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      r(i, j) = s;
    }
  return r;
}

inline Mat3 transpose(const Mat3& a) {
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r(i, j) = a(j, i);
  return r;
}

inline double det(const Mat3& a) {
  return a.m[0] * (a.m[4] * a.m[8] - a.m[5] * a.m[7]) -
         a.m[1] * (a.m[3] * a.m[8] - a.m[5] * a.m[6]) +
         a.m[2] * (a.m[3] * a.m[7] - a.m[4] * a.m[6]);
}

// Rodrigues: axis-angle vector (angle = |aa|) to rotation matrix.
inline Mat3 axis_angle_to_matrix(Vec3 aa) {
  double theta = norm(aa);
  Mat3 r;
  if (theta < 1e-12) {
    // First-order expansion keeps small-angle derivatives smooth.
    r.m[0] = 1;      r.m[1] = -aa.z;  r.m[2] = aa.y;
    r.m[3] = aa.z;   r.m[4] = 1;      r.m[5] = -aa.x;
    r.m[6] = -aa.y;  r.m[7] = aa.x;   r.m[8] = 1;
    return r;
  }
  Vec3 k = (1.0 / theta) * aa;
  double c = std::cos(theta), s = std::sin(theta), t = 1.0 - c;
  r.m[0] = c + k.x * k.x * t;
  r.m[1] = k.x * k.y * t - k.z * s;
  r.m[2] = k.x * k.z * t + k.y * s;
  r.m[3] = k.y * k.x * t + k.z * s;
  r.m[4] = c + k.y * k.y * t;
  r.m[5] = k.y * k.z * t - k.x * s;
  r.m[6] = k.z * k.x * t - k.y * s;
  r.m[7] = k.z * k.y * t + k.x * s;
  r.m[8] = c + k.z * k.z * t;
  return r;
}

inline Vec3 matrix_to_axis_angle(const Mat3& r) {
  double tr = r.m[0] + r.m[4] + r.m[8];
  double c = std::min(1.0, std::max(-1.0, (tr - 1.0) * 0.5));
  double theta = std::acos(c);
  Vec3 w{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  double s = norm(w);
  if (theta < 1e-9) return 0.5 * w;
  if (s < 1e-9) {
    // theta near pi: recover axis from the symmetric part.
    Vec3 axis{std::sqrt(std::max(0.0, (r(0, 0) + 1.0) * 0.5)),
              std::sqrt(std::max(0.0, (r(1, 1) + 1.0) * 0.5)),
              std::sqrt(std::max(0.0, (r(2, 2) + 1.0) * 0.5))};
    if (r(0, 1) + r(1, 0) < 0) axis.y = -axis.y;
    if (r(0, 2) + r(2, 0) < 0) axis.z = -axis.z;
    return theta * normalized(axis);
  }
  return (theta / s) * w;
}

inline Mat3 rot_x(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r.m[0] = 1; r.m[1] = 0; r.m[2] = 0;
  r.m[3] = 0; r.m[4] = c; r.m[5] = -s;
  r.m[6] = 0; r.m[7] = s; r.m[8] = c;
  return r;
}

inline Mat3 rot_y(double a) {
  Mat3 r;
  double c = std::cos(a), s = std::sin(a);
  r.m[0] = c;  r.m[1] = 0; r.m[2] = s;
  r.m[3] = 0;  r.m[4] = 1; r.m[5] = 0;
  r.m[6] = -s; r.m[7] = 0; r.m[8] = c;
  return r;
}

// Geodesic distance between two rotations, in radians.
inline double rotation_geodesic(const Mat3& a, const Mat3& b) {
  Mat3 d = transpose(a) * b;
  double c = std::min(1.0, std::max(-1.0, (d.m[0] + d.m[4] + d.m[8] - 1.0) * 0.5));
  return std::acos(c);
}

// Solves A x = b in place for a small dense system (Gaussian elimination,
// partial pivoting). A is n x n row-major.
inline std::vector<double> solve_dense(std::vector<double> a, std::vector<double> b) {
  size_t n = b.size();
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-300)
      fail(ErrorKind::numerical, "singular linear system");
    if (piv != col) {
      for (size_t c = 0; c < n; ++c) std::swap(a[col * n + c], a[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    double inv = 1.0 / a[col * n + col];
    for (size_t r = col + 1; r < n; ++r) {
      double f = a[r * n + col] * inv;
      if (f == 0.0) continue;
      for (size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (size_t ri = n; ri-- > 0;) {
    double s = b[ri];
    for (size_t c = ri + 1; c < n; ++c) s -= a[ri * n + c] * x[c];
    x[ri] = s / a[ri * n + ri];
  }
  return x;
}

// Eigen-decomposition of a symmetric 4x4 matrix by cyclic Jacobi rotations.
// Returns eigenvalues ascending; eigenvectors[k] matches eigenvalues[k].
struct SymEigen4 {
  std::array<double, 4> values;
  std::array<std::array<double, 4>, 4> vectors;  // vectors[k] is a column
};

inline SymEigen4 sym_eigen_4x4(std::array<double, 16> a) {
  std::array<double, 16> v{};
  for (int i = 0; i < 4; ++i) v[i * 4 + i] = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 4; ++p)
      for (int q = p + 1; q < 4; ++q) off += a[p * 4 + q] * a[p * 4 + q];
    if (off < 1e-300) break;
    for (int p = 0; p < 4; ++p) {
      for (int q = p + 1; q < 4; ++q) {
        double apq = a[p * 4 + q];
        if (apq == 0.0) continue;
        double app = a[p * 4 + p], aqq = a[q * 4 + q];
        double tau = (aqq - app) / (2.0 * apq);
        double t = (tau >= 0 ? 1.0 : -1.0) /
                   (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        double c = 1.0 / std::sqrt(1.0 + t * t);
        double s = t * c;
        for (int k = 0; k < 4; ++k) {
          double akp = a[k * 4 + p], akq = a[k * 4 + q];
          a[k * 4 + p] = c * akp - s * akq;
          a[k * 4 + q] = s * akp + c * akq;
        }
        for (int k = 0; k < 4; ++k) {
          double apk = a[p * 4 + k], aqk = a[q * 4 + k];
          a[p * 4 + k] = c * apk - s * aqk;
          a[q * 4 + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 4; ++k) {
          double vkp = v[k * 4 + p], vkq = v[k * 4 + q];
          v[k * 4 + p] = c * vkp - s * vkq;
          v[k * 4 + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  SymEigen4 out;
  std::array<int, 4> order{0, 1, 2, 3};
  std::array<double, 4> diag{a[0], a[5], a[10], a[15]};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (diag[order[j]] < diag[order[i]]) std::swap(order[i], order[j]);
  for (int k = 0; k < 4; ++k) {
    out.values[k] = diag[order[k]];
    for (int r = 0; r < 4; ++r) out.vectors[k][r] = v[r * 4 + order[k]];
  }
  return out;
}

inline bool all_finite(const double* p, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

}  // namespace densemarks
