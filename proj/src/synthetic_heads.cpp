#include "densemarks/synthetic_heads.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "densemarks/binary_io.hpp"

namespace fs = std::filesystem;

namespace densemarks {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kNearClip = 0.05;
constexpr double kDepthVisTol = 0.02;  // relative z tolerance for visibility

// Ellipsoid radii and protrusion parameters of the head template.
constexpr double kRadX = 0.78, kRadY = 1.0, kRadZ = 0.85;

struct Bump {
  Vec3 dir;       // unit direction of the bump center
  double amp;     // radial displacement at the center
  double width;   // angular falloff (radians)
};

double angle_between(Vec3 a, Vec3 b) {
  double c = std::min(1.0, std::max(-1.0, dot(a, b)));
  return std::acos(c);
}

HeadTemplate build_head_template() {
  const int rings = 40;     // latitude divisions
  const int sectors = 54;   // longitude divisions

  const Vec3 nose_dir = normalized(Vec3{0.0, -0.12, 1.0});
  const Vec3 lear_dir = normalized(Vec3{-1.0, 0.05, -0.05});
  const Vec3 rear_dir = normalized(Vec3{1.0, 0.05, -0.05});
  const Bump bumps[3] = {{nose_dir, 0.28, 0.25},
                         {lear_dir, 0.42, 0.26},
                         {rear_dir, 0.42, 0.26}};

  HeadTemplate t;
  auto surface_point = [&](Vec3 dir) {
    double inv_r = std::sqrt((dir.x / kRadX) * (dir.x / kRadX) +
                             (dir.y / kRadY) * (dir.y / kRadY) +
                             (dir.z / kRadZ) * (dir.z / kRadZ));
    double r = 1.0 / inv_r;
    double gain = 1.0;
    for (const Bump& b : bumps) {
      double a = angle_between(dir, b.dir);
      gain += b.amp * std::exp(-(a * a) / (b.width * b.width));
    }
    return (r * gain) * dir;
  };
  auto region_of = [&](Vec3 dir) -> int {
    if (angle_between(dir, lear_dir) < 0.40) return kRegionLeftEar;
    if (angle_between(dir, rear_dir) < 0.40) return kRegionRightEar;
    if (angle_between(dir, nose_dir) < 0.32) return kRegionNose;
    if (dir.y > 0.55) return kRegionHair;
    if (dir.y < -0.72) return kRegionNeck;
    return kRegionSkin;
  };

  // Lat-long sphere: poles plus (rings-1) x sectors grid.
  std::vector<Vec3> dirs;
  dirs.push_back({0.0, 1.0, 0.0});
  for (int i = 1; i < rings; ++i) {
    double theta = kPi * double(i) / rings;
    for (int j = 0; j < sectors; ++j) {
      double phi = 2.0 * kPi * double(j) / sectors;
      dirs.push_back({std::sin(theta) * std::sin(phi), std::cos(theta),
                      std::sin(theta) * std::cos(phi)});
    }
  }
  dirs.push_back({0.0, -1.0, 0.0});
  const int top = 0;
  const int bottom = int(dirs.size()) - 1;
  auto ring_vertex = [&](int ring, int sector) {
    return 1 + (ring - 1) * sectors + (sector % sectors);
  };

  for (Vec3 d : dirs) {
    t.rest.push_back(surface_point(d));
    t.label.push_back(region_of(d));
  }
  for (int j = 0; j < sectors; ++j)
    t.tris.push_back({top, ring_vertex(1, j), ring_vertex(1, j + 1)});
  for (int i = 1; i < rings - 1; ++i) {
    for (int j = 0; j < sectors; ++j) {
      int a = ring_vertex(i, j), b = ring_vertex(i, j + 1);
      int c = ring_vertex(i + 1, j), d = ring_vertex(i + 1, j + 1);
      t.tris.push_back({a, c, b});
      t.tris.push_back({b, c, d});
    }
  }
  for (int j = 0; j < sectors; ++j)
    t.tris.push_back({bottom, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j)});

  // Area-weighted vertex normals, oriented outward.
  t.rest_normal.assign(t.rest.size(), Vec3{});
  for (const auto& tri : t.tris) {
    Vec3 n = cross(t.rest[size_t(tri[1])] - t.rest[size_t(tri[0])],
                   t.rest[size_t(tri[2])] - t.rest[size_t(tri[0])]);
    for (int k = 0; k < 3; ++k) t.rest_normal[size_t(tri[size_t(k)])] += n;
  }
  for (size_t v = 0; v < t.rest.size(); ++v) {
    Vec3 n = t.rest_normal[v];
    if (dot(n, t.rest[v]) < 0.0) n = -1.0 * n;
    t.rest_normal[v] = normalized(n);
  }

  // Canonical coordinates: rest positions normalized by the rest bounding box.
  Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
  for (Vec3 p : t.rest) {
    for (int c = 0; c < 3; ++c) {
      lo[c] = std::min(lo[c], p[c]);
      hi[c] = std::max(hi[c], p[c]);
    }
  }
  t.bbox_min = lo;
  t.bbox_max = hi;
  for (Vec3 p : t.rest) {
    Vec3 c;
    for (int k = 0; k < 3; ++k) c[k] = (p[k] - lo[k]) / (hi[k] - lo[k]);
    t.canonical.push_back(c);
  }

  // 70 frontal landmarks by farthest-point sampling, seeded at the nose tip.
  std::vector<int> candidates;
  for (size_t v = 0; v < t.rest.size(); ++v) {
    Vec3 d = normalized(t.rest[v]);
    if (d.z > 0.35 && d.y > -0.7 && d.y < 0.78) candidates.push_back(int(v));
  }
  int seed_vertex = candidates[0];
  for (int v : candidates)
    if (normalized(t.rest[size_t(v)]).z > normalized(t.rest[size_t(seed_vertex)]).z)
      seed_vertex = v;
  std::vector<double> min_dist(t.rest.size(), 1e30);
  t.landmarks.push_back(seed_vertex);
  while (int(t.landmarks.size()) < kNumLandmarks) {
    int last = t.landmarks.back();
    int best = -1;
    double best_d = -1.0;
    for (int v : candidates) {
      Vec3 diff = t.rest[size_t(v)] - t.rest[size_t(last)];
      min_dist[size_t(v)] = std::min(min_dist[size_t(v)], dot(diff, diff));
      bool taken = false;
      for (int l : t.landmarks)
        if (l == v) { taken = true; break; }
      if (!taken && min_dist[size_t(v)] > best_d) {
        best_d = min_dist[size_t(v)];
        best = v;
      }
    }
    t.landmarks.push_back(best);
  }

  // Expression modes: smooth windows around the mouth and brow, phase varying
  // slowly over the surface so the deformation is low-frequency.
  const Vec3 mouth_c{0.0, -0.5, 0.68}, brow_c{0.0, 0.3, 0.8};
  const Vec3 k1{2.0, 1.3, 0.8}, k2{0.9, 2.2, 1.4};
  for (size_t v = 0; v < t.rest.size(); ++v) {
    Vec3 p = t.rest[v];
    Vec3 dm = p - mouth_c, db = p - brow_c;
    t.deform_w1.push_back(std::exp(-dot(dm, dm) / (0.55 * 0.55)));
    t.deform_w2.push_back(std::exp(-dot(db, db) / (0.65 * 0.65)));
    t.deform_phase1.push_back(dot(k1, p));
    t.deform_phase2.push_back(dot(k2, p));
  }
  return t;
}

}  // namespace

const HeadTemplate& head_template() {
  static const HeadTemplate t = build_head_template();
  return t;
}

std::vector<Vec3> deformed_vertices(const HeadTemplate& tmpl, double amp,
                                    double phase) {
  std::vector<Vec3> out(tmpl.rest.size());
  for (size_t v = 0; v < tmpl.rest.size(); ++v) {
    double d = amp * (std::sin(phase + tmpl.deform_phase1[v]) * tmpl.deform_w1[v] +
                      0.7 * std::sin(1.7 * phase + tmpl.deform_phase2[v]) *
                          tmpl.deform_w2[v]);
    out[v] = tmpl.rest[v] + d * tmpl.rest_normal[v];
  }
  return out;
}

void validate_camera(const Camera& cam) {
  if (!(cam.fx > 0.0) || !(cam.fy > 0.0))
    fail(ErrorKind::argument, "camera focal lengths must be positive");
  if (cam.width <= 0 || cam.height <= 0)
    fail(ErrorKind::argument, "camera image size must be positive");
  Mat3 rtr = transpose(cam.rot) * cam.rot;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double expect = i == j ? 1.0 : 0.0;
      if (std::abs(rtr(i, j) - expect) > 1e-9)
        fail(ErrorKind::argument, "camera rotation is not orthonormal");
    }
  if (std::abs(det(cam.rot) - 1.0) > 1e-9)
    fail(ErrorKind::argument, "camera rotation must have det +1");
}

Camera make_default_camera(int size, double distance, double focal_per_px) {
  Camera cam;
  cam.width = cam.height = size;
  cam.fx = cam.fy = focal_per_px * size;
  cam.cx = 0.5 * size;
  cam.cy = 0.5 * size;
  // Located at (0,0,distance), optical axis toward the origin, image y down.
  cam.rot = Mat3{};
  cam.rot.m[0] = 1;  cam.rot.m[1] = 0;  cam.rot.m[2] = 0;
  cam.rot.m[3] = 0;  cam.rot.m[4] = -1; cam.rot.m[5] = 0;
  cam.rot.m[6] = 0;  cam.rot.m[7] = 0;  cam.rot.m[8] = -1;
  cam.trans = Vec3{0.0, 0.0, distance};
  validate_camera(cam);
  return cam;
}

void save_camera(const std::string& path, const Camera& cam) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open for writing: " + path);
  out.precision(17);
  for (int i = 0; i < 9; ++i) out << cam.rot.m[i] << (i == 8 ? "\n" : " ");
  out << cam.trans.x << " " << cam.trans.y << " " << cam.trans.z << "\n";
  out << cam.fx << " " << cam.fy << " " << cam.cx << " " << cam.cy << "\n";
  out << cam.width << " " << cam.height << "\n";
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

Camera load_camera(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open: " + path);
  Camera cam;
  auto want = [&](double& v) {
    if (!(in >> v)) {
      auto at = in.tellg();
      fail(ErrorKind::input_format,
           path + " at byte " + std::to_string(at < 0 ? 0LL : (long long)at) +
               ": expected number");
    }
  };
  for (int i = 0; i < 9; ++i) want(cam.rot.m[i]);
  want(cam.trans.x); want(cam.trans.y); want(cam.trans.z);
  want(cam.fx); want(cam.fy); want(cam.cx); want(cam.cy);
  double w, h;
  want(w); want(h);
  cam.width = int(w);
  cam.height = int(h);
  validate_camera(cam);
  return cam;
}

// --- rasterizer --------------------------------------------------------------

namespace {

inline double edge_fn(Vec2 a, Vec2 b, Vec2 p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

// Boundary ownership for counter-normalized (positive-area) triangles in a
// y-down frame: top edges run in +x, left edges run in -y.
inline bool edge_owns_boundary(Vec2 a, Vec2 b) {
  double dx = b.x - a.x, dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

}  // namespace

RasterBuffers rasterize_mesh(const std::vector<Vec3>& world_vertices,
                             const std::vector<std::array<int, 3>>& tris,
                             const Camera& cam) {
  RasterBuffers out;
  out.depth = Image<float>(cam.width, cam.height,
                           std::numeric_limits<float>::infinity());
  out.tri = Image<int32_t>(cam.width, cam.height, -1);
  out.bary = Image<Vec3>(cam.width, cam.height);

  std::vector<Vec3> cam_pts(world_vertices.size());
  std::vector<Vec2> scr(world_vertices.size());
  for (size_t v = 0; v < world_vertices.size(); ++v) {
    cam_pts[v] = to_camera(cam, world_vertices[v]);
    if (cam_pts[v].z > kNearClip) scr[v] = project(cam, cam_pts[v]);
  }

  for (size_t ti = 0; ti < tris.size(); ++ti) {
    int i0 = tris[ti][0], i1 = tris[ti][1], i2 = tris[ti][2];
    if (cam_pts[size_t(i0)].z <= kNearClip || cam_pts[size_t(i1)].z <= kNearClip ||
        cam_pts[size_t(i2)].z <= kNearClip)
      continue;
    // Orientation-normalize so all edge functions are nonnegative inside.
    int v0 = i0, v1 = i1, v2 = i2;
    double area2 = edge_fn(scr[size_t(v0)], scr[size_t(v1)], scr[size_t(v2)]);
    if (area2 == 0.0) continue;
    if (area2 < 0.0) {
      std::swap(v1, v2);
      area2 = -area2;
    }
    Vec2 a = scr[size_t(v0)], b = scr[size_t(v1)], c = scr[size_t(v2)];
    double z0 = cam_pts[size_t(v0)].z, z1 = cam_pts[size_t(v1)].z,
           z2 = cam_pts[size_t(v2)].z;

    int min_x = std::max(0, int(std::floor(std::min({a.x, b.x, c.x}) - 0.5)));
    int max_x = std::min(cam.width - 1, int(std::ceil(std::max({a.x, b.x, c.x}))));
    int min_y = std::max(0, int(std::floor(std::min({a.y, b.y, c.y}) - 0.5)));
    int max_y = std::min(cam.height - 1, int(std::ceil(std::max({a.y, b.y, c.y}))));
    if (min_x > max_x || min_y > max_y) continue;

    bool own0 = edge_owns_boundary(b, c);
    bool own1 = edge_owns_boundary(c, a);
    bool own2 = edge_owns_boundary(a, b);
    double inv_area = 1.0 / area2;

    for (int py = min_y; py <= max_y; ++py) {
      for (int px = min_x; px <= max_x; ++px) {
        Vec2 p{px + 0.5, py + 0.5};
        double w0 = edge_fn(b, c, p);
        double w1 = edge_fn(c, a, p);
        double w2 = edge_fn(a, b, p);
        if (!((w0 > 0.0 || (w0 == 0.0 && own0)) &&
              (w1 > 0.0 || (w1 == 0.0 && own1)) &&
              (w2 > 0.0 || (w2 == 0.0 && own2))))
          continue;
        double l0 = w0 * inv_area, l1 = w1 * inv_area, l2 = w2 * inv_area;
        double inv_z = l0 / z0 + l1 / z1 + l2 / z2;
        double z = 1.0 / inv_z;
        if (float(z) < out.depth.at(px, py)) {
          out.depth.at(px, py) = float(z);
          out.tri.at(px, py) = int32_t(ti);
          // Perspective-correct barycentrics in the original vertex order.
          double p0 = (l0 / z0) * z, p1 = (l1 / z1) * z, p2 = (l2 / z2) * z;
          Vec3 bc;
          bc[0] = p0;
          bc[1] = (v1 == i1) ? p1 : p2;
          bc[2] = (v1 == i1) ? p2 : p1;
          out.bary.at(px, py) = bc;
        }
      }
    }
  }
  return out;
}

Vec3 canonical_texture(Vec3 canon) {
  double u = canon.x - 0.5, v = canon.y - 0.5, w = canon.z - 0.5;
  double r = 0.5 + 0.44 * std::sin(2.2 * u + 0.35 * v + 0.25 * w) +
             0.03 * std::sin(5.3 * canon.x + 4.1 * canon.y + 4.7 * canon.z);
  double g = 0.5 + 0.44 * std::sin(0.25 * u + 2.2 * v + 0.35 * w) +
             0.03 * std::sin(4.5 * canon.x + 5.7 * canon.y + 4.0 * canon.z);
  double b = 0.5 + 0.44 * std::sin(0.35 * u + 0.25 * v + 2.2 * w) +
             0.03 * std::sin(4.2 * canon.x + 4.6 * canon.y + 5.5 * canon.z);
  auto clamp01 = [](double x) { return std::min(1.0, std::max(0.0, x)); };
  return {clamp01(r), clamp01(g), clamp01(b)};
}

FrameData render_frame(const HeadTemplate& tmpl, const Mat3& pose_rot,
                       double deform_amp, double deform_phase, const Camera& cam) {
  FrameData f;
  f.pose_rot = pose_rot;
  f.deform_phase = deform_phase;
  std::vector<Vec3> shaped = deform_amp != 0.0
                                 ? deformed_vertices(tmpl, deform_amp, deform_phase)
                                 : tmpl.rest;
  f.posed.resize(shaped.size());
  for (size_t v = 0; v < shaped.size(); ++v) f.posed[v] = pose_rot * shaped[v];

  f.raster = rasterize_mesh(f.posed, tmpl.tris, cam);
  f.rgb = RgbImage(cam.width, cam.height);
  f.mask = Image<uint8_t>(cam.width, cam.height, 0);
  f.labels = Image<uint8_t>(cam.width, cam.height, 0);
  f.uvw = UvwMap(cam.width, cam.height);

  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      int32_t ti = f.raster.tri.at(x, y);
      if (ti < 0) continue;
      const auto& tri = tmpl.tris[size_t(ti)];
      Vec3 bc = f.raster.bary.at(x, y);
      Vec3 canon;
      for (int k = 0; k < 3; ++k) canon += bc[k] * tmpl.canonical[size_t(tri[size_t(k)])];
      size_t idx = f.uvw.idx(x, y);
      f.uvw.uvw[idx] = canon;
      f.uvw.valid[idx] = 1;
      f.mask.at(x, y) = 255;
      // Dominant-vertex label; ties go to the lowest vertex slot.
      int dominant = 0;
      if (bc[1] > bc[dominant]) dominant = 1;
      if (bc[2] > bc[dominant]) dominant = 2;
      f.labels.at(x, y) = uint8_t(tmpl.label[size_t(tri[size_t(dominant)])]);
      Vec3 col = canonical_texture(canon);
      float* px = f.rgb.px(x, y);
      px[0] = float(col.x);
      px[1] = float(col.y);
      px[2] = float(col.z);
    }
  }

  f.landmarks.resize(size_t(kNumLandmarks));
  for (int k = 0; k < kNumLandmarks; ++k) {
    Vec3 cp = to_camera(cam, f.posed[size_t(tmpl.landmarks[size_t(k)])]);
    LandmarkObs obs;
    if (cp.z > kNearClip) {
      Vec2 p = project(cam, cp);
      int px = int(std::floor(p.x)), py = int(std::floor(p.y));
      // Two-sided depth agreement: rejects both occluded landmarks and
      // silhouette pixels whose center ray hit the far side of the head.
      if (f.mask.in_bounds(px, py) && f.raster.tri.at(px, py) >= 0 &&
          std::abs(cp.z - f.raster.depth.at(px, py)) <= kDepthVisTol * cp.z) {
        obs.x = p.x;
        obs.y = p.y;
        obs.visible = true;
      }
    }
    f.landmarks[size_t(k)] = obs;
  }
  return f;
}

UvwMap render_uvw_posed(const HeadTemplate& tmpl,
                        const std::vector<Vec3>& world_vertices,
                        const Camera& cam) {
  RasterBuffers rb = rasterize_mesh(world_vertices, tmpl.tris, cam);
  UvwMap map(cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      int32_t ti = rb.tri.at(x, y);
      if (ti < 0) continue;
      const auto& tri = tmpl.tris[size_t(ti)];
      Vec3 bc = rb.bary.at(x, y);
      Vec3 canon;
      for (int k = 0; k < 3; ++k) canon += bc[k] * tmpl.canonical[size_t(tri[size_t(k)])];
      size_t idx = map.idx(x, y);
      map.uvw[idx] = canon;
      map.valid[idx] = 1;
    }
  }
  return map;
}

Sequence generate_sequence(uint64_t seed, int frames, int size,
                           const Camera& cam, const MotionParams& motion) {
  if (frames < 2) fail(ErrorKind::argument, "sequence needs >= 2 frames");
  if (size < 32) fail(ErrorKind::argument, "sequence size must be >= 32");
  validate_camera(cam);
  Sequence seq;
  seq.camera = cam;
  seq.motion = motion;
  seq.seed = seed;

  Rng rng(seed);
  double yaw_phase = rng.uniform(0.0, 2.0 * kPi);
  double pitch_phase = rng.uniform(0.0, 2.0 * kPi);
  double yaw_cycles = rng.uniform(0.7, 1.3);
  double pitch_cycles = rng.uniform(0.8, 1.6);
  double deform_cycles = rng.uniform(0.8, 1.5);
  double deform_phase0 = rng.uniform(0.0, 2.0 * kPi);

  const HeadTemplate& tmpl = head_template();
  for (int t = 0; t < frames; ++t) {
    double tau = double(t) / double(frames - 1);
    double yaw = motion.yaw_amp * std::sin(2.0 * kPi * yaw_cycles * tau + yaw_phase);
    double pitch =
        motion.pitch_amp * std::sin(2.0 * kPi * pitch_cycles * tau + pitch_phase);
    Mat3 pose = rot_y(yaw) * rot_x(pitch);
    double phase = 2.0 * kPi * deform_cycles * tau + deform_phase0;
    seq.frames.push_back(render_frame(tmpl, pose, motion.deform_amp, phase, cam));
  }
  if (seq.frames[0].uvw.count_valid() == 0)
    fail(ErrorKind::argument, "degenerate camera: template out of frame");
  return seq;
}

TrackPairs sample_track_pairs(const Sequence& seq, int frame_i, int frame_j,
                              int budget, uint64_t seed) {
  int nf = int(seq.frames.size());
  if (frame_i == frame_j || frame_i < 0 || frame_j < 0 || frame_i >= nf ||
      frame_j >= nf)
    fail(ErrorKind::argument, "invalid frame pair");
  if (budget < 1) fail(ErrorKind::argument, "track budget must be positive");
  const FrameData& fi = seq.frames[size_t(frame_i)];
  const FrameData& fj = seq.frames[size_t(frame_j)];
  const HeadTemplate& tmpl = head_template();

  std::vector<int> fg;
  for (int y = 0; y < fi.mask.height; ++y)
    for (int x = 0; x < fi.mask.width; ++x)
      if (fi.mask.at(x, y)) fg.push_back(y * fi.mask.width + x);
  if (fg.empty()) fail(ErrorKind::degenerate, "frame has no foreground");

  Rng rng(seed);
  for (size_t k = fg.size(); k > 1; --k)
    std::swap(fg[k - 1], fg[size_t(rng.uniform_int(k))]);

  int quota = std::min({budget, kMaxTracks, int(fg.size())});
  TrackPairs tp;
  for (int s = 0; s < int(fg.size()) && int(tp.count()) < quota; ++s) {
    int px = fg[size_t(s)] % fi.mask.width;
    int py = fg[size_t(s)] / fi.mask.width;
    int32_t ti = fi.raster.tri.at(px, py);
    Vec3 bc = fi.raster.bary.at(px, py);
    const auto& tri = tmpl.tris[size_t(ti)];
    // Follow the surface point through the known deformation to frame j.
    Vec3 pos_j;
    for (int k = 0; k < 3; ++k) pos_j += bc[k] * fj.posed[size_t(tri[size_t(k)])];
    Vec3 cp = to_camera(seq.camera, pos_j);
    if (cp.z <= kNearClip) continue;
    Vec2 uv = project(seq.camera, cp);
    int qx = int(std::floor(uv.x)), qy = int(std::floor(uv.y));
    if (!fj.mask.in_bounds(qx, qy) || !fj.mask.at(qx, qy)) continue;
    if (std::abs(cp.z - fj.raster.depth.at(qx, qy)) > kDepthVisTol * cp.z)
      continue;
    // Both endpoints must name the same surface point up to rasterization
    // tolerance; grazing pixels with steep UVW gradients are dropped the way
    // a tracker loses them.
    Vec3 uvw_i = fi.uvw.uvw[fi.uvw.idx(px, py)];
    Vec3 uvw_j = fj.uvw.uvw[fj.uvw.idx(qx, qy)];
    if (linf(uvw_i - uvw_j) > 2.0 / double(fi.mask.width)) continue;
    tp.a.push_back({px, py});
    tp.b.push_back({qx, qy});
    tp.id.push_back(s);
  }
  if (int(tp.count()) < kMinTracks)
    fail(ErrorKind::degenerate, "fewer than " + std::to_string(kMinTracks) +
                                    " co-visible tracks; pair rejected");
  return tp;
}

AugmentDraw draw_augment(Rng& rng) {
  AugmentDraw d;
  // Draw the chances first so the consumed random stream is fixed.
  bool cs = rng.coin(), cc = rng.coin(), cr = rng.coin();
  double sx = rng.uniform(-0.10, 0.10);
  double sy = rng.uniform(-0.10, 0.10);
  double sc = rng.uniform(-0.10, 0.10);
  double an = rng.uniform(-18.0, 18.0) * kPi / 180.0;
  if (cs) {
    d.do_shift = true;
    d.shift_x = sx;
    d.shift_y = sy;
  }
  if (cc) {
    d.do_scale = true;
    d.scale = 1.0 + sc;
  }
  if (cr) {
    d.do_rot = true;
    d.angle = an;
  }
  return d;
}

AffineAug make_affine(const AugmentDraw& d, int width, int height) {
  double c = std::cos(d.do_rot ? d.angle : 0.0);
  double s = std::sin(d.do_rot ? d.angle : 0.0);
  double k = d.do_scale ? d.scale : 1.0;
  AffineAug a;
  a.m00 = k * c;
  a.m01 = -k * s;
  a.m10 = k * s;
  a.m11 = k * c;
  double cx = 0.5 * width, cy = 0.5 * height;
  double tx = d.do_shift ? d.shift_x * width : 0.0;
  double ty = d.do_shift ? d.shift_y * height : 0.0;
  a.tx = cx + tx - (a.m00 * cx + a.m01 * cy);
  a.ty = cy + ty - (a.m10 * cx + a.m11 * cy);
  return a;
}

AffineAug invert(const AffineAug& a) {
  double det2 = a.m00 * a.m11 - a.m01 * a.m10;
  if (std::abs(det2) < 1e-12) fail(ErrorKind::numerical, "singular augmentation");
  AffineAug inv;
  inv.m00 = a.m11 / det2;
  inv.m01 = -a.m01 / det2;
  inv.m10 = -a.m10 / det2;
  inv.m11 = a.m00 / det2;
  inv.tx = -(inv.m00 * a.tx + inv.m01 * a.ty);
  inv.ty = -(inv.m10 * a.tx + inv.m11 * a.ty);
  return inv;
}

FrameBundle augment_bundle(const FrameBundle& in, const AffineAug& aug) {
  int w = in.rgb.width, h = in.rgb.height;
  FrameBundle out;
  out.rgb = RgbImage(w, h);
  out.mask = Image<uint8_t>(w, h, 0);
  out.labels = Image<uint8_t>(w, h, 0);
  out.uvw = UvwMap(w, h);
  AffineAug inv = invert(aug);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Vec2 src = apply_affine(inv, {x + 0.5, y + 0.5});
      // Nearest pixel: the one containing the source position.
      int nx = int(std::floor(src.x)), ny = int(std::floor(src.y));
      if (in.mask.in_bounds(nx, ny)) {
        out.mask.at(x, y) = in.mask.at(nx, ny);
        out.labels.at(x, y) = in.labels.at(nx, ny);
      }
      // Bilinear in pixel-center space.
      double u = src.x - 0.5, v = src.y - 0.5;
      int x0 = int(std::floor(u)), y0 = int(std::floor(v));
      double fx = u - x0, fy = v - y0;
      double wgt[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      float acc[3] = {0, 0, 0};
      for (int k = 0; k < 4; ++k) {
        if (!in.rgb.in_bounds(xs[k], ys[k])) continue;  // outside reads as black
        const float* p = in.rgb.px(xs[k], ys[k]);
        for (int c = 0; c < 3; ++c) acc[c] += float(wgt[k]) * p[c];
      }
      float* dst = out.rgb.px(x, y);
      for (int c = 0; c < 3; ++c) dst[c] = acc[c];
      // UVW only where every contributor is valid.
      bool all_valid = true;
      Vec3 uvw_acc;
      for (int k = 0; k < 4; ++k) {
        if (!in.uvw.in_bounds(xs[k], ys[k]) ||
            !in.uvw.valid[in.uvw.idx(xs[k], ys[k])]) {
          all_valid = false;
          break;
        }
        uvw_acc += wgt[k] * in.uvw.uvw[in.uvw.idx(xs[k], ys[k])];
      }
      if (all_valid) {
        out.uvw.uvw[out.uvw.idx(x, y)] = uvw_acc;
        out.uvw.valid[out.uvw.idx(x, y)] = 1;
      }
    }
  }

  out.landmarks.resize(in.landmarks.size());
  for (size_t k = 0; k < in.landmarks.size(); ++k) {
    const LandmarkObs& src = in.landmarks[k];
    LandmarkObs dst;
    if (src.visible) {
      Vec2 p = apply_affine(aug, {src.x, src.y});
      if (p.x >= 0.0 && p.y >= 0.0 && p.x < double(w) && p.y < double(h)) {
        dst.x = p.x;
        dst.y = p.y;
        dst.visible = true;
      }
    }
    out.landmarks[k] = dst;
  }
  return out;
}

// --- sequence directory layout -----------------------------------------------

namespace {

std::string frame_path(const std::string& dir, const char* stem, int t,
                       const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d.%s", stem, t, ext);
  return dir + "/" + buf;
}

}  // namespace

void save_sequence(const Sequence& seq, const std::string& dir,
                   int track_budget, uint64_t track_seed) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory: " + dir);

  int nf = int(seq.frames.size());
  for (int t = 0; t < nf; ++t) {
    const FrameData& f = seq.frames[size_t(t)];
    write_ppm(frame_path(dir, "frame", t, "ppm"), f.rgb);
    write_pgm(frame_path(dir, "mask", t, "pgm"), f.mask);
    write_pgm(frame_path(dir, "labels", t, "pgm"), f.labels);
    write_uvw(frame_path(dir, "uvw", t, "dmv"), f.uvw);
  }

  {
    std::ofstream out(dir + "/landmarks.txt");
    if (!out) fail(ErrorKind::io, "cannot write landmarks.txt in " + dir);
    out.precision(10);
    for (int t = 0; t < nf; ++t) {
      for (int k = 0; k < kNumLandmarks; ++k) {
        const LandmarkObs& o = seq.frames[size_t(t)].landmarks[size_t(k)];
        if (o.visible)
          out << k << " " << o.x << " " << o.y << "\n";
        else
          out << k << " -1 -1\n";
      }
    }
  }

  for (int i = 0; i < nf; ++i) {
    for (int j = i + 1; j < nf; ++j) {
      TrackPairs tp;
      try {
        tp = sample_track_pairs(seq, i, j, track_budget,
                                Rng::mix(track_seed, uint64_t(i) * 1000 + j));
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::degenerate) continue;  // pair rejected
        throw;
      }
      std::ofstream out(dir + "/tracks_" + std::to_string(i) + "_" +
                        std::to_string(j) + ".txt");
      for (size_t p = 0; p < tp.count(); ++p)
        out << tp.a[p][0] << " " << tp.a[p][1] << " " << tp.b[p][0] << " "
            << tp.b[p][1] << "\n";
    }
  }

  save_camera(dir + "/camera.txt", seq.camera);
}

LoadedSequence load_sequence_dir(const std::string& dir) {
  if (!fs::exists(dir)) fail(ErrorKind::io, "no such dataset directory: " + dir);
  LoadedSequence ls;
  ls.camera = load_camera(dir + "/camera.txt");
  for (int t = 0;; ++t) {
    std::string fp = frame_path(dir, "frame", t, "ppm");
    if (!fs::exists(fp)) break;
    ls.frames.push_back(read_ppm(fp));
    ls.masks.push_back(read_pgm(frame_path(dir, "mask", t, "pgm")));
    ls.labels.push_back(read_pgm(frame_path(dir, "labels", t, "pgm")));
    ls.uvws.push_back(read_uvw(frame_path(dir, "uvw", t, "dmv")));
  }
  if (ls.frames.empty()) fail(ErrorKind::input_format, dir + ": no frames found");

  {
    std::string path = dir + "/landmarks.txt";
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open: " + path);
    ls.landmarks.resize(ls.frames.size());
    for (size_t t = 0; t < ls.frames.size(); ++t) {
      ls.landmarks[t].resize(size_t(kNumLandmarks));
      for (int k = 0; k < kNumLandmarks; ++k) {
        int idx;
        double x, y;
        if (!(in >> idx >> x >> y)) {
          auto at = in.tellg();
          fail(ErrorKind::input_format,
               path + " at byte " + std::to_string(at < 0 ? 0LL : (long long)at) +
                   ": expected landmark line");
        }
        if (idx != k)
          fail(ErrorKind::input_format, path + ": landmark index out of order");
        LandmarkObs o;
        if (x >= 0.0 && y >= 0.0) {
          o.x = x;
          o.y = y;
          o.visible = true;
        }
        ls.landmarks[t][size_t(k)] = o;
      }
    }
  }

  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    int i, j;
    if (std::sscanf(name.c_str(), "tracks_%d_%d.txt", &i, &j) != 2) continue;
    std::ifstream in(entry.path());
    TrackPairs tp;
    int x1, y1, x2, y2;
    while (in >> x1 >> y1 >> x2 >> y2) {
      tp.a.push_back({x1, y1});
      tp.b.push_back({x2, y2});
      tp.id.push_back(int(tp.id.size()));
    }
    ls.track_pairs_index.push_back({i, j});
    ls.track_pairs.push_back(std::move(tp));
  }
  // Directory iteration order is filesystem-dependent; fix it.
  std::vector<size_t> order(ls.track_pairs.size());
  for (size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return ls.track_pairs_index[a] < ls.track_pairs_index[b];
  });
  std::vector<std::array<int, 2>> sorted_idx;
  std::vector<TrackPairs> sorted_tp;
  for (size_t k : order) {
    sorted_idx.push_back(ls.track_pairs_index[k]);
    sorted_tp.push_back(std::move(ls.track_pairs[k]));
  }
  ls.track_pairs_index = std::move(sorted_idx);
  ls.track_pairs = std::move(sorted_tp);
  return ls;
}

}  // namespace densemarks
