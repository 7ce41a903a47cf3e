#include "densemarks/stereo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "densemarks/matcher.hpp"

namespace densemarks {

void validate_stereo_config(const StereoConfig& cfg) {
  if (cfg.downsample_factor < 1.0)
    fail(ErrorKind::argument, "downsample factor must be >= 1");
  if (cfg.min_track_len < 2)
    fail(ErrorKind::argument, "minimum track length must be >= 2");
  if (cfg.uvw_tol < 0.0 || cfg.track_tol < cfg.uvw_tol)
    fail(ErrorKind::argument, "track_tol must be >= uvw_tol >= 0");
  if (cfg.reproj_thresh_px < 0.0)
    fail(ErrorKind::argument, "reprojection threshold must be >= 0");
}

UvwMap downsample_uvw(const UvwMap& map, double factor) {
  if (factor < 1.0) fail(ErrorKind::argument, "downsample factor must be >= 1");
  int ow = std::max(1, int(std::floor(map.width / factor)));
  int oh = std::max(1, int(std::floor(map.height / factor)));
  UvwMap out(ow, oh);
  for (int oy = 0; oy < oh; ++oy) {
    int y0 = int(std::floor(oy * factor));
    int y1 = std::max(y0 + 1, int(std::floor((oy + 1) * factor)));
    y1 = std::min(y1, map.height);
    int cy = int(std::floor((oy + 0.5) * factor));
    for (int ox = 0; ox < ow; ++ox) {
      int x0 = int(std::floor(ox * factor));
      int x1 = std::max(x0 + 1, int(std::floor((ox + 1) * factor)));
      x1 = std::min(x1, map.width);
      int cx = int(std::floor((ox + 0.5) * factor));
      bool all_valid = true;
      for (int y = y0; y < y1 && all_valid; ++y)
        for (int x = x0; x < x1; ++x)
          if (!map.valid[map.idx(x, y)]) {
            all_valid = false;
            break;
          }
      if (!all_valid) continue;
      out.uvw[out.idx(ox, oy)] = map.uvw[map.idx(cx, cy)];
      out.valid[out.idx(ox, oy)] = 1;
    }
  }
  return out;
}

namespace {

inline double linf_diff(Vec3 a, Vec3 b) { return linf(a - b); }

// Bilinear UVW in pixel-center space; requires all four corners valid.
bool bilerp_uvw(const UvwMap& map, double x, double y, Vec3* value,
                Vec3* ddx = nullptr, Vec3* ddy = nullptr) {
  double u = x - 0.5, v = y - 0.5;
  int x0 = int(std::floor(u)), y0 = int(std::floor(v));
  if (x0 < 0 || y0 < 0 || x0 + 1 >= map.width || y0 + 1 >= map.height)
    return false;
  double fx = u - x0, fy = v - y0;
  const size_t i00 = map.idx(x0, y0), i10 = map.idx(x0 + 1, y0);
  const size_t i01 = map.idx(x0, y0 + 1), i11 = map.idx(x0 + 1, y0 + 1);
  if (!map.valid[i00] || !map.valid[i10] || !map.valid[i01] || !map.valid[i11])
    return false;
  Vec3 a = map.uvw[i00], b = map.uvw[i10], c = map.uvw[i01], d = map.uvw[i11];
  *value = (1 - fx) * (1 - fy) * a + fx * (1 - fy) * b + (1 - fx) * fy * c +
           fx * fy * d;
  if (ddx) *ddx = (1 - fy) * (b - a) + fy * (d - c);
  if (ddy) *ddy = (1 - fx) * (c - a) + fx * (d - b);
  return true;
}

// Refines a full-resolution integer match to the sub-pixel position whose
// bilinear UVW best reproduces the track key (Gauss-Newton on 2 unknowns).
Vec2 refine_subpixel(const UvwMap& map, Vec3 key, int px, int py, double radius) {
  // Integer polish first: best valid pixel in the local window.
  int best_x = px, best_y = py;
  double best_d2 = std::numeric_limits<double>::infinity();
  int r = int(std::ceil(radius));
  for (int y = std::max(0, py - r); y <= std::min(map.height - 1, py + r); ++y) {
    for (int x = std::max(0, px - r); x <= std::min(map.width - 1, px + r); ++x) {
      if (!map.valid[map.idx(x, y)]) continue;
      Vec3 diff = map.uvw[map.idx(x, y)] - key;
      double d2 = dot(diff, diff);
      if (d2 < best_d2) {
        best_d2 = d2;
        best_x = x;
        best_y = y;
      }
    }
  }
  Vec2 pos{best_x + 0.5, best_y + 0.5};
  Vec2 best_pos = pos;
  for (int iter = 0; iter < 12; ++iter) {
    Vec3 val, dx, dy;
    if (!bilerp_uvw(map, pos.x, pos.y, &val, &dx, &dy)) break;
    Vec3 res = val - key;
    double d2 = dot(res, res);
    if (d2 < best_d2) {
      best_d2 = d2;
      best_pos = pos;
    }
    // Normal equations of the 3x2 Jacobian.
    double a00 = dot(dx, dx), a01 = dot(dx, dy), a11 = dot(dy, dy);
    double b0 = -dot(dx, res), b1 = -dot(dy, res);
    double det2 = a00 * a11 - a01 * a01;
    if (std::abs(det2) < 1e-18) break;
    double sx = (b0 * a11 - b1 * a01) / det2;
    double sy = (b1 * a00 - b0 * a01) / det2;
    double step = std::max(std::abs(sx), std::abs(sy));
    if (step > 1.5) {
      sx *= 1.5 / step;
      sy *= 1.5 / step;
    }
    pos.x += sx;
    pos.y += sy;
    // Stay near the coarse match.
    pos.x = std::min(best_x + 0.5 + radius, std::max(best_x + 0.5 - radius, pos.x));
    pos.y = std::min(best_y + 0.5 + radius, std::max(best_y + 0.5 - radius, pos.y));
    if (step < 1e-10) break;
  }
  // Final evaluation; keep whichever position reproduced the key best.
  Vec3 val;
  if (bilerp_uvw(map, pos.x, pos.y, &val)) {
    Vec3 res = val - key;
    if (dot(res, res) < best_d2) best_pos = pos;
  }
  return best_pos;
}

// UVW at a continuous position: bilinear when possible, else the containing
// pixel.
bool uvw_at(const UvwMap& map, Vec2 pos, Vec3* out) {
  if (bilerp_uvw(map, pos.x, pos.y, out)) return true;
  int x = int(std::floor(pos.x)), y = int(std::floor(pos.y));
  if (!map.in_bounds(x, y) || !map.valid[map.idx(x, y)]) return false;
  *out = map.uvw[map.idx(x, y)];
  return true;
}

}  // namespace

std::vector<MultiViewTrack> build_tracks(const std::vector<UvwMap>& maps,
                                         const StereoConfig& cfg) {
  validate_stereo_config(cfg);
  if (maps.size() < 2) fail(ErrorKind::argument, "build_tracks needs >= 2 maps");
  const double f = cfg.downsample_factor;

  std::vector<UvwMap> coarse;
  coarse.reserve(maps.size());
  for (const UvwMap& m : maps) coarse.push_back(downsample_uvw(m, f));

  std::vector<std::unique_ptr<NnIndex>> indices(maps.size());
  for (size_t v = 1; v < maps.size(); ++v)
    if (coarse[v].count_valid() > 0)
      indices[v] = std::make_unique<NnIndex>(coarse[v]);

  std::vector<MultiViewTrack> tracks;
  const UvwMap& seed_map = coarse[0];
  for (int sy = 0; sy < seed_map.height; ++sy) {
    for (int sx = 0; sx < seed_map.width; ++sx) {
      if (!seed_map.valid[seed_map.idx(sx, sy)]) continue;
      MultiViewTrack tr;
      tr.key = seed_map.uvw[seed_map.idx(sx, sy)];
      // The seed's own observation: the sampled full-resolution pixel center.
      double fx0 = std::floor((sx + 0.5) * f) + 0.5;
      double fy0 = std::floor((sy + 0.5) * f) + 0.5;
      tr.obs.push_back({0, {fx0, fy0}});

      for (size_t v = 1; v < maps.size(); ++v) {
        if (!indices[v]) continue;
        auto [idx, d2] = indices[v]->nearest(tr.key);
        (void)d2;
        int cx = int(idx % coarse[v].width), cy = int(idx / coarse[v].width);
        if (linf_diff(coarse[v].uvw[size_t(idx)], tr.key) > cfg.uvw_tol) continue;
        int full_px = int(std::floor((cx + 0.5) * f));
        int full_py = int(std::floor((cy + 0.5) * f));
        Vec2 pos = refine_subpixel(maps[v], tr.key, full_px, full_py,
                                   std::ceil(f));
        // Extensions must localize on a fully valid bilinear patch; a
        // silhouette-clipped neighborhood cannot support sub-pixel accuracy.
        // Grazing patches whose embedding moves by more than the tolerance
        // per pixel cannot pin the match either, unless the match reproduces
        // the key exactly (then it is localized no matter the slope).
        Vec3 val, ddx, ddy;
        if (!bilerp_uvw(maps[v], pos.x, pos.y, &val, &ddx, &ddy)) continue;
        double residual = linf_diff(val, tr.key);
        if (residual > 1e-9 && std::max(linf(ddx), linf(ddy)) > cfg.uvw_tol)
          continue;
        if (residual > cfg.uvw_tol) continue;
        tr.obs.push_back({int(v), pos});
      }

      if (int(tr.obs.size()) < cfg.min_track_len) continue;
      // Validation at the doubled tolerance over every observation.
      bool ok = true;
      for (const Observation& o : tr.obs) {
        Vec3 val;
        if (!uvw_at(maps[size_t(o.view)], o.px, &val) ||
            linf_diff(val, tr.key) > cfg.track_tol) {
          ok = false;
          break;
        }
      }
      if (ok) tracks.push_back(std::move(tr));
    }
  }
  return tracks;
}

Vec3 triangulate_dlt(const MultiViewTrack& track,
                     const std::vector<Camera>& cameras) {
  if (track.obs.size() < 2)
    fail(ErrorKind::argument, "triangulation needs >= 2 observations");
  std::array<double, 16> m{};
  for (const Observation& o : track.obs) {
    if (o.view < 0 || size_t(o.view) >= cameras.size())
      fail(ErrorKind::argument, "observation view has no camera");
    const Camera& cam = cameras[size_t(o.view)];
    // P = K [R | t], rows of the 3x4 projection matrix.
    double p[3][4];
    for (int c = 0; c < 3; ++c) {
      p[0][c] = cam.fx * cam.rot(0, c) + cam.cx * cam.rot(2, c);
      p[1][c] = cam.fy * cam.rot(1, c) + cam.cy * cam.rot(2, c);
      p[2][c] = cam.rot(2, c);
    }
    p[0][3] = cam.fx * cam.trans.x + cam.cx * cam.trans.z;
    p[1][3] = cam.fy * cam.trans.y + cam.cy * cam.trans.z;
    p[2][3] = cam.trans.z;

    double rows[2][4];
    for (int c = 0; c < 4; ++c) {
      rows[0][c] = o.px.x * p[2][c] - p[0][c];
      rows[1][c] = o.px.y * p[2][c] - p[1][c];
    }
    for (auto& row : rows) {
      double n = std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2] +
                           row[3] * row[3]);
      if (n < 1e-300) fail(ErrorKind::degenerate, "zero DLT row");
      for (double& x : row) x /= n;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) m[size_t(i) * 4 + j] += row[i] * row[j];
    }
  }
  SymEigen4 eig = sym_eigen_4x4(m);
  double scale = std::max(std::abs(eig.values[3]), 1e-30);
  if (eig.values[1] < 1e-10 * scale)
    fail(ErrorKind::degenerate,
         "rank-deficient triangulation (collinear or duplicate rays)");
  const auto& h = eig.vectors[0];
  if (std::abs(h[3]) < 1e-12)
    fail(ErrorKind::degenerate, "triangulated point at infinity");
  return {h[0] / h[3], h[1] / h[3], h[2] / h[3]};
}

std::vector<CloudPoint> reconstruct(const std::vector<UvwMap>& maps,
                                    const std::vector<Camera>& cameras,
                                    const std::vector<const RgbImage*>& rgbs,
                                    const StereoConfig& cfg, ReconStats* stats) {
  validate_stereo_config(cfg);
  if (maps.size() != cameras.size())
    fail(ErrorKind::argument, "maps and cameras must align");
  for (const Camera& cam : cameras) validate_camera(cam);

  ReconStats local;
  std::vector<MultiViewTrack> tracks = build_tracks(maps, cfg);
  local.tracks_built = tracks.size();
  local.tracks_validated = tracks.size();

  std::vector<CloudPoint> cloud;
  for (const MultiViewTrack& tr : tracks) {
    Vec3 x;
    try {
      x = triangulate_dlt(tr, cameras);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::degenerate) continue;  // logged in stats
      throw;
    }
    ++local.triangulated;
    bool ok = true;
    for (const Observation& o : tr.obs) {
      Vec3 cp = to_camera(cameras[size_t(o.view)], x);
      if (cp.z <= 1e-9) {
        ok = false;
        break;
      }
      Vec2 proj = project(cameras[size_t(o.view)], cp);
      double err = norm(proj - o.px);
      if (err > cfg.reproj_thresh_px) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    CloudPoint pt;
    pt.pos = x;
    if (!rgbs.empty()) {
      double acc[3] = {0, 0, 0};
      int cnt = 0;
      for (const Observation& o : tr.obs) {
        const RgbImage* img = rgbs[size_t(o.view)];
        if (!img) continue;
        int px = int(std::floor(o.px.x)), py = int(std::floor(o.px.y));
        if (!img->in_bounds(px, py)) continue;
        const float* c = img->px(px, py);
        for (int k = 0; k < 3; ++k) acc[k] += c[k];
        ++cnt;
      }
      if (cnt > 0)
        for (int k = 0; k < 3; ++k)
          pt.color[size_t(k)] =
              uint8_t(std::lround(std::min(1.0, acc[k] / cnt) * 255.0));
    }
    cloud.push_back(pt);
  }
  local.kept = cloud.size();
  local.seeds = 0;
  {
    UvwMap seed_map = downsample_uvw(maps[0], cfg.downsample_factor);
    local.seeds = seed_map.count_valid();
  }
  if (stats) *stats = local;
  return cloud;
}

void write_ply(const std::string& path, const std::vector<CloudPoint>& cloud) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open for writing: " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         "end_header\n";
  out.precision(9);
  for (const CloudPoint& p : cloud)
    out << p.pos.x << " " << p.pos.y << " " << p.pos.z << " " << int(p.color[0])
        << " " << int(p.color[1]) << " " << int(p.color[2]) << "\n";
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

void write_recon_stats(const std::string& path, const ReconStats& stats) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open for writing: " + path);
  out << "seeds " << stats.seeds << "\n"
      << "tracks_built " << stats.tracks_built << "\n"
      << "tracks_validated " << stats.tracks_validated << "\n"
      << "triangulated " << stats.triangulated << "\n"
      << "kept " << stats.kept << "\n";
}

}  // namespace densemarks
