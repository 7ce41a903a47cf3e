#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "densemarks/matcher.hpp"
#include "densemarks/rng.hpp"
#include "densemarks/synthetic_heads.hpp"

using namespace densemarks;
namespace fs = std::filesystem;

namespace {

Sequence tiny_sequence(uint64_t seed = 3, int frames = 4, int size = 64,
                       MotionParams motion = {}) {
  return generate_sequence(seed, frames, size, make_default_camera(size), motion);
}

}  // namespace

TEST_CASE("template: invariants") {
  const HeadTemplate& t = head_template();
  CHECK(t.landmarks.size() == size_t(kNumLandmarks));
  std::set<int> distinct(t.landmarks.begin(), t.landmarks.end());
  CHECK(distinct.size() == size_t(kNumLandmarks));
  for (int v : t.landmarks) {
    CHECK(v >= 0);
    CHECK(v < int(t.rest.size()));
  }
  for (Vec3 c : t.canonical)
    for (int k = 0; k < 3; ++k) {
      CHECK(c[k] >= 0.0);
      CHECK(c[k] <= 1.0);
    }
  for (int l : t.label) {
    CHECK(l >= 0);
    CHECK(l < kNumRegions);
  }
  // All six regions actually appear.
  std::set<int> regions(t.label.begin(), t.label.end());
  CHECK(regions.size() == size_t(kNumRegions));
}

TEST_CASE("camera: generated cameras satisfy the invariants") {
  for (int size : {32, 64, 128}) {
    Camera cam = make_default_camera(size);
    validate_camera(cam);  // must not throw
    Mat3 rtr = transpose(cam.rot) * cam.rot;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(std::abs(rtr(i, j) - (i == j ? 1.0 : 0.0)) < 1e-12);
    CHECK(det(cam.rot) == doctest::Approx(1.0).epsilon(1e-12));
  }
  Camera bad = make_default_camera(64);
  bad.fx = -1.0;
  CHECK_THROWS_AS(validate_camera(bad), Error);
  bad = make_default_camera(64);
  bad.rot.m[0] = 2.0;
  CHECK_THROWS_AS(validate_camera(bad), Error);
}

TEST_CASE("camera file round trip") {
  Camera cam = make_default_camera(48, 4.5, 1.3);
  std::string path = (fs::temp_directory_path() / "dm_cam.txt").string();
  save_camera(path, cam);
  Camera back = load_camera(path);
  CHECK(back.fx == cam.fx);
  CHECK(back.width == cam.width);
  for (int i = 0; i < 9; ++i) CHECK(back.rot.m[i] == cam.rot.m[i]);
  fs::remove(path);
}

TEST_CASE("rasterizer: shared edges render exactly once") {
  // Two triangles forming a quad must tile it with no double-covered and no
  // missed interior pixels under the top-left rule.
  Camera cam = make_default_camera(64);
  Rng rng(15);
  for (int rep = 0; rep < 20; ++rep) {
    Vec3 base{rng.uniform(-0.8, 0.2), rng.uniform(-0.8, 0.2), 1.0};
    Vec3 du{rng.uniform(0.4, 1.0), rng.uniform(-0.2, 0.2), 0.0};
    Vec3 dv{rng.uniform(-0.2, 0.2), rng.uniform(0.4, 1.0), 0.0};
    std::vector<Vec3> quad = {base, base + du, base + dv, base + du + dv};
    std::vector<std::array<int, 3>> two = {{0, 1, 2}, {1, 3, 2}};
    RasterBuffers rb = rasterize_mesh(quad, two, cam);

    std::vector<std::array<int, 3>> upper = {{0, 1, 2}};
    std::vector<std::array<int, 3>> lower = {{1, 3, 2}};
    RasterBuffers ra = rasterize_mesh(quad, upper, cam);
    RasterBuffers rl = rasterize_mesh(quad, lower, cam);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        bool in_a = ra.tri.at(x, y) >= 0;
        bool in_b = rl.tri.at(x, y) >= 0;
        bool in_quad = rb.tri.at(x, y) >= 0;
        CHECK(int(in_a) + int(in_b) == int(in_quad));  // partition, no overlap
      }
  }
}

TEST_CASE("rasterizer: barycentrics are convex weights") {
  Camera cam = make_default_camera(96);
  const HeadTemplate& t = head_template();
  RasterBuffers rb = rasterize_mesh(t.rest, t.tris, cam);
  size_t covered = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      if (rb.tri.at(x, y) < 0) continue;
      ++covered;
      Vec3 bc = rb.bary.at(x, y);
      CHECK(bc[0] >= -1e-9);
      CHECK(bc[1] >= -1e-9);
      CHECK(bc[2] >= -1e-9);
      CHECK(bc[0] + bc[1] + bc[2] == doctest::Approx(1.0).epsilon(1e-9));
    }
  CHECK(covered > 1000);
}

TEST_CASE("render: frontal vertices reproduce their canonical coords") {
  // Far, narrow-FOV camera approximates an orthographic view.
  Camera cam = make_default_camera(256, 60.0, 20.0);
  const HeadTemplate& t = head_template();
  FrameData f = render_frame(t, Mat3::identity(), 0.0, 0.0, cam);
  size_t checked = 0;
  for (size_t v = 0; v < t.rest.size(); ++v) {
    Vec3 dir = normalized(t.rest[v]);
    if (dir.z < 0.6) continue;  // frontal only; silhouettes self-occlude
    Vec3 cp = to_camera(cam, t.rest[v]);
    Vec2 px = project(cam, cp);
    int ix = int(std::floor(px.x)), iy = int(std::floor(px.y));
    if (!f.uvw.in_bounds(ix, iy) || !f.uvw.valid[f.uvw.idx(ix, iy)]) continue;
    Vec3 got = f.uvw.uvw[f.uvw.idx(ix, iy)];
    CHECK(linf(got - t.canonical[v]) < 2e-2);
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("render: two in-plane rotations are related by the image rotation") {
  // Rotating the object about the optical axis rotates the rendered UVW map.
  Camera cam = make_default_camera(96);
  const HeadTemplate& t = head_template();
  double ang = 0.3;
  Mat3 rz;  // rotation about world z (the optical axis direction)
  rz.m[0] = std::cos(ang); rz.m[1] = -std::sin(ang); rz.m[2] = 0;
  rz.m[3] = std::sin(ang); rz.m[4] = std::cos(ang);  rz.m[5] = 0;
  rz.m[6] = 0;             rz.m[7] = 0;              rz.m[8] = 1;
  FrameData f0 = render_frame(t, Mat3::identity(), 0.0, 0.0, cam);
  FrameData f1 = render_frame(t, rz, 0.0, 0.0, cam);
  // Image-space rotation about the principal point; note image y is down, so
  // the screen angle flips sign.
  double c = std::cos(-ang), s = std::sin(-ang);
  int agree = 0, total = 0;
  for (int y = 0; y < 96; y += 2)
    for (int x = 0; x < 96; x += 2) {
      if (!f0.uvw.valid[f0.uvw.idx(x, y)]) continue;
      double dx = (x + 0.5) - cam.cx, dy = (y + 0.5) - cam.cy;
      double rx = cam.cx + c * dx - s * dy;
      double ry = cam.cy + s * dx + c * dy;
      int ix = int(std::floor(rx)), iy = int(std::floor(ry));
      if (!f1.uvw.in_bounds(ix, iy) || !f1.uvw.valid[f1.uvw.idx(ix, iy)]) continue;
      ++total;
      Vec3 a = f0.uvw.uvw[f0.uvw.idx(x, y)];
      Vec3 b = f1.uvw.uvw[f1.uvw.idx(ix, iy)];
      if (linf(a - b) < 0.05) ++agree;  // resampling tolerance
    }
  CHECK(total > 200);
  CHECK(double(agree) / double(total) > 0.9);
}

TEST_CASE("render: landmark pixels carry the landmark canonical coordinate") {
  Sequence seq = tiny_sequence(5, 3, 96);
  const HeadTemplate& t = head_template();
  for (const FrameData& f : seq.frames) {
    int visible = 0;
    for (int k = 0; k < kNumLandmarks; ++k) {
      const LandmarkObs& o = f.landmarks[size_t(k)];
      if (!o.visible) continue;
      ++visible;
      int ix = int(std::floor(o.x)), iy = int(std::floor(o.y));
      REQUIRE(f.uvw.valid[f.uvw.idx(ix, iy)]);
      Vec3 got = f.uvw.uvw[f.uvw.idx(ix, iy)];
      // One-pixel rasterization tolerance.
      CHECK(linf(got - t.landmark_canonical(k)) < 0.08);
    }
    CHECK(visible > 30);
  }
}

TEST_CASE("render: empty frustum gives an all-invalid map and synth rejects it") {
  Camera cam = make_default_camera(64);
  cam.trans = Vec3{50.0, 0.0, 5.0};  // head far outside the view
  const HeadTemplate& t = head_template();
  UvwMap map = render_uvw_posed(t, t.rest, cam);
  CHECK(map.count_valid() == 0);
  CHECK_THROWS_AS(generate_sequence(1, 2, 64, cam, MotionParams{}), Error);
}

TEST_CASE("sequence: zero motion amplitude freezes all frames") {
  MotionParams still{0.0, 0.0, 0.0};
  Sequence seq = tiny_sequence(9, 3, 64, still);
  const FrameData& a = seq.frames[0];
  for (const FrameData& f : seq.frames) {
    CHECK(f.rgb.rgb == a.rgb.rgb);
    CHECK(f.mask.data == a.mask.data);
    CHECK(f.uvw.valid == a.uvw.valid);
  }
}

TEST_CASE("sequence: seed determinism") {
  Sequence a = tiny_sequence(42, 3, 64);
  Sequence b = tiny_sequence(42, 3, 64);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].rgb.rgb == b.frames[i].rgb.rgb);
    CHECK(a.frames[i].mask.data == b.frames[i].mask.data);
    for (size_t p = 0; p < a.frames[i].uvw.pixels(); ++p)
      CHECK(a.frames[i].uvw.uvw[p].x == b.frames[i].uvw.uvw[p].x);
  }
}

TEST_CASE("ground-truth consistency: co-visible surface points agree across frames") {
  Sequence seq = tiny_sequence(21, 5, 96);
  TrackPairs tp = sample_track_pairs(seq, 0, 3, 200, 55);
  const UvwMap& ua = seq.frames[0].uvw;
  const UvwMap& ub = seq.frames[3].uvw;
  double tol = 2.0 / 96.0;  // rasterization tolerance from the pair gate
  for (size_t k = 0; k < tp.count(); ++k) {
    Vec3 va = ua.uvw[ua.idx(tp.a[k][0], tp.a[k][1])];
    Vec3 vb = ub.uvw[ub.idx(tp.b[k][0], tp.b[k][1])];
    CHECK(linf(va - vb) < tol);
  }
}

TEST_CASE("mask/label agreement: foreground equals UVW validity, labels dominant") {
  Sequence seq = tiny_sequence(33, 2, 64);
  for (const FrameData& f : seq.frames) {
    for (int y = 0; y < f.mask.height; ++y)
      for (int x = 0; x < f.mask.width; ++x) {
        CHECK((f.mask.at(x, y) != 0) == (f.uvw.valid[f.uvw.idx(x, y)] != 0));
        if (f.mask.at(x, y)) {
          int32_t ti = f.raster.tri.at(x, y);
          Vec3 bc = f.raster.bary.at(x, y);
          int dom = 0;
          if (bc[1] > bc[dom]) dom = 1;
          if (bc[2] > bc[dom]) dom = 2;
          int expect = head_template()
                           .label[size_t(head_template().tris[size_t(ti)][size_t(dom)])];
          CHECK(int(f.labels.at(x, y)) == expect);
        }
      }
  }
}

TEST_CASE("track pairs: static motion maps pixels to themselves") {
  MotionParams still{0.0, 0.0, 0.0};
  Sequence seq = tiny_sequence(11, 3, 64, still);
  TrackPairs tp = sample_track_pairs(seq, 0, 2, 150, 7);
  CHECK(tp.count() >= size_t(kMinTracks));
  for (size_t k = 0; k < tp.count(); ++k) {
    CHECK(tp.a[k][0] == tp.b[k][0]);
    CHECK(tp.a[k][1] == tp.b[k][1]);
  }
}

TEST_CASE("track pairs: opposite views exercise the rejection path") {
  Camera cam = make_default_camera(64);
  const HeadTemplate& t = head_template();
  Sequence seq;
  seq.camera = cam;
  seq.frames.push_back(render_frame(t, rot_y(0.0), 0.0, 0.0, cam));
  seq.frames.push_back(render_frame(t, rot_y(3.14159265358979), 0.0, 0.0, cam));
  CHECK_THROWS_AS(sample_track_pairs(seq, 0, 1, 200, 1), Error);
}

TEST_CASE("track pairs: frame pair preconditions") {
  Sequence seq = tiny_sequence(2, 3, 64);
  CHECK_THROWS_AS(sample_track_pairs(seq, 1, 1, 100, 0), Error);
  CHECK_THROWS_AS(sample_track_pairs(seq, 0, 9, 100, 0), Error);
}

TEST_CASE("augment: no draws means identity") {
  AugmentDraw none;
  AffineAug a = make_affine(none, 64, 64);
  Vec2 p{13.2, 45.9};
  Vec2 q = apply_affine(a, p);
  CHECK(q.x == doctest::Approx(p.x).epsilon(1e-15));
  CHECK(q.y == doctest::Approx(p.y).epsilon(1e-15));

  Sequence seq = tiny_sequence(8, 2, 64);
  FrameBundle in{seq.frames[0].rgb, seq.frames[0].mask, seq.frames[0].labels,
                 seq.frames[0].uvw, seq.frames[0].landmarks};
  FrameBundle out = augment_bundle(in, a);
  CHECK(out.mask.data == in.mask.data);
  CHECK(out.labels.data == in.labels.data);
  for (size_t i = 0; i < in.rgb.rgb.size(); ++i)
    CHECK(out.rgb.rgb[i] == doctest::Approx(in.rgb.rgb[i]).epsilon(1e-6));
}

TEST_CASE("augment: pure +10% width shift moves landmarks by exactly 0.1 W") {
  AugmentDraw d;
  d.do_shift = true;
  d.shift_x = 0.10;
  d.shift_y = 0.0;
  AffineAug a = make_affine(d, 80, 64);
  Vec2 p{20.0, 30.0};
  Vec2 q = apply_affine(a, p);
  CHECK(q.x == doctest::Approx(28.0).epsilon(1e-12));
  CHECK(q.y == doctest::Approx(30.0).epsilon(1e-12));
}

TEST_CASE("augment: forward-then-inverse returns points within 0.51 px") {
  Rng rng(19);
  for (int rep = 0; rep < 100; ++rep) {
    AugmentDraw d = draw_augment(rng);
    AffineAug a = make_affine(d, 64, 64);
    AffineAug inv = invert(a);
    Vec2 p{rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0)};
    Vec2 back = apply_affine(inv, apply_affine(a, p));
    CHECK(std::abs(back.x - p.x) < 0.51);
    CHECK(std::abs(back.y - p.y) < 0.51);
    CHECK(std::abs(back.x - p.x) < 1e-9);  // the continuous round trip is exact
  }
}

TEST_CASE("augment: rotated maps stay consistent with transformed landmarks") {
  Sequence seq = tiny_sequence(14, 2, 96);
  AugmentDraw d;
  d.do_rot = true;
  d.angle = 0.25;
  AffineAug a = make_affine(d, 96, 96);
  FrameBundle in{seq.frames[0].rgb, seq.frames[0].mask, seq.frames[0].labels,
                 seq.frames[0].uvw, seq.frames[0].landmarks};
  FrameBundle out = augment_bundle(in, a);
  int checked = 0, agree = 0;
  for (size_t k = 0; k < out.landmarks.size(); ++k) {
    if (!out.landmarks[k].visible || !in.landmarks[k].visible) continue;
    int ix = int(std::floor(out.landmarks[k].x));
    int iy = int(std::floor(out.landmarks[k].y));
    if (!out.uvw.in_bounds(ix, iy) || !out.uvw.valid[out.uvw.idx(ix, iy)]) continue;
    int jx = int(std::floor(in.landmarks[k].x));
    int jy = int(std::floor(in.landmarks[k].y));
    Vec3 before = in.uvw.uvw[in.uvw.idx(jx, jy)];
    Vec3 after = out.uvw.uvw[out.uvw.idx(ix, iy)];
    if (linf(after - before) < 0.1) ++agree;  // grazing pixels resample badly
    ++checked;
  }
  CHECK(checked > 20);
  CHECK(double(agree) / double(checked) > 0.85);
}

TEST_CASE("sequence save/load round trip") {
  Sequence seq = tiny_sequence(77, 3, 64);
  std::string dir = (fs::temp_directory_path() / "dm_seq_rt").string();
  fs::remove_all(dir);
  save_sequence(seq, dir, 150, 4242);
  LoadedSequence ls = load_sequence_dir(dir);
  CHECK(ls.frame_count() == 3);
  CHECK(ls.camera.fx == seq.camera.fx);
  CHECK(!ls.track_pairs.empty());
  for (size_t p = 0; p < ls.track_pairs.size(); ++p) {
    CHECK(ls.track_pairs[p].count() >= size_t(kMinTracks));
    CHECK(ls.track_pairs[p].count() <= size_t(kMaxTracks));
  }
  for (size_t i = 0; i < seq.frames[0].uvw.pixels(); ++i) {
    CHECK(ls.uvws[0].valid[i] == seq.frames[0].uvw.valid[i]);
    if (seq.frames[0].uvw.valid[i])
      CHECK(ls.uvws[0].uvw[i].x ==
            doctest::Approx(seq.frames[0].uvw.uvw[i].x).epsilon(1e-6));
  }
  fs::remove_all(dir);
}
