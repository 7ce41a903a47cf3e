#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densemarks/common.hpp"
#include "densemarks/image.hpp"
#include "densemarks/linalg.hpp"
#include "densemarks/rng.hpp"

namespace densemarks {

// Region labels on the head template.
enum HeadRegion : int {
  kRegionSkin = 0,
  kRegionHair = 1,
  kRegionLeftEar = 2,
  kRegionRightEar = 3,
  kRegionNose = 4,
  kRegionNeck = 5,
  kNumRegions = 6,
};

constexpr int kNumLandmarks = 70;

// Deformable ellipsoid head with ear/nose protrusions. Canonical coordinates
// are the rest positions normalized into the unit cube by the rest bounding
// box, so ground-truth UVW maps are exact by construction.
struct HeadTemplate {
  std::vector<Vec3> rest;
  std::vector<Vec3> rest_normal;
  std::vector<Vec3> canonical;                // in [0,1]^3
  std::vector<int> label;                     // HeadRegion per vertex
  std::vector<std::array<int, 3>> tris;
  std::vector<int> landmarks;                 // kNumLandmarks vertex indices
  // Expression deformation: two smooth modes along vertex normals.
  std::vector<double> deform_w1, deform_w2;
  std::vector<double> deform_phase1, deform_phase2;
  Vec3 bbox_min, bbox_max;

  Vec3 landmark_canonical(int k) const { return canonical[size_t(landmarks[size_t(k)])]; }
};

// The shared template (deterministic; built once).
const HeadTemplate& head_template();

// Vertex positions for a deformation phase, before any rigid motion.
std::vector<Vec3> deformed_vertices(const HeadTemplate& tmpl, double amp,
                                    double phase);

struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3 rot;    // world-to-camera rotation
  Vec3 trans;  // world-to-camera translation
  int width = 0, height = 0;
};

// Validates orthonormality (1e-9), det +1, positive focal lengths.
void validate_camera(const Camera& cam);

// Camera at (0,0,distance) looking at the origin, image y pointing down.
Camera make_default_camera(int size, double distance = 5.0,
                           double focal_per_px = 1.7);

inline Vec3 to_camera(const Camera& cam, Vec3 p) { return cam.rot * p + cam.trans; }

// Continuous pixel coordinates; pixel (i,j) covers [i,i+1)x[j,j+1) with its
// center at (i+0.5, j+0.5).
inline Vec2 project(const Camera& cam, Vec3 cam_point) {
  return {cam.fx * cam_point.x / cam_point.z + cam.cx,
          cam.fy * cam_point.y / cam_point.z + cam.cy};
}

void save_camera(const std::string& path, const Camera& cam);
Camera load_camera(const std::string& path);

// --- rasterizer --------------------------------------------------------------

// Z-buffered triangle rasterization sampled at pixel centers with a top-left
// tie rule; barycentrics are perspective-correct.
struct RasterBuffers {
  Image<float> depth;     // camera z; +inf where empty
  Image<int32_t> tri;     // triangle index; -1 where empty
  Image<Vec3> bary;       // perspective-correct barycentrics of the winner
};

RasterBuffers rasterize_mesh(const std::vector<Vec3>& world_vertices,
                             const std::vector<std::array<int, 3>>& tris,
                             const Camera& cam);

// Procedural albedo as a function of the canonical coordinate only, so that
// appearance tracks the surface under any pose.
Vec3 canonical_texture(Vec3 canon);

struct LandmarkObs {
  double x = -1.0, y = -1.0;  // continuous pixel coordinates
  bool visible = false;
};

// One rendered frame plus the buffers that downstream ground-truth queries
// (tracking, visibility) need.
struct FrameData {
  RgbImage rgb;
  Image<uint8_t> mask;    // 255 foreground
  Image<uint8_t> labels;  // HeadRegion, 0 where background
  UvwMap uvw;
  std::vector<LandmarkObs> landmarks;
  Mat3 pose_rot;
  double deform_phase = 0.0;
  // internals
  RasterBuffers raster;
  std::vector<Vec3> posed;
};

struct MotionParams {
  double yaw_amp = 0.7;      // radians
  double pitch_amp = 0.3;    // radians
  double deform_amp = 0.05;  // world units along normals
};

struct Sequence {
  Camera camera;
  MotionParams motion;
  uint64_t seed = 0;
  std::vector<FrameData> frames;
};

// Renders the template under a rigid pose; world = rot * vertex (plus the
// deformation when deform_amp != 0).
FrameData render_frame(const HeadTemplate& tmpl, const Mat3& pose_rot,
                       double deform_amp, double deform_phase, const Camera& cam);

// UVW-only render of arbitrarily transformed template vertices (used by the
// pose fitter).
UvwMap render_uvw_posed(const HeadTemplate& tmpl,
                        const std::vector<Vec3>& world_vertices,
                        const Camera& cam);

Sequence generate_sequence(uint64_t seed, int frames, int size,
                           const Camera& cam, const MotionParams& motion);

// --- track pairs -------------------------------------------------------------

struct TrackPairs {
  std::vector<std::array<int, 2>> a;  // pixels in frame i
  std::vector<std::array<int, 2>> b;  // pixels in frame j
  std::vector<int> id;                // provenance

  size_t count() const { return a.size(); }
};

constexpr int kMinTracks = 80;
constexpr int kMaxTracks = 400;

// Samples surface points uniformly over frame i's foreground, follows them
// through the known deformation to frame j, and keeps those passing the
// z-buffer visibility test in both. Fewer than kMinTracks survivors rejects
// the pair, the way a tracker discards a barely co-visible one.
TrackPairs sample_track_pairs(const Sequence& seq, int frame_i, int frame_j,
                              int budget, uint64_t seed);

// --- augmentation ------------------------------------------------------------

struct AugmentDraw {
  bool do_shift = false, do_scale = false, do_rot = false;
  double shift_x = 0.0, shift_y = 0.0;  // fractions of width/height
  double scale = 1.0;
  double angle = 0.0;  // radians
};

// Shift/scale in [-10%,10%], rotation in [-18deg,18deg], each drawn with
// probability 1/2.
AugmentDraw draw_augment(Rng& rng);

// Forward affine p' = M (p - c) + c + t on continuous pixel coordinates.
struct AffineAug {
  double m00 = 1, m01 = 0, m10 = 0, m11 = 1;
  double tx = 0, ty = 0;  // full translation including the center terms
};

AffineAug make_affine(const AugmentDraw& d, int width, int height);
AffineAug invert(const AffineAug& a);
inline Vec2 apply_affine(const AffineAug& a, Vec2 p) {
  return {a.m00 * p.x + a.m01 * p.y + a.tx, a.m10 * p.x + a.m11 * p.y + a.ty};
}

struct FrameBundle {
  RgbImage rgb;
  Image<uint8_t> mask;
  Image<uint8_t> labels;
  UvwMap uvw;
  std::vector<LandmarkObs> landmarks;
};

// One affine map applied consistently: bilinear for the image, nearest for
// masks/labels, UVW bilinear only where all contributors are valid. Points
// leaving the frame come back flagged invisible.
FrameBundle augment_bundle(const FrameBundle& in, const AffineAug& aug);

// --- sequence directory layout -----------------------------------------------

// frame_%04d.ppm, mask_%04d.pgm, labels_%04d.pgm, uvw_%04d.dmv,
// landmarks.txt (70 lines "k x y" per frame; -1 -1 when occluded),
// tracks_i_j.txt ("x1 y1 x2 y2" per line), camera.txt.
void save_sequence(const Sequence& seq, const std::string& dir,
                   int track_budget, uint64_t track_seed);

struct LoadedSequence {
  Camera camera;
  std::vector<RgbImage> frames;
  std::vector<Image<uint8_t>> masks;
  std::vector<Image<uint8_t>> labels;
  std::vector<UvwMap> uvws;
  std::vector<std::vector<LandmarkObs>> landmarks;
  std::vector<std::array<int, 2>> track_pairs_index;  // available (i,j), i<j
  std::vector<TrackPairs> track_pairs;

  int frame_count() const { return int(frames.size()); }
};

LoadedSequence load_sequence_dir(const std::string& dir);

}  // namespace densemarks
