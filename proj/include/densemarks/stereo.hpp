#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densemarks/image.hpp"
#include "densemarks/linalg.hpp"
#include "densemarks/synthetic_heads.hpp"

namespace densemarks {

struct StereoConfig {
  double downsample_factor = 4.0;
  int min_track_len = 2;
  double uvw_tol = 0.05;        // L-inf gate for track extension
  double track_tol = 0.10;      // doubled tolerance for track validation
  double reproj_thresh_px = 10.0;  // at full resolution
};

void validate_stereo_config(const StereoConfig& cfg);

// One observation of a canonical point: continuous full-resolution pixel
// coordinates (pixel (i,j) has center (i+0.5, j+0.5)).
struct Observation {
  int view = 0;
  Vec2 px;
};

struct MultiViewTrack {
  Vec3 key;  // canonical coordinate the track is built around
  std::vector<Observation> obs;
};

// Block-center downsampling; a coarse pixel is valid only when its whole
// block is valid.
UvwMap downsample_uvw(const UvwMap& map, double factor);

// Seeds tracks at view 0's valid coarse pixels and greedily extends each to
// the other views: coarse match by nearest embedding, gated at uvw_tol
// (L-inf), then refined to sub-pixel on the full-resolution map by inverting
// the local bilinear UVW patch. Tracks are validated at track_tol and kept
// when at least min_track_len views observe them.
std::vector<MultiViewTrack> build_tracks(const std::vector<UvwMap>& maps,
                                         const StereoConfig& cfg);

// Homogeneous DLT: two rows (x P3 - P1, y P3 - P2) per observation, rows
// normalized to unit length, smallest right singular vector of the stack.
Vec3 triangulate_dlt(const MultiViewTrack& track,
                     const std::vector<Camera>& cameras);

struct CloudPoint {
  Vec3 pos;
  std::array<uint8_t, 3> color{200, 200, 200};
};

struct ReconStats {
  size_t seeds = 0;
  size_t tracks_built = 0;
  size_t tracks_validated = 0;
  size_t triangulated = 0;
  size_t kept = 0;
};

// build_tracks -> DLT per track -> keep points whose maximum full-resolution
// reprojection error is within reproj_thresh_px; colors are the mean of the
// observation pixels when images are supplied.
std::vector<CloudPoint> reconstruct(const std::vector<UvwMap>& maps,
                                    const std::vector<Camera>& cameras,
                                    const std::vector<const RgbImage*>& rgbs,
                                    const StereoConfig& cfg,
                                    ReconStats* stats = nullptr);

void write_ply(const std::string& path, const std::vector<CloudPoint>& cloud);
void write_recon_stats(const std::string& path, const ReconStats& stats);

}  // namespace densemarks
