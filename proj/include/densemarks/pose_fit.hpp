#pragma once

#include <vector>

#include "densemarks/image.hpp"
#include "densemarks/linalg.hpp"
#include "densemarks/synthetic_heads.hpp"

namespace densemarks {

// Rigid pose plus uniform scale: world = exp(log_scale) * R(axis_angle) * v
// + translation. The axis-angle chart is kept inside |aa| < pi.
struct RigidPose {
  Vec3 axis_angle;
  Vec3 translation;
  double log_scale = 0.0;
};

std::vector<Vec3> pose_vertices(const HeadTemplate& tmpl, const RigidPose& pose);
UvwMap render_pose_uvw(const HeadTemplate& tmpl, const RigidPose& pose,
                       const Camera& cam);

constexpr double kHuberDelta = 0.05;  // cube units, the stereo UVW tolerance

// Huber-shaped residual: identical to the plain difference below delta,
// sqrt-tempered above it (so squared residuals sum to the Huber loss).
double huber_residual(double e, double delta = kHuberDelta);

// Per-pixel componentwise residuals (rendered - observed) over the pixels
// valid in both maps; empty when the overlap is empty.
std::vector<double> pose_residuals(const HeadTemplate& tmpl, const RigidPose& pose,
                                   const Camera& cam, const UvwMap& observed);

struct FitStep {
  double cost_before = 0.0;  // on this iteration's support
  double cost_after = 0.0;   // same support; never larger on accepted steps
  double lambda = 0.0;
};

struct FitResult {
  RigidPose pose;
  double cost = 0.0;
  int iters = 0;
  std::vector<FitStep> trace;  // accepted steps only
  bool converged = false;
};

// Gauss-Newton with central-difference Jacobian (step 1e-4) and Levenberg
// damping: lambda starts at 1e-3, x10 on a rejected step, x0.1 on an
// accepted one. Stops on relative cost change < 1e-8 or the iteration cap.
FitResult fit_pose(const HeadTemplate& tmpl, const Camera& cam,
                   const UvwMap& observed, RigidPose init, int iters);

// A single-camera UVW loss cannot observe scale against depth: scaling the
// model by k while moving it along the camera-center rays, t' = C + k(t - C),
// renders the identical map. This picks the gauge representative with the
// given scale (log_scale = target), so recovered poses can be compared.
RigidPose normalize_pose_gauge(const RigidPose& pose, const Camera& cam,
                               double target_log_scale = 0.0);

}  // namespace densemarks
