#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "densemarks/pose_fit.hpp"
#include "densemarks/rng.hpp"
#include "densemarks/synthetic_heads.hpp"

using namespace densemarks;

namespace {
constexpr double kDeg = 3.14159265358979323846 / 180.0;

double rot_error_deg(const RigidPose& a, const RigidPose& b) {
  return rotation_geodesic(axis_angle_to_matrix(a.axis_angle),
                           axis_angle_to_matrix(b.axis_angle)) /
         kDeg;
}
}  // namespace

TEST_CASE("huber residual: quadratic core, tempered tails") {
  for (double e : {-0.04, -0.01, 0.0, 0.02, 0.049}) {
    CHECK(huber_residual(e) == e);  // identical below delta
  }
  double big = huber_residual(0.3);
  CHECK(big < 0.3);
  CHECK(big == doctest::Approx(std::sqrt(0.05 * (2 * 0.3 - 0.05))));
  CHECK(huber_residual(-0.3) == doctest::Approx(-big));
}

TEST_CASE("residuals: ground-truth pose gives (near) zero") {
  Camera cam = make_default_camera(64);
  RigidPose gt;
  gt.axis_angle = {0.1, 0.3, -0.05};
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  std::vector<double> r = pose_residuals(head_template(), gt, cam, observed);
  REQUIRE(!r.empty());
  double nrm = 0.0;
  for (double v : r) nrm += v * v;
  CHECK(std::sqrt(nrm) < 1e-6);
}

TEST_CASE("residuals: off-screen template gives an empty residual") {
  Camera cam = make_default_camera(64);
  RigidPose gt;
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  RigidPose far = gt;
  far.translation = {100.0, 0.0, 0.0};
  std::vector<double> r = pose_residuals(head_template(), far, cam, observed);
  CHECK(r.empty());
}

TEST_CASE("residuals: norm grows monotonically with perturbation size") {
  Camera cam = make_default_camera(64);
  RigidPose gt;
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  double prev = -1.0;
  for (double deg : {0.0, 1.0, 2.0, 3.0, 4.0, 5.0}) {
    RigidPose p = gt;
    p.axis_angle = {0.0, deg * kDeg, 0.0};
    std::vector<double> r = pose_residuals(head_template(), p, cam, observed);
    double nrm = 0.0;
    for (double v : r) nrm += v * v;
    nrm = std::sqrt(nrm);
    if (deg > 0.0) CHECK(nrm > prev);
    prev = nrm;
  }
}

TEST_CASE("residuals: huber equals plain difference for small perturbations") {
  Camera cam = make_default_camera(64);
  RigidPose gt;
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  RigidPose p = gt;
  p.axis_angle = {0.0, 0.4 * kDeg, 0.0};
  UvwMap rendered = render_pose_uvw(head_template(), p, cam);
  std::vector<double> r = pose_residuals(head_template(), p, cam, observed);
  size_t ri = 0;
  size_t small_checked = 0;
  for (size_t i = 0; i < observed.pixels(); ++i) {
    if (!observed.valid[i] || !rendered.valid[i]) continue;
    Vec3 diff = rendered.uvw[i] - observed.uvw[i];
    for (int c = 0; c < 3; ++c) {
      if (std::abs(diff[c]) < kHuberDelta) {
        CHECK(r[ri] == diff[c]);
        ++small_checked;
      }
      ++ri;
    }
  }
  CHECK(small_checked > 100);
}

TEST_CASE("fit_pose: init at ground truth returns immediately, near-zero cost") {
  Camera cam = make_default_camera(64);
  RigidPose gt;
  gt.axis_angle = {0.05, -0.2, 0.0};
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  FitResult fr = fit_pose(head_template(), cam, observed, gt, 30);
  CHECK(fr.cost < 1e-10);
  CHECK(fr.iters <= 2);
}

TEST_CASE("fit_pose: recovers a 15 deg / 0.05 translation perturbation") {
  Camera cam = make_default_camera(96);
  RigidPose gt;
  gt.axis_angle = {0.0, 0.15, 0.05};
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  RigidPose init = gt;
  init.axis_angle.y += 15.0 * kDeg;
  init.translation = {0.05, 0.0, 0.0};
  FitResult fr = fit_pose(head_template(), cam, observed, init, 80);
  // Scale against depth is an exact monocular gauge; compare representatives.
  RigidPose rec = normalize_pose_gauge(fr.pose, cam, gt.log_scale);
  MESSAGE("rot err deg: ", rot_error_deg(rec, gt),
          " trans err: ", norm(rec.translation - gt.translation));
  CHECK(rot_error_deg(rec, gt) < 0.5);
  CHECK(norm(rec.translation - gt.translation) < 1e-3);
}

TEST_CASE("gauge normalization: scale/depth family maps to one representative") {
  Camera cam = make_default_camera(64);
  RigidPose a;
  a.axis_angle = {0.05, -0.1, 0.2};
  a.translation = {0.1, -0.05, 0.2};
  a.log_scale = 0.0;
  // An equivalent pose along the gauge direction renders identically.
  Vec3 center = transpose(cam.rot) * (-1.0 * cam.trans);
  double k = 1.13;
  RigidPose b = a;
  b.log_scale = std::log(k);
  b.translation = center + k * (a.translation - center);
  UvwMap ma = render_pose_uvw(head_template(), a, cam);
  UvwMap mb = render_pose_uvw(head_template(), b, cam);
  size_t diff = 0;
  for (size_t i = 0; i < ma.pixels(); ++i) {
    if (ma.valid[i] != mb.valid[i]) ++diff;
    else if (ma.valid[i] && linf(ma.uvw[i] - mb.uvw[i]) > 1e-9) ++diff;
  }
  CHECK(diff == 0);
  RigidPose back = normalize_pose_gauge(b, cam, 0.0);
  CHECK(norm(back.translation - a.translation) < 1e-12);
  CHECK(back.log_scale == 0.0);
}

TEST_CASE("fit_pose: accepted steps never increase the cost") {
  Camera cam = make_default_camera(64);
  RigidPose gt;
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  RigidPose init;
  init.axis_angle = {0.0, 12.0 * kDeg, 0.0};
  init.translation = {0.02, -0.03, 0.0};
  FitResult fr = fit_pose(head_template(), cam, observed, init, 40);
  REQUIRE(!fr.trace.empty());
  for (const FitStep& s : fr.trace) CHECK(s.cost_after <= s.cost_before);
}

TEST_CASE("fit_pose: empty overlap at init is an initialization error") {
  Camera cam = make_default_camera(64);
  RigidPose gt;
  UvwMap observed = render_pose_uvw(head_template(), gt, cam);
  RigidPose init;
  init.translation = {100.0, 0.0, 0.0};
  CHECK_THROWS_AS(fit_pose(head_template(), cam, observed, init, 10), Error);
}

TEST_CASE("gauge check: a common world transform cancels out of the residuals") {
  Camera cam = make_default_camera(64);
  RigidPose pose;
  pose.axis_angle = {0.1, -0.2, 0.05};
  pose.translation = {0.02, 0.01, -0.03};
  UvwMap observed = render_pose_uvw(head_template(), pose, cam);
  std::vector<double> r0 = pose_residuals(head_template(), pose, cam, observed);

  // Conjugate both the pose and the camera by a world transform T.
  Mat3 t_rot = rot_y(0.7) * rot_x(-0.3);
  Vec3 t_tr{0.4, -0.2, 0.6};
  RigidPose pose2;
  Mat3 r_pose = axis_angle_to_matrix(pose.axis_angle);
  pose2.axis_angle = matrix_to_axis_angle(t_rot * r_pose);
  pose2.translation = t_rot * pose.translation + t_tr;
  pose2.log_scale = pose.log_scale;
  Camera cam2 = cam;
  cam2.rot = cam.rot * transpose(t_rot);
  cam2.trans = cam.trans - cam2.rot * t_tr;
  validate_camera(cam2);
  std::vector<double> r1 = pose_residuals(head_template(), pose2, cam2, observed);
  REQUIRE(r0.size() == r1.size());
  double worst = 0.0;
  for (size_t i = 0; i < r0.size(); ++i)
    worst = std::max(worst, std::abs(r0[i] - r1[i]));
  CHECK(worst < 1e-9);
}
