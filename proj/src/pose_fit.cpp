#include "densemarks/pose_fit.hpp"

#include <algorithm>
#include <cmath>

namespace densemarks {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kFdStep = 1e-4;
// A component where the rendered map lost coverage contributes the maximum
// Huber residual, which is flat in the pose (no spurious gradients).
const double kMissingResidual = std::sqrt(kHuberDelta * (2.0 - kHuberDelta));

Vec3 wrap_axis_angle(Vec3 aa) {
  double theta = norm(aa);
  if (theta < kPi || theta == 0.0) return aa;
  double wrapped = std::fmod(theta + kPi, 2.0 * kPi) - kPi;
  return (wrapped / theta) * aa;
}

}  // namespace

std::vector<Vec3> pose_vertices(const HeadTemplate& tmpl, const RigidPose& pose) {
  Mat3 r = axis_angle_to_matrix(pose.axis_angle);
  double s = std::exp(pose.log_scale);
  std::vector<Vec3> out(tmpl.rest.size());
  for (size_t v = 0; v < tmpl.rest.size(); ++v)
    out[v] = s * (r * tmpl.rest[v]) + pose.translation;
  return out;
}

UvwMap render_pose_uvw(const HeadTemplate& tmpl, const RigidPose& pose,
                       const Camera& cam) {
  return render_uvw_posed(tmpl, pose_vertices(tmpl, pose), cam);
}

double huber_residual(double e, double delta) {
  double a = std::abs(e);
  if (a <= delta) return e;
  double r = std::sqrt(delta * (2.0 * a - delta));
  return e > 0.0 ? r : -r;
}

namespace {

// Residuals restricted to a fixed pixel support so finite differences stay
// well-defined across renders.
std::vector<double> residuals_on_support(const HeadTemplate& tmpl,
                                         const RigidPose& pose, const Camera& cam,
                                         const UvwMap& observed,
                                         const std::vector<size_t>& support) {
  UvwMap rendered = render_pose_uvw(tmpl, pose, cam);
  std::vector<double> r;
  r.reserve(support.size() * 3);
  for (size_t idx : support) {
    if (rendered.valid[idx]) {
      Vec3 diff = rendered.uvw[idx] - observed.uvw[idx];
      for (int c = 0; c < 3; ++c) r.push_back(huber_residual(diff[c]));
    } else {
      for (int c = 0; c < 3; ++c) r.push_back(kMissingResidual);
    }
  }
  return r;
}

double cost_of(const std::vector<double>& r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return s;
}

RigidPose perturbed(const RigidPose& p, int param, double delta) {
  RigidPose q = p;
  if (param < 3)
    q.axis_angle[param] += delta;
  else if (param < 6)
    q.translation[param - 3] += delta;
  else
    q.log_scale += delta;
  return q;
}

RigidPose apply_step(const RigidPose& p, const std::vector<double>& step) {
  RigidPose q = p;
  for (int c = 0; c < 3; ++c) q.axis_angle[c] += step[size_t(c)];
  for (int c = 0; c < 3; ++c) q.translation[c] += step[size_t(3 + c)];
  q.log_scale += step[6];
  q.axis_angle = wrap_axis_angle(q.axis_angle);
  return q;
}

}  // namespace

std::vector<double> pose_residuals(const HeadTemplate& tmpl, const RigidPose& pose,
                                   const Camera& cam, const UvwMap& observed) {
  UvwMap rendered = render_pose_uvw(tmpl, pose, cam);
  std::vector<double> r;
  for (size_t i = 0; i < observed.pixels(); ++i) {
    if (!observed.valid[i] || !rendered.valid[i]) continue;
    Vec3 diff = rendered.uvw[i] - observed.uvw[i];
    for (int c = 0; c < 3; ++c) r.push_back(huber_residual(diff[c]));
  }
  return r;
}

RigidPose normalize_pose_gauge(const RigidPose& pose, const Camera& cam,
                               double target_log_scale) {
  Vec3 center = transpose(cam.rot) * (-1.0 * cam.trans);
  double k = std::exp(target_log_scale - pose.log_scale);
  RigidPose out = pose;
  out.log_scale = target_log_scale;
  out.translation = center + k * (pose.translation - center);
  return out;
}

FitResult fit_pose(const HeadTemplate& tmpl, const Camera& cam,
                   const UvwMap& observed, RigidPose init, int iters) {
  if (iters < 1) fail(ErrorKind::argument, "iters must be >= 1");
  validate_camera(cam);
  FitResult res;
  res.pose = init;
  res.pose.axis_angle = wrap_axis_angle(res.pose.axis_angle);
  double lambda = 1e-3;
  const int n_params = 7;

  for (int iter = 0; iter < iters; ++iter) {
    // Support of this iteration: pixels valid in both maps at the current pose.
    UvwMap rendered = render_pose_uvw(tmpl, res.pose, cam);
    std::vector<size_t> support;
    for (size_t i = 0; i < observed.pixels(); ++i)
      if (observed.valid[i] && rendered.valid[i]) support.push_back(i);
    if (support.empty()) {
      if (iter == 0)
        fail(ErrorKind::degenerate, "no overlap between template and observation");
      break;
    }

    std::vector<double> r0 =
        residuals_on_support(tmpl, res.pose, cam, observed, support);
    double cost0 = cost_of(r0);
    res.cost = cost0;
    res.iters = iter + 1;
    if (cost0 == 0.0) {
      res.converged = true;
      break;
    }

    // Central-difference Jacobian, one render pair per parameter.
    size_t m = r0.size();
    std::vector<std::vector<double>> jac(n_params);
    for (int k = 0; k < n_params; ++k) {
      std::vector<double> rp = residuals_on_support(
          tmpl, perturbed(res.pose, k, kFdStep), cam, observed, support);
      std::vector<double> rm = residuals_on_support(
          tmpl, perturbed(res.pose, k, -kFdStep), cam, observed, support);
      jac[size_t(k)].resize(m);
      for (size_t i = 0; i < m; ++i)
        jac[size_t(k)][i] = (rp[i] - rm[i]) / (2.0 * kFdStep);
    }
    std::vector<double> jtj(size_t(n_params) * n_params, 0.0);
    std::vector<double> jtr(size_t(n_params), 0.0);
    for (int a = 0; a < n_params; ++a) {
      for (int b = a; b < n_params; ++b) {
        double s = 0.0;
        for (size_t i = 0; i < m; ++i) s += jac[size_t(a)][i] * jac[size_t(b)][i];
        jtj[size_t(a) * n_params + b] = s;
        jtj[size_t(b) * n_params + a] = s;
      }
      double s = 0.0;
      for (size_t i = 0; i < m; ++i) s += jac[size_t(a)][i] * r0[i];
      jtr[size_t(a)] = s;
    }

    bool accepted = false;
    while (lambda <= 1e12) {
      std::vector<double> damped = jtj;
      for (int k = 0; k < n_params; ++k) {
        size_t d = size_t(k) * n_params + size_t(k);
        damped[d] += lambda * jtj[d] + 1e-12;
      }
      std::vector<double> rhs(jtr.size());
      for (size_t k = 0; k < rhs.size(); ++k) rhs[k] = -jtr[k];
      std::vector<double> step;
      try {
        step = solve_dense(damped, rhs);
      } catch (const Error&) {
        lambda *= 10.0;
        continue;
      }
      RigidPose cand = apply_step(res.pose, step);
      double cand_cost = cost_of(
          residuals_on_support(tmpl, cand, cam, observed, support));
      if (cand_cost < cost0) {
        res.trace.push_back({cost0, cand_cost, lambda});
        res.pose = cand;
        res.cost = cand_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (cost0 - cand_cost < 1e-8 * std::max(cost0, 1e-300))
          res.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      res.converged = true;  // stalled: no descent direction at any damping
      break;
    }
    if (res.converged) break;
  }
  return res;
}

}  // namespace densemarks
