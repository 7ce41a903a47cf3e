#include "densemarks/loss_stack.hpp"

#include <cmath>

#include "densemarks/rng.hpp"

namespace densemarks {

SegmentationHead new_seg_head(int num_classes, int dim, uint64_t seed) {
  if (num_classes < 2) fail(ErrorKind::argument, "seg head needs >= 2 classes");
  if (dim < 1) fail(ErrorKind::argument, "seg head dim must be >= 1");
  SegmentationHead h;
  h.num_classes = num_classes;
  h.dim = dim;
  h.weight.resize(size_t(num_classes) * dim);
  h.bias.assign(size_t(num_classes), 0.0);
  Rng rng(seed);
  double s = 1.0 / std::sqrt(double(dim));
  for (double& w : h.weight) w = s * rng.normal();
  return h;
}

ContrastiveResult contrastive_loss(const FeatureBatch& f1, const FeatureBatch& f2) {
  if (f1.count != f2.count || f1.dim != f2.dim)
    fail(ErrorKind::argument, "contrastive batches must have equal shape");
  if (f1.count < 2)
    fail(ErrorKind::argument, "contrastive loss needs at least 2 rows");
  const int p = f1.count, d = f1.dim;

  auto normalize = [&](const FeatureBatch& f, std::vector<double>& rows,
                       std::vector<double>& inv_norm) {
    rows.resize(size_t(p) * d);
    inv_norm.resize(size_t(p));
    for (int i = 0; i < p; ++i) {
      const double* src = f.row(i);
      double sq = 0.0;
      for (int k = 0; k < d; ++k) sq += src[k] * src[k];
      double n = std::sqrt(sq);
      if (n < 1e-12)
        fail(ErrorKind::numerical, "degenerate (near-zero) feature row");
      inv_norm[size_t(i)] = 1.0 / n;
      for (int k = 0; k < d; ++k) rows[size_t(i) * d + k] = src[k] / n;
    }
  };

  std::vector<double> n1, n2, inv1, inv2;
  normalize(f1, n1, inv1);
  normalize(f2, n2, inv2);

  // Cross-Gram of unit rows and its distance to identity.
  std::vector<double> gram(size_t(p) * p);
  double sq_sum = 0.0;
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      double s = 0.0;
      const double* a = &n1[size_t(i) * d];
      const double* b = &n2[size_t(j) * d];
      for (int k = 0; k < d; ++k) s += a[k] * b[k];
      double r = s - (i == j ? 1.0 : 0.0);
      gram[size_t(i) * p + j] = r;
      sq_sum += r * r;
    }
  }
  ContrastiveResult out;
  out.loss = std::sqrt(sq_sum);
  out.grad_f1.assign(size_t(p) * d, 0.0);
  out.grad_f2.assign(size_t(p) * d, 0.0);
  if (out.loss == 0.0) return out;  // subgradient 0 at the exact minimum

  double inv_loss = 1.0 / out.loss;
  // dL/dG = (G - I)/L, then back through the Gram and the normalizations.
  std::vector<double> dn1(size_t(p) * d, 0.0), dn2(size_t(p) * d, 0.0);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      double g = gram[size_t(i) * p + j] * inv_loss;
      if (g == 0.0) continue;
      const double* a = &n1[size_t(i) * d];
      const double* b = &n2[size_t(j) * d];
      double* da = &dn1[size_t(i) * d];
      double* db = &dn2[size_t(j) * d];
      for (int k = 0; k < d; ++k) {
        da[k] += g * b[k];
        db[k] += g * a[k];
      }
    }
  }
  auto through_norm = [&](const std::vector<double>& n,
                          const std::vector<double>& inv_norm,
                          const std::vector<double>& dn, std::vector<double>& df) {
    for (int i = 0; i < p; ++i) {
      const double* u = &n[size_t(i) * d];
      const double* g = &dn[size_t(i) * d];
      double proj = 0.0;
      for (int k = 0; k < d; ++k) proj += u[k] * g[k];
      double s = inv_norm[size_t(i)];
      double* dst = &df[size_t(i) * d];
      for (int k = 0; k < d; ++k) dst[k] = s * (g[k] - proj * u[k]);
    }
  };
  through_norm(n1, inv1, dn1, out.grad_f1);
  through_norm(n2, inv2, dn2, out.grad_f2);
  return out;
}

LandmarkResult landmark_loss(const std::vector<CanonPoint>& predicted,
                             const LandmarkAnchors& anchors) {
  if (predicted.size() != anchors.anchors.size())
    fail(ErrorKind::argument, "landmark count mismatch");
  LandmarkResult out;
  out.grads.resize(predicted.size());
  for (size_t k = 0; k < predicted.size(); ++k) {
    Vec3 diff = predicted[k].as_vec() - anchors.anchors[k].as_vec();
    for (int c = 0; c < 3; ++c) {
      out.loss += std::abs(diff[c]);
      out.grads[k][c] = diff[c] > 0.0 ? 1.0 : (diff[c] < 0.0 ? -1.0 : 0.0);
    }
  }
  return out;
}

std::vector<double> seg_forward(const SegmentationHead& head,
                                const FeatureBatch& feats) {
  if (feats.dim != head.dim)
    fail(ErrorKind::argument, "seg head / feature dimension mismatch");
  std::vector<double> logits(size_t(feats.count) * head.num_classes);
  for (int i = 0; i < feats.count; ++i) {
    const double* f = feats.row(i);
    for (int c = 0; c < head.num_classes; ++c) {
      const double* w = &head.weight[size_t(c) * head.dim];
      double s = head.bias[size_t(c)];
      for (int k = 0; k < head.dim; ++k) s += w[k] * f[k];
      logits[size_t(i) * head.num_classes + c] = s;
    }
  }
  return logits;
}

SegmentationResult segmentation_loss(const std::vector<double>& logits,
                                     int num_classes,
                                     const std::vector<int>& gt_class) {
  size_t p = gt_class.size();
  if (p == 0 || logits.size() != p * size_t(num_classes))
    fail(ErrorKind::argument, "segmentation loss shape mismatch");
  SegmentationResult out;
  out.grad_logits.assign(logits.size(), 0.0);
  double inv_p = 1.0 / double(p);
  for (size_t i = 0; i < p; ++i) {
    int gt = gt_class[i];
    if (gt < 0 || gt >= num_classes)
      fail(ErrorKind::argument, "class index out of range");
    const double* row = &logits[i * size_t(num_classes)];
    double mx = row[0];
    for (int c = 1; c < num_classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < num_classes; ++c) denom += std::exp(row[c] - mx);
    double log_denom = std::log(denom);
    out.loss += (log_denom - (row[gt] - mx)) * inv_p;
    double* g = &out.grad_logits[i * size_t(num_classes)];
    for (int c = 0; c < num_classes; ++c) {
      double softmax = std::exp(row[c] - mx) / denom;
      g[c] = (softmax - (c == gt ? 1.0 : 0.0)) * inv_p;
    }
  }
  return out;
}

std::vector<double> seg_backward(const SegmentationHead& head,
                                 const FeatureBatch& feats,
                                 const std::vector<double>& grad_logits,
                                 SegHeadGrads& acc) {
  if (acc.grad_weight.empty()) {
    acc.grad_weight.assign(head.weight.size(), 0.0);
    acc.grad_bias.assign(head.bias.size(), 0.0);
  }
  std::vector<double> grad_feats(size_t(feats.count) * feats.dim, 0.0);
  for (int i = 0; i < feats.count; ++i) {
    const double* f = feats.row(i);
    const double* gl = &grad_logits[size_t(i) * head.num_classes];
    double* gf = &grad_feats[size_t(i) * feats.dim];
    for (int c = 0; c < head.num_classes; ++c) {
      double g = gl[c];
      if (g == 0.0) continue;
      const double* w = &head.weight[size_t(c) * head.dim];
      double* gw = &acc.grad_weight[size_t(c) * head.dim];
      for (int k = 0; k < head.dim; ++k) {
        gf[k] += g * w[k];
        gw[k] += g * f[k];
      }
      acc.grad_bias[size_t(c)] += g;
    }
  }
  return grad_feats;
}

double total_loss(double contr, double lmk1, double lmk2, double seg1,
                  double seg2, const LossWeights& w) {
  return contr + w.lambda_lmks * (lmk1 + lmk2) + w.lambda_segm * (seg1 + seg2);
}

}  // namespace densemarks
