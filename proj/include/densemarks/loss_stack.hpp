#pragma once

#include <cstdint>
#include <vector>

#include "densemarks/canonical_grid.hpp"
#include "densemarks/common.hpp"

namespace densemarks {

// Row-major P x D feature rows.
struct FeatureBatch {
  int count = 0;  // P
  int dim = 0;    // D
  std::vector<double> values;

  double* row(int p) { return &values[size_t(p) * dim]; }
  const double* row(int p) const { return &values[size_t(p) * dim]; }
};

struct LandmarkAnchors {
  std::vector<CanonPoint> anchors;
};

struct SegmentationHead {
  int num_classes = 0;  // N_S
  int dim = 0;          // D
  std::vector<double> weight;  // N_S x D, row-major
  std::vector<double> bias;    // N_S
};

SegmentationHead new_seg_head(int num_classes, int dim, uint64_t seed);

struct LossWeights {
  double lambda_lmks = 50.0;
  double lambda_segm = 1.0;
};

// || norm(f1) . norm(f2)^T - I ||_F over matched rows, with analytic
// gradients w.r.t. both (unnormalized) batches. Rows with near-zero norm are
// rejected rather than epsilon-patched.
struct ContrastiveResult {
  double loss = 0.0;
  std::vector<double> grad_f1;  // P x D
  std::vector<double> grad_f2;  // P x D
};

ContrastiveResult contrastive_loss(const FeatureBatch& f1, const FeatureBatch& f2);

// Sum over landmarks of the componentwise L1 distance to the anchor;
// subgradient at 0 is 0. grads is the derivative w.r.t. each predicted point.
struct LandmarkResult {
  double loss = 0.0;
  std::vector<Vec3> grads;
};

LandmarkResult landmark_loss(const std::vector<CanonPoint>& predicted,
                             const LandmarkAnchors& anchors);

// logits = feats . weight^T + bias, per row.
std::vector<double> seg_forward(const SegmentationHead& head,
                                const FeatureBatch& feats);

// Mean softmax cross-entropy over rows; grad_logits = (softmax - onehot)/P.
struct SegmentationResult {
  double loss = 0.0;
  std::vector<double> grad_logits;  // P x N_S
};

SegmentationResult segmentation_loss(const std::vector<double>& logits,
                                     int num_classes,
                                     const std::vector<int>& gt_class);

// Backward of seg_forward given grad_logits: accumulates head gradients and
// returns the gradient w.r.t. the input features.
struct SegHeadGrads {
  std::vector<double> grad_weight;
  std::vector<double> grad_bias;
};

std::vector<double> seg_backward(const SegmentationHead& head,
                                 const FeatureBatch& feats,
                                 const std::vector<double>& grad_logits,
                                 SegHeadGrads& acc);

double total_loss(double contr, double lmk1, double lmk2, double seg1,
                  double seg2, const LossWeights& w);

}  // namespace densemarks
