#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densemarks/canonical_grid.hpp"
#include "densemarks/image.hpp"
#include "densemarks/loss_stack.hpp"
#include "densemarks/synthetic_heads.hpp"

namespace densemarks {

enum class EmbedMode { canonical, direct_feature };

// Per-pixel embedding network: sinusoidal positional encoding of the pixel
// position plus the pixel color and a 4x4-neighborhood mean color, through a
// 2-layer tanh MLP. Canonical mode squashes the 3 outputs into (0,1)^3 with
// the logistic function; direct_feature mode emits raw D-dim features.
struct EmbedderParams {
  int pe_freqs = 6;  // F, frequencies per image axis
  int hidden = 64;   // H
  int out_dim = 3;
  EmbedMode mode = EmbedMode::canonical;
  std::vector<double> w1, b1;  // hidden x in
  std::vector<double> w2, b2;  // hidden x hidden
  std::vector<double> w3, b3;  // out x hidden

  int in_dim() const { return 4 * pe_freqs + 6; }
  size_t param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
  }
};

EmbedderParams new_embedder(int pe_freqs, int hidden, int out_dim,
                            EmbedMode mode, uint64_t seed);

// Gradient accumulators shaped like the parameters.
struct EmbedderGrads {
  std::vector<double> w1, b1, w2, b2, w3, b3;

  void init_like(const EmbedderParams& p);
  void scale(double s);
};

// Input features for one pixel of an image.
std::vector<double> pixel_input(const EmbedderParams& p, const RgbImage& img,
                                int x, int y);

// Forward pass with cached activations for the backward pass.
struct PixelTrace {
  std::vector<double> input, h1, h2, out;
};

PixelTrace mlp_forward(const EmbedderParams& p, std::vector<double> input);

// Accumulates parameter gradients for d(loss)/d(out) at one pixel.
void mlp_backward(const EmbedderParams& p, const PixelTrace& trace,
                  const std::vector<double>& grad_out, EmbedderGrads& acc);

inline double logistic(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Canonical-mode dense inference over the valid pixels of an image.
UvwMap embed_image(const EmbedderParams& p, const RgbImage& img,
                   const Image<uint8_t>& mask);

// Direct-feature-mode dense inference.
FeatureMap embed_features(const EmbedderParams& p, const RgbImage& img,
                          const Image<uint8_t>& mask);

// --- optimization -------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;

  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

// One decoupled-weight-decay Adam update. beta = (0.9, 0.999), eps = 1e-8;
// t is the 1-based step count for bias correction.
void adamw_step(std::vector<double>& param, const std::vector<double>& grad,
                AdamState& state, double lr, double weight_decay, int64_t t);

// Linear warmup to base_lr, then cosine annealing to 0 at `total`.
double cosine_lr(int step, int total, int warmup, double base_lr);

// --- the siamese training loop -------------------------------------------------

struct TrainConfig {
  int steps = 2000;
  int batch_pairs = 2;
  double lr_embedder = 2e-3;
  double lr_grid = 4e-2;     // 20x the embedder rate
  double lr_seghead = 4e-3;
  int warmup_steps = 40;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  EmbedMode mode = EmbedMode::canonical;
  int pe_freqs = 6;
  int hidden = 64;
  int grid_resolution = 32;
  int grid_dim = 16;
  double grid_sigma = 1.0;
  LossWeights loss_weights;
};

struct TrainDataset {
  std::vector<LoadedSequence> seqs;
  LandmarkAnchors anchors;  // template landmark canonical locations
};

// Loads every seq_* / view_* subdirectory of `dir`.
TrainDataset load_train_dataset(const std::string& dir);

// One augmented training pair ready for the loss stack.
struct PairSample {
  FrameBundle f1, f2;
  TrackPairs tracks;  // endpoints in augmented pixel coordinates
  int dropped_tracks = 0;
};

struct ForwardBackward {
  double total = 0.0, contrastive = 0.0;
  double landmark1 = 0.0, landmark2 = 0.0;
  double segmentation1 = 0.0, segmentation2 = 0.0;
  EmbedderGrads embedder_grads;
  std::vector<double> grid_raw_grads;  // empty in direct_feature mode
  SegHeadGrads seg_grads;
  int dropped_tracks = 0;
  int used_tracks = 0;
};

// Full objective chain: siamese embed, grid query (canonical mode),
// contrastive + landmark + segmentation losses, exact analytic gradients for
// all three parameter groups. `grid` may be null in direct_feature mode.
ForwardBackward forward_backward(const EmbedderParams& params,
                                 const LatentGrid* grid,
                                 const SegmentationHead& seghead,
                                 const PairSample& pair,
                                 const LandmarkAnchors& anchors,
                                 const LossWeights& weights);

struct StepStats {
  double total = 0.0, contrastive = 0.0, landmark = 0.0, segmentation = 0.0;
  double lr_embedder = 0.0;
  int pairs_used = 0;
  double mean_tracks = 0.0;  // surviving track pairs per batch item
};

struct TrainResult {
  EmbedderParams params;
  LatentGrid grid;
  SegmentationHead seghead;
  std::vector<StepStats> curve;
  size_t skipped_batches = 0;
  size_t dropped_tracks = 0;
};

TrainResult train(const TrainDataset& dataset, const TrainConfig& cfg);

void write_loss_csv(const std::string& path, const std::vector<StepStats>& curve);

// --- checkpoint ----------------------------------------------------------------

// "DMNET01": u32 F, H, out_dim, mode; weights as f32 LE in declaration order;
// then the seg head and the grid checkpoint inline.
struct Checkpoint {
  EmbedderParams params;
  SegmentationHead seghead;
  LatentGrid grid;  // resolution 0 when absent (direct_feature mode)
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace densemarks
