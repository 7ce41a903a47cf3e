#include "densemarks/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "densemarks/binary_io.hpp"
#include "densemarks/rng.hpp"

namespace fs = std::filesystem;

namespace densemarks {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

EmbedderParams new_embedder(int pe_freqs, int hidden, int out_dim,
                            EmbedMode mode, uint64_t seed) {
  if (pe_freqs < 1 || hidden < 1 || out_dim < 1)
    fail(ErrorKind::argument, "invalid embedder architecture");
  if (mode == EmbedMode::canonical && out_dim != 3)
    fail(ErrorKind::argument, "canonical mode requires out_dim == 3");
  EmbedderParams p;
  p.pe_freqs = pe_freqs;
  p.hidden = hidden;
  p.out_dim = out_dim;
  p.mode = mode;
  Rng rng(seed);
  auto init = [&](std::vector<double>& w, int rows, int cols, double gain) {
    w.resize(size_t(rows) * cols);
    double s = gain / std::sqrt(double(cols));
    for (double& v : w) v = s * rng.normal();
  };
  init(p.w1, hidden, p.in_dim(), 1.0);
  p.b1.assign(size_t(hidden), 0.0);
  init(p.w2, hidden, hidden, 1.0);
  p.b2.assign(size_t(hidden), 0.0);
  // Small output init keeps canonical coordinates near the cube center.
  init(p.w3, out_dim, hidden, 0.2);
  p.b3.assign(size_t(out_dim), 0.0);
  return p;
}

void EmbedderGrads::init_like(const EmbedderParams& p) {
  w1.assign(p.w1.size(), 0.0);
  b1.assign(p.b1.size(), 0.0);
  w2.assign(p.w2.size(), 0.0);
  b2.assign(p.b2.size(), 0.0);
  w3.assign(p.w3.size(), 0.0);
  b3.assign(p.b3.size(), 0.0);
}

void EmbedderGrads::scale(double s) {
  for (auto* v : {&w1, &b1, &w2, &b2, &w3, &b3})
    for (double& x : *v) x *= s;
}

std::vector<double> pixel_input(const EmbedderParams& p, const RgbImage& img,
                                int x, int y) {
  std::vector<double> in;
  in.reserve(size_t(p.in_dim()));
  double xn = (x + 0.5) / double(img.width);
  double yn = (y + 0.5) / double(img.height);
  for (double c : {xn, yn}) {
    double freq = kPi;
    for (int f = 0; f < p.pe_freqs; ++f) {
      in.push_back(std::sin(freq * c));
      in.push_back(std::cos(freq * c));
      freq *= 2.0;
    }
  }
  const float* px = img.px(x, y);
  for (int c = 0; c < 3; ++c) in.push_back(px[c]);
  // Mean color of the 4x4 neighborhood, clamped at the borders.
  double mean[3] = {0, 0, 0};
  for (int dy = -1; dy <= 2; ++dy) {
    for (int dx = -1; dx <= 2; ++dx) {
      int sx = std::min(img.width - 1, std::max(0, x + dx));
      int sy = std::min(img.height - 1, std::max(0, y + dy));
      const float* q = img.px(sx, sy);
      for (int c = 0; c < 3; ++c) mean[c] += q[c];
    }
  }
  for (int c = 0; c < 3; ++c) in.push_back(mean[c] / 16.0);
  return in;
}

PixelTrace mlp_forward(const EmbedderParams& p, std::vector<double> input) {
  PixelTrace t;
  t.input = std::move(input);
  int in = p.in_dim(), h = p.hidden, out = p.out_dim;
  t.h1.resize(size_t(h));
  for (int i = 0; i < h; ++i) {
    const double* w = &p.w1[size_t(i) * in];
    double s = p.b1[size_t(i)];
    for (int k = 0; k < in; ++k) s += w[k] * t.input[size_t(k)];
    t.h1[size_t(i)] = std::tanh(s);
  }
  t.h2.resize(size_t(h));
  for (int i = 0; i < h; ++i) {
    const double* w = &p.w2[size_t(i) * h];
    double s = p.b2[size_t(i)];
    for (int k = 0; k < h; ++k) s += w[k] * t.h1[size_t(k)];
    t.h2[size_t(i)] = std::tanh(s);
  }
  t.out.resize(size_t(out));
  for (int i = 0; i < out; ++i) {
    const double* w = &p.w3[size_t(i) * h];
    double s = p.b3[size_t(i)];
    for (int k = 0; k < h; ++k) s += w[k] * t.h2[size_t(k)];
    t.out[size_t(i)] = s;
  }
  return t;
}

void mlp_backward(const EmbedderParams& p, const PixelTrace& t,
                  const std::vector<double>& grad_out, EmbedderGrads& acc) {
  int in = p.in_dim(), h = p.hidden, out = p.out_dim;
  std::vector<double> dh2(size_t(h), 0.0), dh1(size_t(h), 0.0);
  for (int i = 0; i < out; ++i) {
    double g = grad_out[size_t(i)];
    if (g == 0.0) continue;
    acc.b3[size_t(i)] += g;
    double* gw = &acc.w3[size_t(i) * h];
    const double* w = &p.w3[size_t(i) * h];
    for (int k = 0; k < h; ++k) {
      gw[k] += g * t.h2[size_t(k)];
      dh2[size_t(k)] += g * w[k];
    }
  }
  for (int i = 0; i < h; ++i) {
    double g = dh2[size_t(i)] * (1.0 - t.h2[size_t(i)] * t.h2[size_t(i)]);
    if (g == 0.0) continue;
    acc.b2[size_t(i)] += g;
    double* gw = &acc.w2[size_t(i) * h];
    const double* w = &p.w2[size_t(i) * h];
    for (int k = 0; k < h; ++k) {
      gw[k] += g * t.h1[size_t(k)];
      dh1[size_t(k)] += g * w[k];
    }
  }
  for (int i = 0; i < h; ++i) {
    double g = dh1[size_t(i)] * (1.0 - t.h1[size_t(i)] * t.h1[size_t(i)]);
    if (g == 0.0) continue;
    acc.b1[size_t(i)] += g;
    double* gw = &acc.w1[size_t(i) * in];
    for (int k = 0; k < in; ++k) gw[k] += g * t.input[size_t(k)];
  }
}

UvwMap embed_image(const EmbedderParams& p, const RgbImage& img,
                   const Image<uint8_t>& mask) {
  if (p.mode != EmbedMode::canonical)
    fail(ErrorKind::argument, "embed_image requires canonical mode");
  if (img.width != mask.width || img.height != mask.height)
    fail(ErrorKind::argument, "image/mask dimension mismatch");
  UvwMap map(img.width, img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!mask.at(x, y)) continue;
      PixelTrace t = mlp_forward(p, pixel_input(p, img, x, y));
      size_t i = map.idx(x, y);
      map.uvw[i] = {logistic(t.out[0]), logistic(t.out[1]), logistic(t.out[2])};
      map.valid[i] = 1;
    }
  }
  return map;
}

FeatureMap embed_features(const EmbedderParams& p, const RgbImage& img,
                          const Image<uint8_t>& mask) {
  if (p.mode != EmbedMode::direct_feature)
    fail(ErrorKind::argument, "embed_features requires direct_feature mode");
  if (img.width != mask.width || img.height != mask.height)
    fail(ErrorKind::argument, "image/mask dimension mismatch");
  FeatureMap map(img.width, img.height, p.out_dim);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      if (!mask.at(x, y)) continue;
      PixelTrace t = mlp_forward(p, pixel_input(p, img, x, y));
      double* dst = map.px(x, y);
      for (int d = 0; d < p.out_dim; ++d) dst[d] = t.out[size_t(d)];
      map.valid[map.idx(x, y)] = 1;
    }
  }
  return map;
}

void adamw_step(std::vector<double>& param, const std::vector<double>& grad,
                AdamState& state, double lr, double weight_decay, int64_t t) {
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.m.size() != param.size()) state.init(param.size());
  double bc1 = 1.0 - std::pow(beta1, double(t));
  double bc2 = 1.0 - std::pow(beta2, double(t));
  for (size_t i = 0; i < param.size(); ++i) {
    double g = grad[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    param[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * param[i]);
  }
}

double cosine_lr(int step, int total, int warmup, double base_lr) {
  if (step < 0 || step > total) fail(ErrorKind::argument, "step out of range");
  if (warmup > 0 && step < warmup) return base_lr * double(step) / double(warmup);
  if (total == warmup) return step == total ? 0.0 : base_lr;
  double progress = double(step - warmup) / double(total - warmup);
  return base_lr * 0.5 * (1.0 + std::cos(kPi * progress));
}

TrainDataset load_train_dataset(const std::string& dir) {
  if (!fs::exists(dir)) fail(ErrorKind::io, "no such dataset directory: " + dir);
  TrainDataset ds;
  std::vector<std::string> subdirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_directory()) continue;
    std::string name = entry.path().filename().string();
    if (name.rfind("seq_", 0) == 0 || name.rfind("view_", 0) == 0)
      subdirs.push_back(entry.path().string());
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const std::string& sd : subdirs) ds.seqs.push_back(load_sequence_dir(sd));
  if (ds.seqs.empty())
    fail(ErrorKind::input_format, dir + ": no seq_*/view_* subdirectories");
  const HeadTemplate& tmpl = head_template();
  for (int k = 0; k < kNumLandmarks; ++k)
    ds.anchors.anchors.push_back(CanonPoint::from_vec(tmpl.landmark_canonical(k)));
  return ds;
}

namespace {

struct SidePixels {
  std::vector<std::array<int, 2>> track_px;
  std::vector<int> track_class;                  // gt region at the pixel
  std::vector<std::array<int, 2>> landmark_px;   // containing pixel
  std::vector<int> landmark_id;
};

}  // namespace

ForwardBackward forward_backward(const EmbedderParams& params,
                                 const LatentGrid* grid,
                                 const SegmentationHead& seghead,
                                 const PairSample& pair,
                                 const LandmarkAnchors& anchors,
                                 const LossWeights& weights) {
  const bool canonical = params.mode == EmbedMode::canonical;
  if (canonical && grid == nullptr)
    fail(ErrorKind::argument, "canonical mode requires a latent grid");
  const int feat_dim = canonical ? grid->feature_dim : params.out_dim;
  if (seghead.dim != feat_dim)
    fail(ErrorKind::argument, "seg head dimension mismatch");

  ForwardBackward fb;
  fb.embedder_grads.init_like(params);
  fb.dropped_tracks = pair.dropped_tracks;

  // Collect usable supervision pixels for each side.
  SidePixels side[2];
  const FrameBundle* bundles[2] = {&pair.f1, &pair.f2};
  for (size_t k = 0; k < pair.tracks.count(); ++k) {
    auto a = pair.tracks.a[k], b = pair.tracks.b[k];
    bool ok_a = pair.f1.mask.in_bounds(a[0], a[1]) && pair.f1.mask.at(a[0], a[1]);
    bool ok_b = pair.f2.mask.in_bounds(b[0], b[1]) && pair.f2.mask.at(b[0], b[1]);
    if (!ok_a || !ok_b) {
      ++fb.dropped_tracks;
      continue;
    }
    side[0].track_px.push_back(a);
    side[0].track_class.push_back(pair.f1.labels.at(a[0], a[1]));
    side[1].track_px.push_back(b);
    side[1].track_class.push_back(pair.f2.labels.at(b[0], b[1]));
  }
  const int p_count = int(side[0].track_px.size());
  fb.used_tracks = p_count;
  if (p_count < 2)
    fail(ErrorKind::degenerate, "fewer than 2 surviving track pairs");

  if (canonical) {
    for (int s = 0; s < 2; ++s) {
      const auto& lmks = bundles[s]->landmarks;
      for (size_t k = 0; k < lmks.size(); ++k) {
        if (!lmks[k].visible) continue;
        int px = int(std::floor(lmks[k].x)), py = int(std::floor(lmks[k].y));
        if (!bundles[s]->mask.in_bounds(px, py) || !bundles[s]->mask.at(px, py))
          continue;
        side[s].landmark_px.push_back({px, py});
        side[s].landmark_id.push_back(int(k));
      }
    }
  }

  // Forward.
  std::vector<PixelTrace> traces[2], lmk_traces[2];
  std::vector<CanonPoint> coords[2], lmk_coords[2];
  FeatureBatch feats[2];
  for (int s = 0; s < 2; ++s) {
    feats[s].count = p_count;
    feats[s].dim = feat_dim;
    feats[s].values.resize(size_t(p_count) * feat_dim);
    for (int k = 0; k < p_count; ++k) {
      auto px = side[s].track_px[size_t(k)];
      PixelTrace t =
          mlp_forward(params, pixel_input(params, bundles[s]->rgb, px[0], px[1]));
      if (canonical) {
        CanonPoint c{logistic(t.out[0]), logistic(t.out[1]), logistic(t.out[2])};
        FeatureVec f = query(*grid, c);
        std::copy(f.begin(), f.end(), feats[s].row(k));
        coords[s].push_back(c);
      } else {
        std::copy(t.out.begin(), t.out.end(), feats[s].row(k));
      }
      traces[s].push_back(std::move(t));
    }
    for (size_t k = 0; k < side[s].landmark_px.size(); ++k) {
      auto px = side[s].landmark_px[k];
      PixelTrace t =
          mlp_forward(params, pixel_input(params, bundles[s]->rgb, px[0], px[1]));
      lmk_coords[s].push_back(
          {logistic(t.out[0]), logistic(t.out[1]), logistic(t.out[2])});
      lmk_traces[s].push_back(std::move(t));
    }
  }

  ContrastiveResult contr = contrastive_loss(feats[0], feats[1]);
  fb.contrastive = contr.loss;

  double* lmk_losses[2] = {&fb.landmark1, &fb.landmark2};
  std::vector<Vec3> lmk_grads[2];
  if (canonical) {
    for (int s = 0; s < 2; ++s) {
      if (side[s].landmark_id.empty()) continue;
      LandmarkAnchors sub;
      for (int id : side[s].landmark_id) sub.anchors.push_back(anchors.anchors[size_t(id)]);
      LandmarkResult lr = landmark_loss(lmk_coords[s], sub);
      *lmk_losses[s] = lr.loss;
      lmk_grads[s] = std::move(lr.grads);
    }
  }

  double* seg_losses[2] = {&fb.segmentation1, &fb.segmentation2};
  std::vector<double>* dfeat[2] = {&contr.grad_f1, &contr.grad_f2};
  for (int s = 0; s < 2; ++s) {
    std::vector<double> logits = seg_forward(seghead, feats[s]);
    SegmentationResult sr =
        segmentation_loss(logits, seghead.num_classes, side[s].track_class);
    *seg_losses[s] = sr.loss;
    for (double& g : sr.grad_logits) g *= weights.lambda_segm;
    std::vector<double> gf = seg_backward(seghead, feats[s], sr.grad_logits, fb.seg_grads);
    for (size_t i = 0; i < gf.size(); ++i) (*dfeat[s])[i] += gf[i];
  }

  fb.total = total_loss(fb.contrastive, fb.landmark1, fb.landmark2,
                        fb.segmentation1, fb.segmentation2, weights);

  // Backward through the grid query (canonical) or straight into the MLP.
  std::vector<double> grad_smoothed;
  if (canonical) grad_smoothed.assign(grid->values(), 0.0);
  for (int s = 0; s < 2; ++s) {
    for (int k = 0; k < p_count; ++k) {
      FeatureVec upstream(size_t(feat_dim), 0.0);
      const double* g = &(*dfeat[s])[size_t(k) * feat_dim];
      std::copy(g, g + feat_dim, upstream.begin());
      if (canonical) {
        QueryGrad qg = query_grad(*grid, coords[s][size_t(k)], upstream);
        for (auto& cg : qg.corner_grads) grad_smoothed[cg.first] += cg.second;
        const PixelTrace& t = traces[s][size_t(k)];
        std::vector<double> da(3);
        for (int c = 0; c < 3; ++c) {
          double sig = logistic(t.out[size_t(c)]);
          da[size_t(c)] = qg.point_grad[c] * sig * (1.0 - sig);
        }
        mlp_backward(params, t, da, fb.embedder_grads);
      } else {
        mlp_backward(params, traces[s][size_t(k)], upstream, fb.embedder_grads);
      }
    }
    for (size_t k = 0; k < lmk_traces[s].size(); ++k) {
      const PixelTrace& t = lmk_traces[s][k];
      std::vector<double> da(3);
      for (int c = 0; c < 3; ++c) {
        double sig = logistic(t.out[size_t(c)]);
        da[size_t(c)] = weights.lambda_lmks * lmk_grads[s][k][c] * sig * (1.0 - sig);
      }
      mlp_backward(params, t, da, fb.embedder_grads);
    }
  }
  if (canonical)
    fb.grid_raw_grads = smooth_transpose(grad_smoothed, grid->resolution,
                                         grid->feature_dim, grid->sigma);
  return fb;
}

namespace {

// Track endpoints move with the same affine as their image; survivors must
// land on valid augmented pixels.
TrackPairs transform_tracks(const TrackPairs& in, const AffineAug& aug_a,
                            const AffineAug& aug_b, const Image<uint8_t>& mask_a,
                            const Image<uint8_t>& mask_b, bool swap_sides,
                            int* dropped) {
  TrackPairs out;
  for (size_t k = 0; k < in.count(); ++k) {
    auto a = swap_sides ? in.b[k] : in.a[k];
    auto b = swap_sides ? in.a[k] : in.b[k];
    Vec2 pa = apply_affine(aug_a, {a[0] + 0.5, a[1] + 0.5});
    Vec2 pb = apply_affine(aug_b, {b[0] + 0.5, b[1] + 0.5});
    int ax = int(std::floor(pa.x)), ay = int(std::floor(pa.y));
    int bx = int(std::floor(pb.x)), by = int(std::floor(pb.y));
    if (!mask_a.in_bounds(ax, ay) || !mask_a.at(ax, ay) ||
        !mask_b.in_bounds(bx, by) || !mask_b.at(bx, by)) {
      ++*dropped;
      continue;
    }
    out.a.push_back({ax, ay});
    out.b.push_back({bx, by});
    out.id.push_back(in.id[k]);
  }
  return out;
}

FrameBundle bundle_of(const LoadedSequence& seq, int frame) {
  return FrameBundle{seq.frames[size_t(frame)], seq.masks[size_t(frame)],
                     seq.labels[size_t(frame)], seq.uvws[size_t(frame)],
                     seq.landmarks[size_t(frame)]};
}

}  // namespace

TrainResult train(const TrainDataset& dataset, const TrainConfig& cfg) {
  if (dataset.seqs.empty()) fail(ErrorKind::argument, "empty dataset");
  if (cfg.steps < 0 || cfg.batch_pairs < 1)
    fail(ErrorKind::argument, "invalid training configuration");
  if (cfg.warmup_steps > cfg.steps)
    fail(ErrorKind::argument, "warmup_steps must not exceed steps");
  if (!(cfg.lr_embedder > 0.0) || !(cfg.lr_grid > 0.0) || !(cfg.lr_seghead > 0.0))
    fail(ErrorKind::argument, "learning rates must be positive");

  const bool canonical = cfg.mode == EmbedMode::canonical;
  TrainResult res;
  res.grid = canonical ? new_grid(cfg.grid_resolution, cfg.grid_dim,
                                  cfg.grid_sigma, Rng::mix(cfg.seed, 11))
                       : LatentGrid{};
  int out_dim = canonical ? 3 : cfg.grid_dim;
  res.params = new_embedder(cfg.pe_freqs, cfg.hidden, out_dim, cfg.mode,
                            Rng::mix(cfg.seed, 22));
  int feat_dim = canonical ? cfg.grid_dim : out_dim;
  res.seghead = new_seg_head(kNumRegions, feat_dim, Rng::mix(cfg.seed, 33));

  AdamState st_w1, st_b1, st_w2, st_b2, st_w3, st_b3, st_grid, st_sw, st_sb;
  Rng rng(Rng::mix(cfg.seed, 44));
  int64_t adam_t = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    double lr_e = cosine_lr(step, cfg.steps, cfg.warmup_steps, cfg.lr_embedder);
    double lr_g = cosine_lr(step, cfg.steps, cfg.warmup_steps, cfg.lr_grid);
    double lr_s = cosine_lr(step, cfg.steps, cfg.warmup_steps, cfg.lr_seghead);

    EmbedderGrads acc_e;
    acc_e.init_like(res.params);
    std::vector<double> acc_grid(canonical ? res.grid.values() : 0, 0.0);
    SegHeadGrads acc_seg;
    acc_seg.grad_weight.assign(res.seghead.weight.size(), 0.0);
    acc_seg.grad_bias.assign(res.seghead.bias.size(), 0.0);
    StepStats stats;
    stats.lr_embedder = lr_e;

    for (int bp = 0; bp < cfg.batch_pairs; ++bp) {
      const LoadedSequence& seq =
          dataset.seqs[size_t(rng.uniform_int(dataset.seqs.size()))];
      if (seq.track_pairs.empty()) {
        ++res.skipped_batches;
        continue;
      }
      size_t pi = size_t(rng.uniform_int(seq.track_pairs.size()));
      bool swap_sides = rng.coin();
      AugmentDraw d1 = draw_augment(rng);
      AugmentDraw d2 = draw_augment(rng);
      int fi = seq.track_pairs_index[pi][0];
      int fj = seq.track_pairs_index[pi][1];
      if (swap_sides) std::swap(fi, fj);

      AffineAug a1 = make_affine(d1, seq.frames[0].width, seq.frames[0].height);
      AffineAug a2 = make_affine(d2, seq.frames[0].width, seq.frames[0].height);
      PairSample sample;
      sample.f1 = augment_bundle(bundle_of(seq, fi), a1);
      sample.f2 = augment_bundle(bundle_of(seq, fj), a2);
      sample.tracks = transform_tracks(seq.track_pairs[pi], a1, a2,
                                       sample.f1.mask, sample.f2.mask,
                                       swap_sides, &sample.dropped_tracks);
      ForwardBackward fb;
      try {
        fb = forward_backward(res.params, canonical ? &res.grid : nullptr,
                              res.seghead, sample, dataset.anchors,
                              cfg.loss_weights);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::degenerate) {
          ++res.skipped_batches;
          continue;
        }
        throw;
      }
      res.dropped_tracks += size_t(fb.dropped_tracks);
      stats.mean_tracks += fb.used_tracks;
      stats.total += fb.total;
      stats.contrastive += fb.contrastive;
      stats.landmark += fb.landmark1 + fb.landmark2;
      stats.segmentation += fb.segmentation1 + fb.segmentation2;
      ++stats.pairs_used;
      auto add = [](std::vector<double>& dst, const std::vector<double>& src) {
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      };
      add(acc_e.w1, fb.embedder_grads.w1);
      add(acc_e.b1, fb.embedder_grads.b1);
      add(acc_e.w2, fb.embedder_grads.w2);
      add(acc_e.b2, fb.embedder_grads.b2);
      add(acc_e.w3, fb.embedder_grads.w3);
      add(acc_e.b3, fb.embedder_grads.b3);
      if (canonical) add(acc_grid, fb.grid_raw_grads);
      add(acc_seg.grad_weight, fb.seg_grads.grad_weight);
      add(acc_seg.grad_bias, fb.seg_grads.grad_bias);
    }

    if (stats.pairs_used > 0) {
      double inv = 1.0 / stats.pairs_used;
      acc_e.scale(inv);
      for (double& g : acc_grid) g *= inv;
      for (double& g : acc_seg.grad_weight) g *= inv;
      for (double& g : acc_seg.grad_bias) g *= inv;
      stats.total *= inv;
      stats.contrastive *= inv;
      stats.landmark *= inv;
      stats.segmentation *= inv;
      stats.mean_tracks *= inv;

      ++adam_t;
      // Decoupled decay on weight matrices only; biases and the grid are
      // excluded.
      adamw_step(res.params.w1, acc_e.w1, st_w1, lr_e, cfg.weight_decay, adam_t);
      adamw_step(res.params.b1, acc_e.b1, st_b1, lr_e, 0.0, adam_t);
      adamw_step(res.params.w2, acc_e.w2, st_w2, lr_e, cfg.weight_decay, adam_t);
      adamw_step(res.params.b2, acc_e.b2, st_b2, lr_e, 0.0, adam_t);
      adamw_step(res.params.w3, acc_e.w3, st_w3, lr_e, cfg.weight_decay, adam_t);
      adamw_step(res.params.b3, acc_e.b3, st_b3, lr_e, 0.0, adam_t);
      if (canonical) {
        adamw_step(res.grid.raw, acc_grid, st_grid, lr_g, 0.0, adam_t);
        resmooth(res.grid);
      }
      adamw_step(res.seghead.weight, acc_seg.grad_weight, st_sw, lr_s,
                 cfg.weight_decay, adam_t);
      adamw_step(res.seghead.bias, acc_seg.grad_bias, st_sb, lr_s, 0.0, adam_t);
    }
    res.curve.push_back(stats);
  }
  return res;
}

void write_loss_csv(const std::string& path, const std::vector<StepStats>& curve) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot open for writing: " + path);
  out << "step,total,contrastive,landmark,segmentation,lr_embedder,pairs,tracks\n";
  out.precision(12);
  for (size_t i = 0; i < curve.size(); ++i) {
    const StepStats& s = curve[i];
    out << i << "," << s.total << "," << s.contrastive << "," << s.landmark
        << "," << s.segmentation << "," << s.lr_embedder << "," << s.pairs_used
        << "," << s.mean_tracks << "\n";
  }
  if (!out) fail(ErrorKind::io, "write failed: " + path);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  BinWriter w(path);
  w.magic("DMNET01");
  w.u32(uint32_t(ckpt.params.pe_freqs));
  w.u32(uint32_t(ckpt.params.hidden));
  w.u32(uint32_t(ckpt.params.out_dim));
  w.u32(ckpt.params.mode == EmbedMode::canonical ? 0u : 1u);
  for (const auto* t : {&ckpt.params.w1, &ckpt.params.b1, &ckpt.params.w2,
                        &ckpt.params.b2, &ckpt.params.w3, &ckpt.params.b3})
    for (double v : *t) w.f32(float(v));
  w.u32(uint32_t(ckpt.seghead.num_classes));
  w.u32(uint32_t(ckpt.seghead.dim));
  for (double v : ckpt.seghead.weight) w.f32(float(v));
  for (double v : ckpt.seghead.bias) w.f32(float(v));
  bool has_grid = ckpt.grid.resolution > 0;
  w.u32(has_grid ? 1u : 0u);
  if (has_grid) write_grid_stream(w, ckpt.grid);
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  BinReader r(path);
  r.magic("DMNET01");
  Checkpoint c;
  c.params.pe_freqs = int(r.u32());
  c.params.hidden = int(r.u32());
  c.params.out_dim = int(r.u32());
  uint32_t mode = r.u32();
  if (mode > 1) r.parse_fail("bad mode flag");
  c.params.mode = mode == 0 ? EmbedMode::canonical : EmbedMode::direct_feature;
  if (c.params.pe_freqs < 1 || c.params.pe_freqs > 64 || c.params.hidden < 1 ||
      c.params.hidden > 8192 || c.params.out_dim < 1 || c.params.out_dim > 4096)
    r.parse_fail("implausible architecture");
  int in = c.params.in_dim(), h = c.params.hidden, out = c.params.out_dim;
  c.params.w1.resize(size_t(h) * in);
  c.params.b1.resize(size_t(h));
  c.params.w2.resize(size_t(h) * h);
  c.params.b2.resize(size_t(h));
  c.params.w3.resize(size_t(out) * h);
  c.params.b3.resize(size_t(out));
  for (auto* t : {&c.params.w1, &c.params.b1, &c.params.w2, &c.params.b2,
                  &c.params.w3, &c.params.b3})
    for (double& v : *t) v = r.f32();
  c.seghead.num_classes = int(r.u32());
  c.seghead.dim = int(r.u32());
  if (c.seghead.num_classes < 2 || c.seghead.num_classes > 4096 ||
      c.seghead.dim < 1 || c.seghead.dim > 4096)
    r.parse_fail("implausible seg head");
  c.seghead.weight.resize(size_t(c.seghead.num_classes) * c.seghead.dim);
  c.seghead.bias.resize(size_t(c.seghead.num_classes));
  for (double& v : c.seghead.weight) v = r.f32();
  for (double& v : c.seghead.bias) v = r.f32();
  if (r.u32() != 0) c.grid = read_grid_stream(r);
  return c;
}

}  // namespace densemarks
