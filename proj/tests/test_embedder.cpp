#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <cstdio>
#include <fstream>

#include "densemarks/cli_commands.hpp"
#include "densemarks/embedder.hpp"
#include "densemarks/rng.hpp"

using namespace densemarks;
namespace fs = std::filesystem;

namespace {

// Small random pair fixture with valid tracks, landmarks and labels.
struct Fixture {
  PairSample pair;
  LandmarkAnchors anchors;
};

Fixture make_fixture(uint64_t seed, int size = 16, int tracks = 6,
                     int landmarks = 4) {
  Rng rng(seed);
  Fixture fx;
  auto make_bundle = [&](FrameBundle& b) {
    b.rgb = RgbImage(size, size);
    for (float& v : b.rgb.rgb) v = float(rng.uniform());
    b.mask = Image<uint8_t>(size, size, 255);
    b.labels = Image<uint8_t>(size, size, 0);
    for (uint8_t& l : b.labels.data) l = uint8_t(rng.uniform_int(kNumRegions));
    b.uvw = UvwMap(size, size);
  };
  make_bundle(fx.pair.f1);
  make_bundle(fx.pair.f2);
  for (int k = 0; k < tracks; ++k) {
    fx.pair.tracks.a.push_back(
        {int(rng.uniform_int(size)), int(rng.uniform_int(size))});
    fx.pair.tracks.b.push_back(
        {int(rng.uniform_int(size)), int(rng.uniform_int(size))});
    fx.pair.tracks.id.push_back(k);
  }
  for (int k = 0; k < landmarks; ++k) {
    LandmarkObs o;
    o.x = rng.uniform(1.0, size - 1.0);
    o.y = rng.uniform(1.0, size - 1.0);
    o.visible = true;
    fx.pair.f1.landmarks.push_back(o);
    LandmarkObs o2;
    o2.x = rng.uniform(1.0, size - 1.0);
    o2.y = rng.uniform(1.0, size - 1.0);
    o2.visible = true;
    fx.pair.f2.landmarks.push_back(o2);
    fx.anchors.anchors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  }
  return fx;
}

double loss_only(const EmbedderParams& p, const LatentGrid* g,
                 const SegmentationHead& s, const PairSample& pair,
                 const LandmarkAnchors& anchors, const LossWeights& w) {
  return forward_backward(p, g, s, pair, anchors, w).total;
}

// A tiny on-disk dataset for the training-loop tests.
struct TempTrainData {
  std::string dir;
  TempTrainData() {
    dir = (fs::temp_directory_path() / "dm_embed_train_data").string();
    fs::remove_all(dir);
    for (int s = 0; s < 2; ++s) {
      Sequence seq = generate_sequence(500 + uint64_t(s), 3, 48,
                                       make_default_camera(48), MotionParams{});
      char name[16];
      std::snprintf(name, sizeof name, "seq_%03d", s);
      save_sequence(seq, dir + "/" + name, 150, 900 + uint64_t(s));
    }
  }
  ~TempTrainData() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("embed_image: zero-weight network maps every valid pixel to center") {
  EmbedderParams p = new_embedder(4, 8, 3, EmbedMode::canonical, 1);
  for (auto* t : {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3})
    std::fill(t->begin(), t->end(), 0.0);
  RgbImage img(8, 8);
  Image<uint8_t> mask(8, 8, 0);
  mask.at(2, 3) = 255;
  mask.at(5, 5) = 255;
  UvwMap map = embed_image(p, img, mask);
  CHECK(map.count_valid() == 2);
  CHECK(map.uvw[map.idx(2, 3)].x == doctest::Approx(0.5));
  CHECK(map.uvw[map.idx(2, 3)].y == doctest::Approx(0.5));
  CHECK(map.uvw[map.idx(2, 3)].z == doctest::Approx(0.5));
  CHECK(map.valid[map.idx(0, 0)] == 0);
}

TEST_CASE("embed_image: deterministic and strictly inside the open cube") {
  EmbedderParams p = new_embedder(6, 32, 3, EmbedMode::canonical, 99);
  Rng rng(4);
  RgbImage img(24, 24);
  for (float& v : img.rgb) v = float(rng.uniform());
  Image<uint8_t> mask(24, 24, 255);
  UvwMap a = embed_image(p, img, mask);
  UvwMap b = embed_image(p, img, mask);
  for (size_t i = 0; i < a.pixels(); ++i) {
    CHECK(a.uvw[i].x == b.uvw[i].x);
    CHECK(a.uvw[i].y == b.uvw[i].y);
    CHECK(a.uvw[i].z == b.uvw[i].z);
    for (int c = 0; c < 3; ++c) {
      CHECK(a.uvw[i][c] > 0.0);
      CHECK(a.uvw[i][c] < 1.0);
    }
  }
}

TEST_CASE("adamw: zero gradient, pure decay, closed-form single step") {
  SUBCASE("zero gradient, zero decay leaves parameters unchanged") {
    std::vector<double> p = {1.5, -2.0};
    std::vector<double> g = {0.0, 0.0};
    AdamState st;
    adamw_step(p, g, st, 0.1, 0.0, 1);
    CHECK(p[0] == 1.5);
    CHECK(p[1] == -2.0);
  }
  SUBCASE("decay only shrinks by (1 - lr*wd)") {
    std::vector<double> p = {2.0};
    std::vector<double> g = {0.0};
    AdamState st;
    adamw_step(p, g, st, 0.5, 0.01, 1);
    CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.5 * 0.01)).epsilon(1e-15));
  }
  SUBCASE("one step on f(x)=x^2 from x=1 matches the closed form") {
    // g = 2; m=0.2, v=0.004; mhat=2, vhat=4; update = lr * 2/(2+eps).
    std::vector<double> p = {1.0};
    std::vector<double> g = {2.0};
    AdamState st;
    double lr = 0.1;
    adamw_step(p, g, st, lr, 0.0, 1);
    double expect = 1.0 - lr * (2.0 / (2.0 + 1e-8));
    CHECK(p[0] == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("cosine_lr: warmup end, total end, decay midpoint") {
  CHECK(cosine_lr(100, 1000, 100, 0.5) == doctest::Approx(0.5));
  CHECK(cosine_lr(1000, 1000, 100, 0.5) == doctest::Approx(0.0));
  CHECK(cosine_lr(550, 1000, 100, 0.5) == doctest::Approx(0.25));
  CHECK(cosine_lr(0, 1000, 100, 0.5) == doctest::Approx(0.0));
  CHECK(cosine_lr(50, 1000, 100, 0.5) == doctest::Approx(0.25));
}

TEST_CASE("forward_backward: identical sides reduce the loss to the negatives") {
  Fixture fx = make_fixture(7);
  LatentGrid grid = new_grid(6, 5, 0.5, 3);
  SegmentationHead head = new_seg_head(kNumRegions, 5, 4);
  EmbedderParams params = new_embedder(4, 16, 3, EmbedMode::canonical, 5);
  fx.pair.f2 = fx.pair.f1;
  fx.pair.tracks.b = fx.pair.tracks.a;
  LossWeights w{0.0, 0.0};
  ForwardBackward fb =
      forward_backward(params, &grid, head, fx.pair, fx.anchors, w);
  CHECK(fb.contrastive >= 0.0);
  CHECK(fb.total == doctest::Approx(fb.contrastive));
  CHECK(fb.landmark1 >= 0.0);
}

TEST_CASE("forward_backward: dropping the segmentation term subtracts exactly") {
  Fixture fx = make_fixture(11);
  LatentGrid grid = new_grid(5, 4, 1.0, 6);
  SegmentationHead head = new_seg_head(kNumRegions, 4, 7);
  EmbedderParams params = new_embedder(4, 12, 3, EmbedMode::canonical, 8);
  LossWeights full{3.0, 2.0};
  LossWeights no_seg{3.0, 0.0};
  ForwardBackward a =
      forward_backward(params, &grid, head, fx.pair, fx.anchors, full);
  ForwardBackward b =
      forward_backward(params, &grid, head, fx.pair, fx.anchors, no_seg);
  CHECK(a.total - b.total ==
        doctest::Approx(2.0 * (a.segmentation1 + a.segmentation2)).epsilon(1e-12));
}

TEST_CASE("forward_backward: gradients match finite differences (canonical)") {
  Fixture fx = make_fixture(23);
  LatentGrid grid = new_grid(5, 4, 0.8, 31);
  SegmentationHead head = new_seg_head(kNumRegions, 4, 32);
  EmbedderParams params = new_embedder(3, 10, 3, EmbedMode::canonical, 33);
  LossWeights w{2.0, 1.0};
  ForwardBackward fb =
      forward_backward(params, &grid, head, fx.pair, fx.anchors, w);

  Rng rng(55);
  const double h = 1e-6;
  int checked = 0;
  for (int probe = 0; probe < 50; ++probe) {
    int group = int(rng.uniform_int(3));
    if (group == 0) {
      std::vector<double>* tensors[6] = {&params.w1, &params.b1, &params.w2,
                                         &params.b2, &params.w3, &params.b3};
      std::vector<double>* grads[6] = {
          &fb.embedder_grads.w1, &fb.embedder_grads.b1, &fb.embedder_grads.w2,
          &fb.embedder_grads.b2, &fb.embedder_grads.w3, &fb.embedder_grads.b3};
      int which = int(rng.uniform_int(6));
      size_t i = size_t(rng.uniform_int(tensors[which]->size()));
      double keep = (*tensors[which])[i];
      (*tensors[which])[i] = keep + h;
      double lp = loss_only(params, &grid, head, fx.pair, fx.anchors, w);
      (*tensors[which])[i] = keep - h;
      double lm = loss_only(params, &grid, head, fx.pair, fx.anchors, w);
      (*tensors[which])[i] = keep;
      double num = (lp - lm) / (2.0 * h);
      double ana = (*grads[which])[i];
      CHECK(std::abs(num - ana) <= 1e-4 * std::max(1.0, std::abs(ana)));
    } else if (group == 1) {
      size_t i = size_t(rng.uniform_int(grid.raw.size()));
      double keep = grid.raw[i];
      grid.raw[i] = keep + h;
      resmooth(grid);
      double lp = loss_only(params, &grid, head, fx.pair, fx.anchors, w);
      grid.raw[i] = keep - h;
      resmooth(grid);
      double lm = loss_only(params, &grid, head, fx.pair, fx.anchors, w);
      grid.raw[i] = keep;
      resmooth(grid);
      double num = (lp - lm) / (2.0 * h);
      double ana = fb.grid_raw_grads[i];
      CHECK(std::abs(num - ana) <= 1e-4 * std::max(1.0, std::abs(ana)));
    } else {
      bool bias = rng.coin();
      std::vector<double>& tensor = bias ? head.bias : head.weight;
      std::vector<double>& grad =
          bias ? fb.seg_grads.grad_bias : fb.seg_grads.grad_weight;
      size_t i = size_t(rng.uniform_int(tensor.size()));
      double keep = tensor[i];
      tensor[i] = keep + h;
      double lp = loss_only(params, &grid, head, fx.pair, fx.anchors, w);
      tensor[i] = keep - h;
      double lm = loss_only(params, &grid, head, fx.pair, fx.anchors, w);
      tensor[i] = keep;
      double num = (lp - lm) / (2.0 * h);
      double ana = grad[i];
      CHECK(std::abs(num - ana) <= 1e-4 * std::max(1.0, std::abs(ana)));
    }
    ++checked;
  }
  CHECK(checked == 50);
}

TEST_CASE("forward_backward: direct_feature mode has no grid gradients") {
  Fixture fx = make_fixture(41);
  SegmentationHead head = new_seg_head(kNumRegions, 6, 42);
  EmbedderParams params = new_embedder(3, 10, 6, EmbedMode::direct_feature, 43);
  LossWeights w{50.0, 1.0};
  ForwardBackward fb =
      forward_backward(params, nullptr, head, fx.pair, fx.anchors, w);
  CHECK(fb.grid_raw_grads.empty());
  CHECK(fb.landmark1 == 0.0);
  CHECK(fb.landmark2 == 0.0);
  CHECK(fb.contrastive > 0.0);

  Rng rng(44);
  const double h = 1e-6;
  for (int probe = 0; probe < 12; ++probe) {
    size_t i = size_t(rng.uniform_int(params.w2.size()));
    double keep = params.w2[i];
    params.w2[i] = keep + h;
    double lp = loss_only(params, nullptr, head, fx.pair, fx.anchors, w);
    params.w2[i] = keep - h;
    double lm = loss_only(params, nullptr, head, fx.pair, fx.anchors, w);
    params.w2[i] = keep;
    double num = (lp - lm) / (2.0 * h);
    CHECK(std::abs(num - fb.embedder_grads.w2[i]) <=
          1e-4 * std::max(1.0, std::abs(fb.embedder_grads.w2[i])));
  }
}

TEST_CASE("forward_backward: tracks on invalid pixels are dropped and counted") {
  Fixture fx = make_fixture(61, 16, 8);
  LatentGrid grid = new_grid(4, 3, 0.0, 62);
  SegmentationHead head = new_seg_head(kNumRegions, 3, 63);
  EmbedderParams params = new_embedder(3, 8, 3, EmbedMode::canonical, 64);
  fx.pair.f1.mask.at(fx.pair.tracks.a[0][0], fx.pair.tracks.a[0][1]) = 0;
  fx.pair.f1.mask.at(fx.pair.tracks.a[1][0], fx.pair.tracks.a[1][1]) = 0;
  LossWeights w;
  ForwardBackward fb =
      forward_backward(params, &grid, head, fx.pair, fx.anchors, w);
  CHECK(fb.dropped_tracks >= 2);
}

TEST_CASE("forward_backward: fewer than 2 surviving tracks is degenerate") {
  Fixture fx = make_fixture(71, 16, 2);
  LatentGrid grid = new_grid(4, 3, 0.0, 72);
  SegmentationHead head = new_seg_head(kNumRegions, 3, 73);
  EmbedderParams params = new_embedder(3, 8, 3, EmbedMode::canonical, 74);
  fx.pair.f1.mask.at(fx.pair.tracks.a[0][0], fx.pair.tracks.a[0][1]) = 0;
  CHECK_THROWS_AS(
      forward_backward(params, &grid, head, fx.pair, fx.anchors, LossWeights{}),
      Error);
}

TEST_CASE("train: identical config and seed reproduce the loss curve exactly") {
  TempTrainData data;
  TrainDataset ds = load_train_dataset(data.dir);
  TrainConfig tc;
  tc.steps = 30;
  tc.warmup_steps = 2;
  tc.seed = 99;
  tc.grid_resolution = 8;
  tc.grid_dim = 6;
  TrainResult a = train(ds, tc);
  TrainResult b = train(ds, tc);
  REQUIRE(a.curve.size() == b.curve.size());
  for (size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].total == b.curve[i].total);
    CHECK(a.curve[i].contrastive == b.curve[i].contrastive);
  }
  for (size_t i = 0; i < a.params.w1.size(); ++i)
    CHECK(a.params.w1[i] == b.params.w1[i]);
  for (size_t i = 0; i < a.grid.raw.size(); ++i)
    CHECK(a.grid.raw[i] == b.grid.raw[i]);
}

TEST_CASE("train: steps=0 returns the initial parameters unchanged") {
  TempTrainData data;
  TrainDataset ds = load_train_dataset(data.dir);
  TrainConfig tc;
  tc.steps = 0;
  tc.warmup_steps = 0;
  tc.seed = 31;
  tc.grid_resolution = 8;
  tc.grid_dim = 6;
  TrainResult r = train(ds, tc);
  EmbedderParams init = new_embedder(tc.pe_freqs, tc.hidden, 3,
                                     EmbedMode::canonical, Rng::mix(31, 22));
  CHECK(r.params.w1 == init.w1);
  CHECK(r.params.b3 == init.b3);
  LatentGrid g0 = new_grid(8, 6, tc.grid_sigma, Rng::mix(31, 11));
  CHECK(r.grid.raw == g0.raw);
  CHECK(r.curve.empty());
}

TEST_CASE("checkpoint: save/load round trip preserves everything at f32") {
  EmbedderParams p = new_embedder(5, 12, 3, EmbedMode::canonical, 81);
  SegmentationHead s = new_seg_head(kNumRegions, 7, 82);
  LatentGrid g = new_grid(4, 7, 0.7, 83);
  std::string path = (fs::temp_directory_path() / "dm_ckpt.dmn").string();
  save_checkpoint(path, {p, s, g});
  Checkpoint back = load_checkpoint(path);
  CHECK(back.params.pe_freqs == 5);
  CHECK(back.params.hidden == 12);
  CHECK(back.params.mode == EmbedMode::canonical);
  CHECK(back.seghead.num_classes == kNumRegions);
  CHECK(back.grid.resolution == 4);
  for (size_t i = 0; i < p.w1.size(); ++i)
    CHECK(back.params.w1[i] == double(float(p.w1[i])));
  for (size_t i = 0; i < g.raw.size(); ++i)
    CHECK(back.grid.raw[i] == double(float(g.raw[i])));
  // Saving the loaded checkpoint again is byte-stable.
  std::string path2 = (fs::temp_directory_path() / "dm_ckpt2.dmn").string();
  save_checkpoint(path2, back);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {});
  std::string sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
  fs::remove(path);
  fs::remove(path2);
}
