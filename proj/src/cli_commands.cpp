#include "densemarks/cli_commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "densemarks/embedder.hpp"
#include "densemarks/matcher.hpp"
#include "densemarks/pose_fit.hpp"
#include "densemarks/stereo.hpp"
#include "densemarks/synthetic_heads.hpp"

namespace fs = std::filesystem;

namespace densemarks {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

// Registry of configuration keys each command understands.
const std::map<std::string, std::set<std::string>>& key_registry() {
  static const std::map<std::string, std::set<std::string>> reg = {
      {"synth",
       {"out", "seed", "synth.sequences", "synth.frames", "synth.size",
        "synth.track_budget", "synth.yaw_amp", "synth.pitch_amp",
        "synth.deform_amp", "synth.camera_distance", "synth.focal",
        "synth.rig_views", "synth.rig_spread_deg"}},
      {"train",
       {"out", "seed", "train.dataset", "train.steps", "train.batch_pairs",
        "train.lr_embedder", "train.lr_grid", "train.lr_seghead",
        "train.warmup_steps", "train.weight_decay", "train.mode",
        "train.pe_freqs", "train.hidden", "train.lambda_lmks",
        "train.lambda_segm", "grid.resolution", "grid.feature_dim",
        "grid.sigma"}},
      {"embed", {"out", "seed", "embed.checkpoint", "embed.frame", "embed.mask"}},
      {"warp",
       {"out", "seed", "warp.source_uvw", "warp.source_rgb", "warp.target_uvw"}},
      {"query", {"out", "seed", "query.annotations", "query.find_in"}},
      {"triangulate",
       {"out", "seed", "tri.views", "tri.frame", "stereo.downsample",
        "stereo.min_track_len", "stereo.uvw_tol", "stereo.track_tol",
        "stereo.reproj_thresh_px"}},
      {"fit",
       {"out", "seed", "fit.observed", "fit.camera", "fit.init", "fit.iters"}},
      {"eval",
       {"out", "seed", "eval.checkpoint", "eval.dataset", "eval.pairs_per_seq"}},
  };
  return reg;
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create output directory: " + dir);
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config: " + path);
  RunConfig rc;
  std::string line;
  size_t offset = 0;
  while (std::getline(in, line)) {
    size_t line_start = offset;
    offset += line.size() + 1;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::input_format, path + " at byte " +
                                        std::to_string(line_start) +
                                        ": expected 'key = value'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty())
      fail(ErrorKind::input_format,
           path + " at byte " + std::to_string(line_start) + ": empty key");
    rc.kv[key] = value;
  }
  return rc;
}

void RunConfig::set(const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    fail(ErrorKind::argument, "--set expects key=value, got: " + assignment);
  kv[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

ConfigView::ConfigView(const RunConfig& rc, std::string command)
    : rc_(&rc), command_(std::move(command)) {
  validate_keys();
}

void ConfigView::validate_keys() const {
  const auto& reg = key_registry();
  auto it = reg.find(command_);
  if (it == reg.end()) fail(ErrorKind::argument, "unknown command " + command_);
  for (const auto& [key, value] : rc_->kv) {
    (void)value;
    if (!it->second.count(key))
      fail(ErrorKind::argument,
           "unknown config key '" + key + "' for command " + command_);
  }
}

std::string ConfigView::raw(const std::string& key, const std::string& def,
                            bool required) {
  auto it = rc_->kv.find(key);
  std::string v = it != rc_->kv.end() ? it->second : def;
  if (required && it == rc_->kv.end())
    fail(ErrorKind::argument, "missing required config key '" + key + "'");
  resolved_[key] = v;
  return v;
}

std::string ConfigView::get_str(const std::string& key, const std::string& def) {
  return raw(key, def, false);
}
std::string ConfigView::require_str(const std::string& key) {
  return raw(key, "", true);
}
int ConfigView::get_int(const std::string& key, int def) {
  std::string v = raw(key, std::to_string(def), false);
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail(ErrorKind::argument, "config key '" + key + "' is not an integer: " + v);
  }
}
double ConfigView::get_double(const std::string& key, double def) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", def);
  std::string v = raw(key, buf, false);
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail(ErrorKind::argument, "config key '" + key + "' is not a number: " + v);
  }
}
uint64_t ConfigView::get_u64(const std::string& key, uint64_t def) {
  std::string v = raw(key, std::to_string(def), false);
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    fail(ErrorKind::argument, "config key '" + key + "' is not an integer: " + v);
  }
}

void ConfigView::write_resolved(const std::string& dir) const {
  std::ofstream out(dir + "/config_resolved.txt");
  if (!out) fail(ErrorKind::io, "cannot write resolved config in " + dir);
  out << "# command: " << command_ << "\n";
  for (const auto& [k, v] : resolved_) out << k << " = " << v << "\n";
}

// --- synth --------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
  ConfigView c(cfg, "synth");
  std::string out = c.get_str("out", "out_synth");
  uint64_t seed = c.get_u64("seed", 1);
  int n = c.get_int("synth.sequences", 0);
  int frames = c.get_int("synth.frames", 8);
  int size = c.get_int("synth.size", 64);
  int budget = c.get_int("synth.track_budget", 256);
  MotionParams motion;
  motion.yaw_amp = c.get_double("synth.yaw_amp", 0.7);
  motion.pitch_amp = c.get_double("synth.pitch_amp", 0.3);
  motion.deform_amp = c.get_double("synth.deform_amp", 0.05);
  double cam_dist = c.get_double("synth.camera_distance", 5.0);
  double focal = c.get_double("synth.focal", 1.7);
  int rig_views = c.get_int("synth.rig_views", 0);
  double rig_spread =
      c.get_double("synth.rig_spread_deg", 50.0) * 3.14159265358979323846 / 180.0;

  ensure_out_dir(out);
  c.write_resolved(out);

  if (rig_views > 0) {
    // Rig mode: one static scene observed by rig_views cameras on a yaw arc,
    // each saved as a single-frame view directory.
    if (rig_views < 2) fail(ErrorKind::argument, "rig needs >= 2 views");
    const HeadTemplate& tmpl = head_template();
    for (int v = 0; v < rig_views; ++v) {
      double alpha = rig_views == 1 ? 0.0
                                    : -0.5 * rig_spread +
                                          rig_spread * double(v) / (rig_views - 1);
      Camera cam = make_default_camera(size, cam_dist, focal);
      cam.rot = cam.rot * rot_y(-alpha);
      validate_camera(cam);
      FrameData f = render_frame(tmpl, Mat3::identity(), motion.deform_amp,
                                 0.0, cam);
      char name[32];
      std::snprintf(name, sizeof name, "view_%02d", v);
      std::string dir = out + "/" + name;
      ensure_out_dir(dir);
      write_ppm(dir + "/frame_0000.ppm", f.rgb);
      write_pgm(dir + "/mask_0000.pgm", f.mask);
      write_pgm(dir + "/labels_0000.pgm", f.labels);
      write_uvw(dir + "/uvw_0000.dmv", f.uvw);
      save_camera(dir + "/camera.txt", cam);
    }
    std::cout << "cmd=synth mode=rig views=" << rig_views << " out=" << out
              << "\n";
    return;
  }

  if (n <= 0) fail(ErrorKind::argument, "synth.sequences must be positive");
  Camera cam = make_default_camera(size, cam_dist, focal);
  for (int s = 0; s < n; ++s) {
    Sequence seq =
        generate_sequence(Rng::mix(seed, uint64_t(s)), frames, size, cam, motion);
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03d", s);
    save_sequence(seq, out + "/" + name, budget, Rng::mix(seed, 7777 + uint64_t(s)));
  }
  std::cout << "cmd=synth sequences=" << n << " frames=" << frames
            << " size=" << size << " out=" << out << "\n";
}

// --- train --------------------------------------------------------------------

void cmd_train(const RunConfig& cfg) {
  ConfigView c(cfg, "train");
  std::string out = c.get_str("out", "out_train");
  TrainConfig tc;
  tc.seed = c.get_u64("seed", 1);
  std::string dataset_dir = c.require_str("train.dataset");
  tc.steps = c.get_int("train.steps", 2000);
  tc.batch_pairs = c.get_int("train.batch_pairs", 2);
  tc.lr_embedder = c.get_double("train.lr_embedder", tc.lr_embedder);
  tc.lr_grid = c.get_double("train.lr_grid", tc.lr_grid);
  tc.lr_seghead = c.get_double("train.lr_seghead", tc.lr_seghead);
  tc.warmup_steps = c.get_int("train.warmup_steps", std::max(1, tc.steps / 50));
  tc.weight_decay = c.get_double("train.weight_decay", 1e-4);
  std::string mode = c.get_str("train.mode", "canonical");
  if (mode == "canonical")
    tc.mode = EmbedMode::canonical;
  else if (mode == "direct_feature")
    tc.mode = EmbedMode::direct_feature;
  else
    fail(ErrorKind::argument, "train.mode must be canonical|direct_feature");
  tc.pe_freqs = c.get_int("train.pe_freqs", 6);
  tc.hidden = c.get_int("train.hidden", 64);
  tc.grid_resolution = c.get_int("grid.resolution", 32);
  tc.grid_dim = c.get_int("grid.feature_dim", 16);
  tc.grid_sigma = c.get_double("grid.sigma", 1.0);
  tc.loss_weights.lambda_lmks = c.get_double("train.lambda_lmks", 50.0);
  tc.loss_weights.lambda_segm = c.get_double("train.lambda_segm", 1.0);
  if (tc.warmup_steps > tc.steps) tc.warmup_steps = tc.steps;

  ensure_out_dir(out);
  c.write_resolved(out);

  TrainDataset ds = load_train_dataset(dataset_dir);
  TrainResult tr = train(ds, tc);
  Checkpoint ckpt{tr.params, tr.seghead, tr.grid};
  save_checkpoint(out + "/checkpoint.dmn", ckpt);
  write_loss_csv(out + "/loss.csv", tr.curve);

  double final_loss = tr.curve.empty() ? 0.0 : tr.curve.back().total;
  std::cout << "cmd=train steps=" << tc.steps << " final_loss=" << final_loss
            << " skipped=" << tr.skipped_batches
            << " dropped_tracks=" << tr.dropped_tracks << " out=" << out << "\n";
}

// --- embed --------------------------------------------------------------------

void cmd_embed(const RunConfig& cfg) {
  ConfigView c(cfg, "embed");
  std::string out = c.get_str("out", "out_embed");
  std::string ckpt_path = c.require_str("embed.checkpoint");
  std::string frame_path = c.require_str("embed.frame");
  std::string mask_path = c.require_str("embed.mask");
  ensure_out_dir(out);
  c.write_resolved(out);

  Checkpoint ckpt = load_checkpoint(ckpt_path);
  RgbImage img = read_ppm(frame_path);
  Image<uint8_t> mask = read_pgm(mask_path);
  if (ckpt.params.mode == EmbedMode::canonical) {
    UvwMap map = embed_image(ckpt.params, img, mask);
    write_uvw(out + "/uvw.dmv", map);
    std::cout << "cmd=embed mode=canonical valid=" << map.count_valid()
              << " out=" << out << "\n";
  } else {
    FeatureMap map = embed_features(ckpt.params, img, mask);
    write_feature_map(out + "/features.dmf", map);
    size_t valid = 0;
    for (uint8_t v : map.valid) valid += v ? 1 : 0;
    std::cout << "cmd=embed mode=direct_feature valid=" << valid
              << " out=" << out << "\n";
  }
}

// --- warp ---------------------------------------------------------------------

void cmd_warp(const RunConfig& cfg) {
  ConfigView c(cfg, "warp");
  std::string out = c.get_str("out", "out_warp");
  UvwMap src = read_uvw(c.require_str("warp.source_uvw"));
  RgbImage rgb = read_ppm(c.require_str("warp.source_rgb"));
  UvwMap tgt = read_uvw(c.require_str("warp.target_uvw"));
  ensure_out_dir(out);
  c.write_resolved(out);

  WarpResult wr = nn_warp(src, rgb, tgt);
  write_ppm(out + "/warped.ppm", wr.warped);
  write_field(out + "/field.dmc", wr.field);

  // Mean pixel displacement between each target pixel and its match (zero for
  // a self-warp) plus the mean embedding distance.
  double disp = 0.0, dist = 0.0;
  size_t n = 0;
  for (int y = 0; y < wr.field.height; ++y)
    for (int x = 0; x < wr.field.width; ++x) {
      const Correspondence& m = wr.field.at(x, y);
      if (m.sx < 0) continue;
      disp += std::hypot(double(m.sx) - x, double(m.sy) - y);
      dist += m.dist;
      ++n;
    }
  if (n > 0) {
    disp /= double(n);
    dist /= double(n);
  }
  std::cout << "cmd=warp mae=" << disp << " mean_dist=" << dist
            << " matched=" << n << " out=" << out << "\n";
}

// --- query --------------------------------------------------------------------

void cmd_query(const RunConfig& cfg) {
  ConfigView c(cfg, "query");
  std::string out = c.get_str("out", "out_query");
  std::string ann_path = c.require_str("query.annotations");
  std::string find_in = c.get_str("query.find_in", "");
  ensure_out_dir(out);
  c.write_resolved(out);

  std::ifstream in(ann_path);
  if (!in) fail(ErrorKind::io, "cannot open: " + ann_path);
  std::vector<UvwMap> maps;
  std::vector<std::pair<const UvwMap*, std::array<int, 2>>> refs;
  std::string map_path;
  int x, y;
  std::vector<std::array<int, 2>> pixels;
  std::vector<std::string> paths;
  while (in >> map_path >> x >> y) {
    paths.push_back(map_path);
    pixels.push_back({x, y});
  }
  if (paths.empty())
    fail(ErrorKind::input_format, ann_path + ": no annotations found");
  maps.reserve(paths.size());
  for (size_t i = 0; i < paths.size(); ++i) maps.push_back(read_uvw(paths[i]));
  for (size_t i = 0; i < paths.size(); ++i) refs.push_back({&maps[i], pixels[i]});

  CanonPoint p = query_point(refs);
  std::ostringstream line;
  line << "cmd=query u=" << p.u << " v=" << p.v << " w=" << p.w;
  if (!find_in.empty()) {
    UvwMap target = read_uvw(find_in);
    FindResult fr = find_point(target, p);
    line << " px=" << fr.x << " py=" << fr.y << " dist=" << fr.dist;
  }
  std::ofstream pf(out + "/point.txt");
  pf << p.u << " " << p.v << " " << p.w << "\n";
  std::cout << line.str() << "\n";
}

// --- triangulate ----------------------------------------------------------------

void cmd_triangulate(const RunConfig& cfg) {
  ConfigView c(cfg, "triangulate");
  std::string out = c.get_str("out", "out_tri");
  std::string views = c.require_str("tri.views");
  int frame = c.get_int("tri.frame", 0);
  StereoConfig sc;
  sc.downsample_factor = c.get_double("stereo.downsample", 4.0);
  sc.min_track_len = c.get_int("stereo.min_track_len", 2);
  sc.uvw_tol = c.get_double("stereo.uvw_tol", 0.05);
  sc.track_tol = c.get_double("stereo.track_tol", 0.10);
  sc.reproj_thresh_px = c.get_double("stereo.reproj_thresh_px", 10.0);
  ensure_out_dir(out);
  c.write_resolved(out);

  std::vector<std::string> dirs;
  std::stringstream ss(views);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) dirs.push_back(item);
  }
  if (dirs.size() < 2)
    fail(ErrorKind::argument, "tri.views needs at least 2 view directories");

  char stem[32];
  std::snprintf(stem, sizeof stem, "%04d", frame);
  std::vector<UvwMap> maps;
  std::vector<Camera> cams;
  std::vector<RgbImage> rgbs;
  std::vector<const RgbImage*> rgb_ptrs;
  for (const std::string& d : dirs) {
    maps.push_back(read_uvw(d + "/uvw_" + stem + ".dmv"));
    cams.push_back(load_camera(d + "/camera.txt"));
    std::string fp = d + "/frame_" + stem + ".ppm";
    if (fs::exists(fp)) {
      rgbs.push_back(read_ppm(fp));
    } else {
      rgbs.push_back(RgbImage());
    }
  }
  for (const RgbImage& img : rgbs)
    rgb_ptrs.push_back(img.width > 0 ? &img : nullptr);

  ReconStats stats;
  std::vector<CloudPoint> cloud = reconstruct(maps, cams, rgb_ptrs, sc, &stats);
  write_ply(out + "/cloud.ply", cloud);
  write_recon_stats(out + "/stats.txt", stats);
  std::cout << "cmd=triangulate views=" << dirs.size() << " tracks="
            << stats.tracks_built << " points=" << stats.kept << " out=" << out
            << "\n";
}

// --- fit ------------------------------------------------------------------------

void cmd_fit(const RunConfig& cfg) {
  ConfigView c(cfg, "fit");
  std::string out = c.get_str("out", "out_fit");
  UvwMap observed = read_uvw(c.require_str("fit.observed"));
  Camera cam = load_camera(c.require_str("fit.camera"));
  std::string init_str = c.get_str("fit.init", "0 0 0 0 0 0 0");
  int iters = c.get_int("fit.iters", 60);
  ensure_out_dir(out);
  c.write_resolved(out);

  RigidPose init;
  {
    std::stringstream ss(init_str);
    double v[7];
    for (double& x : v)
      if (!(ss >> x))
        fail(ErrorKind::argument, "fit.init needs 7 numbers: " + init_str);
    init.axis_angle = {v[0], v[1], v[2]};
    init.translation = {v[3], v[4], v[5]};
    init.log_scale = v[6];
  }

  FitResult fr = fit_pose(head_template(), cam, observed, init, iters);
  std::ofstream pf(out + "/pose.txt");
  pf.precision(12);
  pf << fr.pose.axis_angle.x << " " << fr.pose.axis_angle.y << " "
     << fr.pose.axis_angle.z << " " << fr.pose.translation.x << " "
     << fr.pose.translation.y << " " << fr.pose.translation.z << " "
     << fr.pose.log_scale << " " << fr.cost << " " << fr.iters << "\n";
  std::cout << "cmd=fit cost=" << fr.cost << " iters=" << fr.iters
            << " accepted_steps=" << fr.trace.size() << " out=" << out << "\n";
}

// --- eval -----------------------------------------------------------------------

EvalResult eval_matching(const Checkpoint& ckpt, const TrainDataset& ds,
                         int max_pairs_per_seq) {
  EvalResult res;
  double sum = 0.0, sum_sq = 0.0;
  const bool canonical = ckpt.params.mode == EmbedMode::canonical;
  for (const LoadedSequence& seq : ds.seqs) {
    int used = 0;
    for (size_t pi = 0; pi < seq.track_pairs.size() && used < max_pairs_per_seq;
         ++pi) {
      int fi = seq.track_pairs_index[pi][0];
      int fj = seq.track_pairs_index[pi][1];
      // Prefer well-separated frames so the protocol stresses pose change.
      if (seq.track_pairs.size() > size_t(max_pairs_per_seq) &&
          std::abs(fi - fj) < seq.frame_count() / 2)
        continue;
      ++used;
      ++res.pairs;
      const TrackPairs& gt = seq.track_pairs[pi];
      if (canonical) {
        UvwMap tgt = embed_image(ckpt.params, seq.frames[size_t(fi)],
                                 seq.masks[size_t(fi)]);
        UvwMap src = embed_image(ckpt.params, seq.frames[size_t(fj)],
                                 seq.masks[size_t(fj)]);
        NnIndex index(src);
        for (size_t k = 0; k < gt.count(); ++k) {
          auto a = gt.a[k], b = gt.b[k];
          if (!tgt.valid[tgt.idx(a[0], a[1])]) continue;
          auto [idx, d2] = index.nearest(tgt.uvw[tgt.idx(a[0], a[1])]);
          (void)d2;
          double dx = double(idx % src.width) - b[0];
          double dy = double(idx / src.width) - b[1];
          double e = std::sqrt(dx * dx + dy * dy);
          sum += e;
          sum_sq += e * e;
          ++res.points;
        }
      } else {
        FeatureMap tgt = embed_features(ckpt.params, seq.frames[size_t(fi)],
                                        seq.masks[size_t(fi)]);
        FeatureMap src = embed_features(ckpt.params, seq.frames[size_t(fj)],
                                        seq.masks[size_t(fj)]);
        for (size_t k = 0; k < gt.count(); ++k) {
          auto a = gt.a[k], b = gt.b[k];
          if (!tgt.valid[tgt.idx(a[0], a[1])]) continue;
          auto [idx, d2] = nearest_brute_feat(src, tgt.px(a[0], a[1]));
          (void)d2;
          double dx = double(idx % src.width) - b[0];
          double dy = double(idx / src.width) - b[1];
          double e = std::sqrt(dx * dx + dy * dy);
          sum += e;
          sum_sq += e * e;
          ++res.points;
        }
      }
    }
  }
  if (res.points > 0) {
    res.mae = sum / double(res.points);
    res.rmse = std::sqrt(sum_sq / double(res.points));
  }
  return res;
}

void cmd_eval(const RunConfig& cfg) {
  ConfigView c(cfg, "eval");
  std::string out = c.get_str("out", "out_eval");
  Checkpoint ckpt = load_checkpoint(c.require_str("eval.checkpoint"));
  TrainDataset ds = load_train_dataset(c.require_str("eval.dataset"));
  int pairs = c.get_int("eval.pairs_per_seq", 3);
  ensure_out_dir(out);
  c.write_resolved(out);

  EvalResult er = eval_matching(ckpt, ds, pairs);
  std::ofstream mf(out + "/metrics.txt");
  mf << "mae_px " << er.mae << "\nrmse_px " << er.rmse << "\npoints "
     << er.points << "\npairs " << er.pairs << "\n";
  std::cout << "cmd=eval mae=" << er.mae << " rmse=" << er.rmse
            << " points=" << er.points << " pairs=" << er.pairs << " out=" << out
            << "\n";
}

}  // namespace densemarks
