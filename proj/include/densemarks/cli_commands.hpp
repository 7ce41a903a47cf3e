#pragma once

#include <map>
#include <string>
#include <vector>

#include "densemarks/common.hpp"

namespace densemarks {

// Key-value run configuration: a plain-text file of "key = value" lines plus
// command-line overrides. Unknown keys are rejected per command; every run
// writes its fully resolved configuration next to its outputs.
struct RunConfig {
  std::map<std::string, std::string> kv;

  static RunConfig from_file(const std::string& path);
  void set(const std::string& assignment);  // "key=value"
  bool has(const std::string& key) const { return kv.count(key) != 0; }
};

class ConfigView {
public:
  ConfigView(const RunConfig& rc, std::string command);

  std::string get_str(const std::string& key, const std::string& def);
  std::string require_str(const std::string& key);
  int get_int(const std::string& key, int def);
  double get_double(const std::string& key, double def);
  uint64_t get_u64(const std::string& key, uint64_t def);

  // Rejects keys that no registered command understands.
  void validate_keys() const;
  void write_resolved(const std::string& dir) const;

private:
  std::string raw(const std::string& key, const std::string& def, bool required);
  const RunConfig* rc_;
  std::string command_;
  std::map<std::string, std::string> resolved_;
};

// Subcommand entry points; each prints one machine-readable summary line
// (key=value pairs) to stdout and writes artifacts under cfg "out".
void cmd_synth(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_embed(const RunConfig& cfg);
void cmd_warp(const RunConfig& cfg);
void cmd_query(const RunConfig& cfg);
void cmd_triangulate(const RunConfig& cfg);
void cmd_fit(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);

// Shared evaluation helper: nearest-neighbor matching quality of a checkpoint
// over the track pairs of a dataset.
struct EvalResult {
  double mae = 0.0, rmse = 0.0;
  size_t points = 0;
  size_t pairs = 0;
};

struct Checkpoint;
struct TrainDataset;
EvalResult eval_matching(const Checkpoint& ckpt, const TrainDataset& ds,
                         int max_pairs_per_seq);

}  // namespace densemarks
