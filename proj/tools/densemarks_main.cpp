#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "densemarks/cli_commands.hpp"
#include "densemarks/common.hpp"

using densemarks::RunConfig;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  long long seed = -1;
};

RunConfig resolve(const CommonOpts& o) {
  RunConfig rc;
  if (!o.config_path.empty()) rc = RunConfig::from_file(o.config_path);
  for (const std::string& s : o.sets) rc.set(s);
  if (!o.out.empty()) rc.kv["out"] = o.out;
  if (o.seed >= 0) rc.kv["seed"] = std::to_string(o.seed);
  return rc;
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "plain-text key = value config file");
  cmd->add_option("--set", o.sets, "override: key=value (repeatable)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "random seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DenseMarks desk-scale pipeline"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    void (*fn)(const RunConfig&);
  };
  const Sub subs[] = {
      {"synth", "generate synthetic head sequences or camera rigs",
       densemarks::cmd_synth},
      {"train", "train the embedder, latent grid and segmentation head",
       densemarks::cmd_train},
      {"embed", "run a checkpoint over one frame", densemarks::cmd_embed},
      {"warp", "dense nearest-neighbor warp between two UVW maps",
       densemarks::cmd_warp},
      {"query", "average annotated embeddings and locate them",
       densemarks::cmd_query},
      {"triangulate", "multi-view DLT reconstruction from UVW maps",
       densemarks::cmd_triangulate},
      {"fit", "rigid pose fit of the template against a UVW map",
       densemarks::cmd_fit},
      {"eval", "matching MAE/RMSE of a checkpoint over a dataset",
       densemarks::cmd_eval},
  };

  std::vector<CommonOpts> opts(std::size(subs));
  for (size_t i = 0; i < std::size(subs); ++i) {
    CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].help);
    add_common(cmd, opts[i]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    for (size_t i = 0; i < std::size(subs); ++i) {
      if (app.get_subcommand(subs[i].name)->parsed()) {
        subs[i].fn(resolve(opts[i]));
        return 0;
      }
    }
    std::cerr << "error: no command\n";
    return 2;
  } catch (const densemarks::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return densemarks::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
