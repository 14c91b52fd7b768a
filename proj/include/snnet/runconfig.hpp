#pragma once

// Run configuration: a sectioned key=value text file describing one full
// pipeline run (task, anchor family, stitching space, joint training, paths).
// Every key has a default; unknown keys and malformed values are rejected.

#include <string>
#include <vector>

#include "snnet/dataset.hpp"
#include "snnet/pretrain.hpp"
#include "snnet/stitching.hpp"
#include "snnet/training.hpp"

namespace snnet {

struct RunConfig {
  SyntheticTask task;
  std::vector<AnchorSpec> anchors;  // declaration order; must be FLOPs-ascending
  PretrainConfig pretrain;
  WindowSpec window;
  int n_init = 100;  // training samples used to fit least-squares inits
  InitMethod init_method = InitMethod::least_squares;
  double rcond = 1e-6;
  StitchDirection direction = StitchDirection::fast_to_slow;
  TrainConfig train;
  std::string workdir = "runs/default";

  void validate() const;
};

// A config equivalent to parsing an empty file: the three-anchor default
// family on the default synthetic task.
RunConfig default_run_config();

// Parses `text`; `origin` names the source in diagnostics. The
// SNNET_WORKDIR environment variable, when set and non-empty, overrides
// [paths] workdir.
RunConfig parse_run_config_text(const std::string& text, const std::string& origin);

// Reads and parses a config file.
RunConfig load_run_config(const std::string& path);

}  // namespace snnet
