#pragma once

// Pipeline phases behind the CLI subcommands. Each phase reads its inputs
// from the run's working directory, refuses to overwrite existing outputs
// unless forced, and writes deterministically for a fixed config: rerunning
// a phase with the same config and seeds reproduces its outputs byte for
// byte.

#include <cstdint>
#include <ostream>
#include <string>

#include "snnet/runconfig.hpp"

namespace snnet {

// Canonical file layout inside a working directory.
struct WorkdirLayout {
  std::string workdir;

  explicit WorkdirLayout(std::string dir) : workdir(std::move(dir)) {}
  std::string dataset() const { return workdir + "/dataset.snnt"; }
  std::string anchor(const std::string& name) const {
    return workdir + "/anchor_" + name + ".snnt";
  }
  std::string space() const { return workdir + "/space.snnt"; }
  std::string trained_space() const { return workdir + "/space_trained.snnt"; }
  std::string loss_log() const { return workdir + "/loss_log.csv"; }
  std::string eval_table() const { return workdir + "/eval.csv"; }
  std::string curve() const { return workdir + "/curve.csv"; }
  std::string pareto() const { return workdir + "/pareto.csv"; }
};

void cmd_gen_data(const RunConfig& cfg, bool force, std::ostream& out);
void cmd_pretrain(const RunConfig& cfg, bool force, std::ostream& out);
void cmd_build_space(const RunConfig& cfg, bool force, std::ostream& out);
void cmd_train(const RunConfig& cfg, bool force, std::ostream& out);

// Evaluates every config of a space checkpoint on the validation split and
// writes the table CSV. `space_path` empty selects the trained space when
// present, otherwise the freshly built one; `table_path` empty uses the
// default location.
void cmd_eval(const RunConfig& cfg, const std::string& space_path, const std::string& table_path,
              bool force, std::ostream& out);

// Prints the best config within the FLOPs budget as a single-line record.
void cmd_select(const RunConfig& cfg, const std::string& table_path, int64_t flops_budget,
                std::ostream& out);

// Writes the (flops, accuracy) curve CSV plus the Pareto-front CSV.
void cmd_export_curve(const RunConfig& cfg, const std::string& table_path, bool force,
                      std::ostream& out);

}  // namespace snnet
