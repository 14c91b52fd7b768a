#pragma once

// Joint training of a stitch space by uniform config sampling, full-space
// evaluation, budget-constrained selection, and the Pareto front of the
// flops/accuracy trade-off.

#include <cstdint>
#include <string>
#include <vector>

#include "snnet/dataset.hpp"
#include "snnet/stitching.hpp"

namespace snnet {

struct TrainConfig {
  enum class Distill { off, largest_anchor };
  enum class TuneScope { full, stitch_layers_only };

  int epochs = 15;
  int batch_size = 128;
  double lr_stitch = 1e-4;
  // Learning-rate multiplier for anchor parameters. Negative means auto:
  // 1.0 for single-stage anchor families, 0.1 for multi-stage ones.
  double anchor_lr_scale = -1.0;
  double weight_decay = 0.05;
  Distill distill = Distill::off;
  double distill_weight = 0.5;
  TuneScope tune_scope = TuneScope::full;
  uint64_t seed = 1;

  void validate() const;
  double resolved_anchor_lr_scale(const StitchSpace& space) const;
};

struct LossLogEntry {
  int64_t iter = 0;
  int config_id = 0;
  double loss = 0.0;
};

// One pass of joint training: per iteration draw a config uniformly (anchors
// included), forward it on the next batch, add the distillation term if
// enabled, and step the parameters that received gradients. epochs=0 leaves
// the space bitwise untouched. A non-finite loss aborts, naming the config.
std::vector<LossLogEntry> train(StitchSpace& space, const Dataset& data, const TrainConfig& cfg);

struct EvalRow {
  int config_id = 0;
  std::string pair;
  int l = 0, m = 0;
  int64_t flops = 0;
  int64_t params = 0;
  double val_acc = 0.0;
  double val_loss = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;  // sorted by (flops, config_id)
};

EvalTable evaluate_all(const StitchSpace& space, const LabeledSet& val, int batch_size = 256);

struct SelectionResult {
  int config_id = 0;
  int64_t flops = 0;
  double val_accuracy = 0.0;
  int64_t budget = 0;
};

// Best-accuracy row with flops <= budget; ties prefer lower flops, then lower
// config_id. A budget below every row is an error.
SelectionResult select(const EvalTable& table, int64_t budget);

// Rows not dominated in (lower flops, higher accuracy), by ascending flops.
std::vector<EvalRow> pareto_front(const EvalTable& table);

void write_eval_csv(const EvalTable& table, const std::string& path);
EvalTable read_eval_csv(const std::string& path);
void write_loss_log(const std::vector<LossLogEntry>& log, const std::string& path);

}  // namespace snnet
