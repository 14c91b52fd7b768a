#pragma once

// Anchor pretraining on the synthetic task: cross-entropy, cosine schedule,
// shuffled mini-batches, deterministic given (spec, dataset, seed).

#include <cstdint>
#include <vector>

#include "snnet/anchor.hpp"
#include "snnet/dataset.hpp"

namespace snnet {

struct PretrainConfig {
  double lr = 1e-3;
  int epochs = 40;
  int batch_size = 128;
  double weight_decay = 0.05;
  uint64_t seed = 1;
};

// Copy of the given rows along axis 0; carries no gradient.
Tensor gather_rows(const Tensor& t, const std::vector<int>& idx);

// Fraction of val samples whose top logit matches the label.
double anchor_accuracy(const AnchorModel& model, const LabeledSet& set, int batch_size = 256);

// Mean cross-entropy over the set, forward only.
double anchor_loss(const AnchorModel& model, const LabeledSet& set, int batch_size = 256);

// Initializes a fresh model from the config seed and trains it on data.train.
// Records seed/epochs/val-accuracy in provenance. A non-finite loss aborts
// with the last finite loss in the diagnostic. Per-epoch mean training loss
// lands in *epoch_losses when given.
AnchorModel pretrain_anchor(const AnchorSpec& spec, const Dataset& data, const PretrainConfig& hp,
                            std::vector<double>* epoch_losses = nullptr);

}  // namespace snnet
