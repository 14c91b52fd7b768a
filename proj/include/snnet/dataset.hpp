#pragma once

// Procedurally generated classification task: i.i.d. normal token sequences
// labeled by a fixed randomly initialized teacher network, with a fraction of
// labels resampled uniformly. Everything derives from one 64-bit seed.

#include <cstdint>
#include <vector>

#include "snnet/anchor.hpp"
#include "snnet/tensor.hpp"

namespace snnet {

struct SyntheticTask {
  uint64_t seed = 1;
  int train_size = 2048;
  int val_size = 1024;
  double noise_rate = 0.05;
  int tokens = 16;
  int feature_dim = 8;
  int num_classes = 10;

  void validate() const;
};

struct LabeledSet {
  Tensor x;            // [size, tokens, feature_dim]
  std::vector<int> y;  // [size]
  int size() const { return static_cast<int>(y.size()); }
};

struct Dataset {
  LabeledSet train;
  LabeledSet val;
};

// The label-generating network's architecture (never trained, rebuilt from
// the task seed on demand).
AnchorSpec teacher_spec(const SyntheticTask& task);

// Copy of rows [i0, i1) along axis 0; carries no gradient.
Tensor slice_rows(const Tensor& t, int i0, int i1);

Dataset generate_dataset(const SyntheticTask& task);

}  // namespace snnet
