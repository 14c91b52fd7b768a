#include "snnet/dataset.hpp"

#include <algorithm>

#include "snnet/ops.hpp"

namespace snnet {

void SyntheticTask::validate() const {
  if (tokens < 1 || feature_dim < 1 || num_classes < 2)
    throw ValueError(strf("task: bad tokens/features/classes ", tokens, "/", feature_dim, "/",
                          num_classes));
  if (train_size < num_classes || val_size < num_classes)
    throw ValueError(strf("task: sizes (", train_size, ", ", val_size,
                          ") must be at least num_classes ", num_classes));
  if (noise_rate < 0.0 || noise_rate > 1.0)
    throw ValueError(strf("task: noise_rate ", noise_rate, " outside [0, 1]"));
}

AnchorSpec teacher_spec(const SyntheticTask& task) {
  AnchorSpec s;
  s.name = "teacher";
  s.stages = {StageSpec{3, false}};
  s.dims = {48};
  s.heads = {4};
  s.tokens = task.tokens;
  s.feature_dim = task.feature_dim;
  s.num_classes = task.num_classes;
  s.mlp_ratio = 2.0;
  return s;
}

Tensor slice_rows(const Tensor& t, int i0, int i1) {
  if (i0 < 0 || i1 > t.dim(0) || i0 >= i1)
    throw ValueError(strf("slice_rows: [", i0, ", ", i1, ") out of range for ",
                          shape_str(t.shape())));
  const int64_t stride = t.numel() / t.dim(0);
  std::vector<int> shape = t.shape();
  shape[0] = i1 - i0;
  return Tensor::from(std::move(shape),
                      std::vector<float>(t.data().begin() + i0 * stride,
                                         t.data().begin() + i1 * stride));
}

namespace {

LabeledSet make_split(const SyntheticTask& task, const AnchorModel& teacher, int size,
                      Rng inputs_rng, Rng noise_rng) {
  NoGradGuard ng;
  LabeledSet set;
  set.x = Tensor::randn({size, task.tokens, task.feature_dim}, inputs_rng);
  set.y.resize(static_cast<size_t>(size));
  constexpr int chunk = 256;
  for (int i0 = 0; i0 < size; i0 += chunk) {
    const int i1 = std::min(size, i0 + chunk);
    auto logits = anchor_forward(teacher, slice_rows(set.x, i0, i1));
    auto pred = argmax_rows(logits);
    std::copy(pred.begin(), pred.end(), set.y.begin() + i0);
  }
  for (auto& y : set.y)
    if (noise_rng.uniform01() < task.noise_rate)
      y = static_cast<int>(noise_rng.uniform_int(static_cast<uint64_t>(task.num_classes)));
  return set;
}

}  // namespace

namespace {

// A raw random head gives argmax labels dominated by whichever class the mean
// pooled feature happens to favor. Standardizing each class logit (zero mean,
// unit variance over a probe batch) folds a per-class affine into the head so
// every class stays reachable; labels remain the teacher's plain argmax.
void standardize_head(AnchorModel& teacher, const SyntheticTask& task, Rng probe_rng) {
  NoGradGuard ng;
  constexpr int probe_n = 1024;
  auto x = Tensor::randn({probe_n, task.tokens, task.feature_dim}, probe_rng);
  std::vector<double> mean(static_cast<size_t>(task.num_classes), 0.0);
  std::vector<double> sqsum(static_cast<size_t>(task.num_classes), 0.0);
  for (int i0 = 0; i0 < probe_n; i0 += 256) {
    auto logits = anchor_forward(teacher, slice_rows(x, i0, i0 + 256));
    for (int r = 0; r < 256; ++r)
      for (int c = 0; c < task.num_classes; ++c) {
        const double v = logits.data()[static_cast<size_t>(r) * task.num_classes + c];
        mean[static_cast<size_t>(c)] += v;
        sqsum[static_cast<size_t>(c)] += v * v;
      }
  }
  const int D = teacher.spec.dims.back();
  for (int c = 0; c < task.num_classes; ++c) {
    const double mu = mean[static_cast<size_t>(c)] / probe_n;
    const double var = sqsum[static_cast<size_t>(c)] / probe_n - mu * mu;
    const double inv_sd = 1.0 / std::sqrt(std::max(var, 1e-12));
    for (int j = 0; j < D; ++j)
      teacher.head_w.data_mut()[static_cast<size_t>(j) * task.num_classes + c] *=
          static_cast<float>(inv_sd);
    teacher.head_b.data_mut()[static_cast<size_t>(c)] = static_cast<float>(-mu * inv_sd);
  }
}

}  // namespace

Dataset generate_dataset(const SyntheticTask& task) {
  task.validate();
  Rng root(task.seed);
  Rng teacher_rng = root.fork("teacher");
  auto teacher = AnchorModel::create(teacher_spec(task), teacher_rng);
  standardize_head(teacher, task, root.fork("teacher-calib"));
  Dataset d;
  d.train = make_split(task, teacher, task.train_size, root.fork("train-inputs"),
                       root.fork("train-noise"));
  d.val = make_split(task, teacher, task.val_size, root.fork("val-inputs"),
                     root.fork("val-noise"));
  return d;
}

}  // namespace snnet
