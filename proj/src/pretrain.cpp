#include "snnet/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "snnet/ops.hpp"
#include "snnet/optim.hpp"

namespace snnet {

Tensor gather_rows(const Tensor& t, const std::vector<int>& idx) {
  const int64_t stride = t.numel() / t.dim(0);
  std::vector<int> shape = t.shape();
  shape[0] = static_cast<int>(idx.size());
  std::vector<float> out;
  out.reserve(static_cast<size_t>(stride) * idx.size());
  for (int i : idx) {
    if (i < 0 || i >= t.dim(0))
      throw ValueError(strf("gather_rows: index ", i, " out of range for ", shape_str(t.shape())));
    out.insert(out.end(), t.data().begin() + i * stride, t.data().begin() + (i + 1) * stride);
  }
  return Tensor::from(std::move(shape), std::move(out));
}

double anchor_accuracy(const AnchorModel& model, const LabeledSet& set, int batch_size) {
  NoGradGuard ng;
  int hits = 0;
  for (int i0 = 0; i0 < set.size(); i0 += batch_size) {
    const int i1 = std::min(set.size(), i0 + batch_size);
    auto pred = argmax_rows(anchor_forward(model, slice_rows(set.x, i0, i1)));
    for (int i = i0; i < i1; ++i) hits += (pred[static_cast<size_t>(i - i0)] == set.y[static_cast<size_t>(i)]);
  }
  return static_cast<double>(hits) / set.size();
}

double anchor_loss(const AnchorModel& model, const LabeledSet& set, int batch_size) {
  NoGradGuard ng;
  double total = 0.0;
  for (int i0 = 0; i0 < set.size(); i0 += batch_size) {
    const int i1 = std::min(set.size(), i0 + batch_size);
    auto logits = anchor_forward(model, slice_rows(set.x, i0, i1));
    std::vector<int> labels(set.y.begin() + i0, set.y.begin() + i1);
    total += static_cast<double>(cross_entropy_mean(logits, labels).data()[0]) * (i1 - i0);
  }
  return total / set.size();
}

AnchorModel pretrain_anchor(const AnchorSpec& spec, const Dataset& data, const PretrainConfig& hp,
                            std::vector<double>* epoch_losses) {
  spec.validate();
  if (hp.epochs < 0 || hp.batch_size < 1 || !(hp.lr > 0))
    throw ValueError(strf("pretrain ", spec.name, ": bad hyperparameters (epochs ", hp.epochs,
                          ", batch ", hp.batch_size, ", lr ", hp.lr, ")"));
  Rng root(hp.seed);
  Rng init_rng = root.fork(strf("init:", spec.name));
  auto model = AnchorModel::create(spec, init_rng);
  model.provenance.seed = hp.seed;
  model.provenance.epochs = hp.epochs;
  model.provenance.trained = hp.epochs > 0;
  if (hp.epochs == 0) {
    model.provenance.val_accuracy = anchor_accuracy(model, data.val);
    return model;
  }

  model.set_requires_grad(true);
  std::vector<AdamW::Entry> entries;
  for (auto& p : model.named_params()) entries.push_back({p.tensor, 1.0});
  AdamW opt(std::move(entries), AdamWConfig{.weight_decay = hp.weight_decay});

  Rng order_rng = root.fork(strf("order:", spec.name));
  const int n = data.train.size();
  const int64_t steps_per_epoch = (n + hp.batch_size - 1) / hp.batch_size;
  const int64_t total_steps = steps_per_epoch * hp.epochs;
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  double last_finite_loss = std::numeric_limits<double>::quiet_NaN();
  int64_t step = 0;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    // Fisher–Yates on the seeded stream keeps the visit order reproducible.
    for (int i = n - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)],
                idx[static_cast<size_t>(order_rng.uniform_int(static_cast<uint64_t>(i) + 1))]);
    double epoch_loss = 0.0;
    for (int i0 = 0; i0 < n; i0 += hp.batch_size, ++step) {
      const int i1 = std::min(n, i0 + hp.batch_size);
      std::vector<int> batch_idx(idx.begin() + i0, idx.begin() + i1);
      std::vector<int> labels;
      labels.reserve(batch_idx.size());
      for (int i : batch_idx) labels.push_back(data.train.y[static_cast<size_t>(i)]);
      opt.zero_grad();
      try {
        auto loss = cross_entropy_mean(anchor_forward(model, gather_rows(data.train.x, batch_idx)),
                                       labels);
        last_finite_loss = loss.data()[0];
        epoch_loss += last_finite_loss * (i1 - i0);
        loss.backward();
      } catch (const NumericalError& e) {
        throw NumericalError(strf("pretrain ", spec.name, " diverged at step ", step, ": ",
                                  e.what(), " (last finite loss ", last_finite_loss, ")"));
      }
      opt.step(cosine_lr(hp.lr, step, total_steps));
    }
    if (epoch_losses) epoch_losses->push_back(epoch_loss / n);
  }
  model.set_requires_grad(false);
  model.provenance.val_accuracy = anchor_accuracy(model, data.val);
  return model;
}

}  // namespace snnet
