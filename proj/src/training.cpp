#include "snnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "snnet/ops.hpp"
#include "snnet/optim.hpp"
#include "snnet/pretrain.hpp"

namespace snnet {

void TrainConfig::validate() const {
  if (epochs < 0) throw ValueError(strf("train: epochs ", epochs, " must be >= 0"));
  if (batch_size < 1) throw ValueError(strf("train: batch_size ", batch_size, " must be >= 1"));
  if (!(lr_stitch > 0)) throw ValueError(strf("train: lr ", lr_stitch, " must be positive"));
  if (anchor_lr_scale >= 0 && anchor_lr_scale > 1.0)
    throw ValueError(strf("train: anchor_lr_scale ", anchor_lr_scale, " outside [0, 1]"));
  if (distill_weight < 0)
    throw ValueError(strf("train: distill_weight ", distill_weight, " must be >= 0"));
}

double TrainConfig::resolved_anchor_lr_scale(const StitchSpace& space) const {
  if (anchor_lr_scale >= 0) return anchor_lr_scale;
  for (const auto& a : space.anchors)
    if (a.spec.num_stages() > 1) return 0.1;
  return 1.0;
}

std::vector<LossLogEntry> train(StitchSpace& space, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.epochs == 0) return {};
  const bool stitch_only = cfg.tune_scope == TrainConfig::TuneScope::stitch_layers_only;
  const double anchor_scale = cfg.resolved_anchor_lr_scale(space);

  for (auto& a : space.anchors) a.set_requires_grad(!stitch_only);
  for (auto& layer : space.layers) {
    layer.weight.set_requires_grad(true);
    layer.bias.set_requires_grad(true);
  }
  std::vector<AdamW::Entry> entries;
  if (!stitch_only)
    for (auto& a : space.anchors)
      for (auto& p : a.named_params()) entries.push_back({p.tensor, anchor_scale});
  for (auto& layer : space.layers) {
    entries.push_back({layer.weight, 1.0});
    entries.push_back({layer.bias, 1.0});
  }
  AdamW opt(std::move(entries), AdamWConfig{.weight_decay = cfg.weight_decay});

  // Frozen copy of the largest anchor, taken before any update, so the
  // distillation target does not drift while anchors train.
  AnchorModel teacher;
  const bool distill = cfg.distill == TrainConfig::Distill::largest_anchor;
  if (distill) {
    teacher = space.anchors.back().clone();
    teacher.set_requires_grad(false);
  }

  Rng root(cfg.seed);
  Rng order_rng = root.fork("order");
  Rng sample_rng = root.fork("sample");
  const int n = data.train.size();
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);

  std::vector<LossLogEntry> log;
  log.reserve(static_cast<size_t>(total_steps));
  double last_finite_loss = std::numeric_limits<double>::quiet_NaN();
  int64_t iter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)],
                idx[static_cast<size_t>(order_rng.uniform_int(static_cast<uint64_t>(i) + 1))]);
    for (int i0 = 0; i0 < n; i0 += cfg.batch_size, ++iter) {
      const int i1 = std::min(n, i0 + cfg.batch_size);
      const int cid = static_cast<int>(
          sample_rng.uniform_int(static_cast<uint64_t>(space.num_configs())));
      std::vector<int> batch_idx(idx.begin() + i0, idx.begin() + i1);
      std::vector<int> labels;
      labels.reserve(batch_idx.size());
      for (int i : batch_idx) labels.push_back(data.train.y[static_cast<size_t>(i)]);
      auto bx = gather_rows(data.train.x, batch_idx);
      opt.zero_grad();
      double loss_value = 0.0;
      try {
        auto logits = stitch_forward(space, cid, bx);
        auto loss = cross_entropy_mean(logits, labels);
        if (distill) {
          Tensor probs;
          {
            NoGradGuard ng;
            probs = softmax_last(anchor_forward(teacher, bx));
          }
          loss = add(loss, scale(soft_cross_entropy_mean(logits, probs),
                                 static_cast<float>(cfg.distill_weight)));
        }
        loss_value = loss.data()[0];
        last_finite_loss = loss_value;
        // Under stitch_layers_only an anchor draw has no trainable path;
        // the loss is still logged, there is just nothing to step.
        if (loss.needs_grad()) {
          loss.backward();
          opt.step(cosine_lr(cfg.lr_stitch, iter, total_steps));
        }
      } catch (const NumericalError& e) {
        throw NumericalError(strf("training diverged on config ", cid, " at iter ", iter, ": ",
                                  e.what(), " (last finite loss ", last_finite_loss, ")"));
      }
      log.push_back({iter, cid, loss_value});
    }
  }
  for (auto& a : space.anchors) a.set_requires_grad(false);
  for (auto& layer : space.layers) {
    layer.weight.set_requires_grad(false);
    layer.bias.set_requires_grad(false);
  }
  return log;
}

EvalTable evaluate_all(const StitchSpace& space, const LabeledSet& val, int batch_size) {
  NoGradGuard ng;
  EvalTable table;
  for (int id = 0; id < space.num_configs(); ++id) {
    const auto& c = space.config(id);
    EvalRow row;
    row.config_id = id;
    if (c.kind == ConfigKind::anchor) {
      row.pair = space.anchors[static_cast<size_t>(c.fast_anchor)].spec.name;
    } else {
      row.pair = space.anchors[static_cast<size_t>(c.fast_anchor)].spec.name + "-" +
                 space.anchors[static_cast<size_t>(c.slow_anchor)].spec.name;
      row.l = c.l;
      row.m = c.m;
    }
    const auto cost = stitch_cost(space, id);
    row.flops = cost.flops;
    row.params = cost.params;
    int hits = 0;
    double loss_sum = 0.0;
    for (int i0 = 0; i0 < val.size(); i0 += batch_size) {
      const int i1 = std::min(val.size(), i0 + batch_size);
      auto logits = stitch_forward(space, id, slice_rows(val.x, i0, i1));
      auto pred = argmax_rows(logits);
      std::vector<int> labels(val.y.begin() + i0, val.y.begin() + i1);
      for (size_t i = 0; i < labels.size(); ++i) hits += (pred[i] == labels[i]);
      loss_sum += static_cast<double>(cross_entropy_mean(logits, labels).data()[0]) * (i1 - i0);
    }
    row.val_acc = static_cast<double>(hits) / val.size();
    row.val_loss = loss_sum / val.size();
    table.rows.push_back(std::move(row));
  }
  std::stable_sort(table.rows.begin(), table.rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return a.flops != b.flops ? a.flops < b.flops : a.config_id < b.config_id;
  });
  return table;
}

SelectionResult select(const EvalTable& table, int64_t budget) {
  if (table.rows.empty()) throw ValueError("select: empty table");
  const EvalRow* best = nullptr;
  for (const auto& r : table.rows) {
    if (r.flops > budget) continue;
    if (!best || r.val_acc > best->val_acc ||
        (r.val_acc == best->val_acc &&
         (r.flops < best->flops || (r.flops == best->flops && r.config_id < best->config_id))))
      best = &r;
  }
  if (!best) {
    int64_t min_flops = table.rows[0].flops;
    for (const auto& r : table.rows) min_flops = std::min(min_flops, r.flops);
    throw ValueError(strf("select: budget ", budget, " below the smallest config (", min_flops,
                          " flops); infeasible"));
  }
  return {best->config_id, best->flops, best->val_acc, budget};
}

std::vector<EvalRow> pareto_front(const EvalTable& table) {
  if (table.rows.empty()) throw ValueError("pareto_front: empty table");
  std::vector<EvalRow> rows = table.rows;
  std::stable_sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    if (a.flops != b.flops) return a.flops < b.flops;
    if (a.val_acc != b.val_acc) return a.val_acc > b.val_acc;
    return a.config_id < b.config_id;
  });
  std::vector<EvalRow> front;
  double best_prev = -std::numeric_limits<double>::infinity();  // over strictly lower flops
  size_t i = 0;
  while (i < rows.size()) {
    size_t j = i;
    while (j < rows.size() && rows[j].flops == rows[i].flops) ++j;
    const double group_max = rows[i].val_acc;
    if (group_max > best_prev)
      for (size_t k = i; k < j; ++k)
        if (rows[k].val_acc == group_max) front.push_back(rows[k]);
    best_prev = std::max(best_prev, group_max);
    i = j;
  }
  return front;
}

void write_eval_csv(const EvalTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError(strf("cannot write ", path));
  out << "config_id,pair,l,m,flops,params,val_acc\n";
  for (const auto& r : table.rows) {
    std::ostringstream line;
    line.precision(10);
    line << r.config_id << ',' << r.pair << ',' << r.l << ',' << r.m << ',' << r.flops << ','
         << r.params << ',' << r.val_acc << '\n';
    out << line.str();
  }
}

EvalTable read_eval_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError(strf("cannot read ", path));
  std::string line;
  if (!std::getline(in, line) || line != "config_id,pair,l,m,flops,params,val_acc")
    throw ValueError(strf(path, ": not an evaluation table (bad header)"));
  EvalTable table;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    EvalRow r;
    std::string field;
    try {
      std::getline(ss, field, ',');
      r.config_id = std::stoi(field);
      std::getline(ss, r.pair, ',');
      std::getline(ss, field, ',');
      r.l = std::stoi(field);
      std::getline(ss, field, ',');
      r.m = std::stoi(field);
      std::getline(ss, field, ',');
      r.flops = std::stoll(field);
      std::getline(ss, field, ',');
      r.params = std::stoll(field);
      if (!std::getline(ss, field)) throw std::invalid_argument("missing val_acc");
      r.val_acc = std::stod(field);
    } catch (const std::exception& e) {
      throw ValueError(strf(path, ":", lineno, ": bad row (", e.what(), ")"));
    }
    table.rows.push_back(std::move(r));
  }
  return table;
}

void write_loss_log(const std::vector<LossLogEntry>& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError(strf("cannot write ", path));
  out << "iter,config_id,loss\n";
  for (const auto& e : log) {
    std::ostringstream line;
    line.precision(10);
    line << e.iter << ',' << e.config_id << ',' << e.loss << '\n';
    out << line.str();
  }
}

}  // namespace snnet
