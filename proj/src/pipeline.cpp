#include "snnet/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "snnet/checkpoint.hpp"

namespace snnet {
namespace {

namespace fs = std::filesystem;

void refuse_overwrite(const std::string& path, bool force) {
  if (!force && fs::exists(path))
    throw ValueError(strf(path, " already exists; pass --force to overwrite"));
}

void require_input(const std::string& path, const std::string& producer) {
  if (!fs::exists(path))
    throw ValueError(strf("missing input ", path, "; run `", producer, "` first"));
}

void ensure_workdir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValueError(strf("cannot create workdir ", dir, ": ", ec.message()));
}

std::string fmt_acc(double v) { return strf(v); }

}  // namespace

void cmd_gen_data(const RunConfig& cfg, bool force, std::ostream& out) {
  WorkdirLayout paths(cfg.workdir);
  refuse_overwrite(paths.dataset(), force);
  ensure_workdir(cfg.workdir);
  const Dataset data = generate_dataset(cfg.task);
  save_dataset(paths.dataset(), cfg.task, data);
  out << "wrote " << paths.dataset() << " (train " << cfg.task.train_size << ", val "
      << cfg.task.val_size << ", noise " << cfg.task.noise_rate << ")\n";
}

void cmd_pretrain(const RunConfig& cfg, bool force, std::ostream& out) {
  WorkdirLayout paths(cfg.workdir);
  require_input(paths.dataset(), "gen-data");
  for (const auto& spec : cfg.anchors) refuse_overwrite(paths.anchor(spec.name), force);
  const Dataset data = load_dataset(paths.dataset()).data;
  for (const auto& spec : cfg.anchors) {
    AnchorModel model = pretrain_anchor(spec, data, cfg.pretrain);
    save_anchor(paths.anchor(spec.name), model);
    out << "pretrained " << spec.name << ": val_acc=" << fmt_acc(model.provenance.val_accuracy)
        << " params=" << model.param_count() << " (" << cfg.pretrain.epochs << " epochs) -> "
        << paths.anchor(spec.name) << "\n";
  }
}

void cmd_build_space(const RunConfig& cfg, bool force, std::ostream& out) {
  WorkdirLayout paths(cfg.workdir);
  refuse_overwrite(paths.space(), force);
  std::vector<AnchorModel> anchors;
  for (const auto& spec : cfg.anchors) {
    require_input(paths.anchor(spec.name), "pretrain");
    anchors.push_back(load_anchor(paths.anchor(spec.name)));
  }
  StitchSpace space = space_build(std::move(anchors), cfg.window, true, cfg.direction);

  if (cfg.init_method == InitMethod::least_squares) {
    require_input(paths.dataset(), "gen-data");
    const Dataset data = load_dataset(paths.dataset()).data;
    const Tensor probe = slice_rows(data.train.x, 0, cfg.n_init);
    for (size_t i = 0; i < space.layers.size(); ++i) {
      auto [a_feats, b_feats] = collect_boundary_features(space, static_cast<int>(i), probe);
      ls_init(space.layers[i], a_feats, b_feats, static_cast<float>(cfg.rcond));
    }
  } else {
    Rng root(cfg.task.seed);
    for (size_t i = 0; i < space.layers.size(); ++i) {
      Rng lr = root.fork(strf("stitch-init:", i));
      kaiming_init(space.layers[i], lr);
    }
  }

  out << "config count: " << space.num_configs() << "\n";
  for (size_t i = 0; i < space.layers.size(); ++i) {
    const auto& ly = space.layers[i];
    const std::string pair = strf(space.anchors[static_cast<size_t>(ly.pair)].spec.name, "-",
                                  space.anchors[static_cast<size_t>(ly.pair) + 1].spec.name);
    out << "layer " << i << ": pair=" << pair << " stage=" << ly.stage
        << " window=" << ly.window_id;
    if (ly.init_method == InitMethod::least_squares) {
      out << " ls_residual=" << ly.ls_residual;
      if (ly.underdetermined) out << " (underdetermined)";
    } else {
      out << " init=kaiming";
    }
    out << "\n";
  }
  out << "total params: " << space_param_count(space) << "\n";
  save_space(paths.space(), space, false);
  out << "wrote " << paths.space() << "\n";
}

void cmd_train(const RunConfig& cfg, bool force, std::ostream& out) {
  WorkdirLayout paths(cfg.workdir);
  refuse_overwrite(paths.trained_space(), force);
  refuse_overwrite(paths.loss_log(), force);
  require_input(paths.space(), "build-space");
  require_input(paths.dataset(), "gen-data");
  StitchSpace space = load_space(paths.space()).space;
  const Dataset data = load_dataset(paths.dataset()).data;
  const std::vector<LossLogEntry> log = train(space, data, cfg.train);
  save_space(paths.trained_space(), space, true);
  write_loss_log(log, paths.loss_log());
  out << "trained " << space.num_configs() << " configs for " << cfg.train.epochs << " epochs ("
      << log.size() << " iterations) -> " << paths.trained_space() << "\n";
}

void cmd_eval(const RunConfig& cfg, const std::string& space_path, const std::string& table_path,
              bool force, std::ostream& out) {
  WorkdirLayout paths(cfg.workdir);
  std::string space_file = space_path;
  if (space_file.empty())
    space_file = fs::exists(paths.trained_space()) ? paths.trained_space() : paths.space();
  const std::string table_file = table_path.empty() ? paths.eval_table() : table_path;
  refuse_overwrite(table_file, force);
  require_input(space_file, "build-space");
  require_input(paths.dataset(), "gen-data");
  const StitchSpace space = load_space(space_file).space;
  const Dataset data = load_dataset(paths.dataset()).data;
  const EvalTable table = evaluate_all(space, data.val);
  write_eval_csv(table, table_file);
  out << "evaluated " << table.rows.size() << " configs from " << space_file << " -> "
      << table_file << "\n";
}

void cmd_select(const RunConfig& cfg, const std::string& table_path, int64_t flops_budget,
                std::ostream& out) {
  WorkdirLayout paths(cfg.workdir);
  const std::string table_file = table_path.empty() ? paths.eval_table() : table_path;
  require_input(table_file, "eval");
  const EvalTable table = read_eval_csv(table_file);
  const SelectionResult r = select(table, flops_budget);
  const EvalRow* row = nullptr;
  for (const auto& candidate : table.rows)
    if (candidate.config_id == r.config_id) row = &candidate;
  out << "config_id=" << r.config_id << " pair=" << (row ? row->pair : "?")
      << " l=" << (row ? row->l : 0) << " m=" << (row ? row->m : 0) << " flops=" << r.flops
      << " val_acc=" << fmt_acc(r.val_accuracy) << " budget=" << r.budget << "\n";
}

void cmd_export_curve(const RunConfig& cfg, const std::string& table_path, bool force,
                      std::ostream& out) {
  WorkdirLayout paths(cfg.workdir);
  const std::string table_file = table_path.empty() ? paths.eval_table() : table_path;
  refuse_overwrite(paths.curve(), force);
  refuse_overwrite(paths.pareto(), force);
  require_input(table_file, "eval");
  const EvalTable table = read_eval_csv(table_file);

  auto write_rows = [](const std::string& path, const std::vector<EvalRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ValueError(strf("cannot open ", path, " for writing"));
    f << "config_id,flops,val_acc\n";
    f.precision(10);
    for (const auto& r : rows) f << r.config_id << "," << r.flops << "," << r.val_acc << "\n";
    if (!f.good()) throw ValueError(strf("write error on ", path));
  };
  write_rows(paths.curve(), table.rows);
  const std::vector<EvalRow> front = pareto_front(table);
  write_rows(paths.pareto(), front);
  out << "wrote " << paths.curve() << " (" << table.rows.size() << " rows) and " << paths.pareto()
      << " (" << front.size() << " rows)\n";
}

}  // namespace snnet
