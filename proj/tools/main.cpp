#include <iostream>

#include "CLI11.hpp"
#include "snnet/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config;
  bool force = false;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("-c,--config", args.config, "run configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_flag("--force", args.force, "overwrite existing outputs");
}

}  // namespace

int main(int argc, char** argv) {
  snnet::tune_allocator();

  CLI::App app{
      "snnet: pretrain a family of anchor transformers, build and jointly train the space of "
      "stitched sub-networks between them, then evaluate, select, and export the "
      "accuracy/FLOPs trade-off curve"};
  app.require_subcommand(1);

  CommonArgs gen_args, pre_args, build_args, train_args, eval_args, select_args, curve_args;
  std::string eval_space, eval_out, select_table, curve_table;
  int64_t flops_budget = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, gen_args);

  CLI::App* pre = app.add_subcommand("pretrain", "pretrain every anchor on the dataset");
  add_common(pre, pre_args);

  CLI::App* build = app.add_subcommand(
      "build-space", "enumerate stitches between pretrained anchors and initialize their layers");
  add_common(build, build_args);

  CLI::App* train = app.add_subcommand("train", "jointly train the stitch space");
  add_common(train, train_args);

  CLI::App* eval = app.add_subcommand("eval", "evaluate every config and write the table CSV");
  add_common(eval, eval_args);
  eval->add_option("--space", eval_space,
                   "space checkpoint to evaluate (default: trained if present, else built)");
  eval->add_option("--out", eval_out, "output table path (default: <workdir>/eval.csv)");

  CLI::App* sel = app.add_subcommand("select", "pick the best config within a FLOPs budget");
  add_common(sel, select_args);
  sel->add_option("--flops-budget", flops_budget, "maximum FLOPs per forward pass")->required();
  sel->add_option("--table", select_table, "evaluation table (default: <workdir>/eval.csv)");

  CLI::App* curve = app.add_subcommand("export-curve", "write the trade-off and Pareto CSVs");
  add_common(curve, curve_args);
  curve->add_option("--table", curve_table, "evaluation table (default: <workdir>/eval.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; any parse problem is a validation error
  }

  try {
    if (gen->parsed()) {
      cmd_gen_data(snnet::load_run_config(gen_args.config), gen_args.force, std::cout);
    } else if (pre->parsed()) {
      cmd_pretrain(snnet::load_run_config(pre_args.config), pre_args.force, std::cout);
    } else if (build->parsed()) {
      cmd_build_space(snnet::load_run_config(build_args.config), build_args.force, std::cout);
    } else if (train->parsed()) {
      cmd_train(snnet::load_run_config(train_args.config), train_args.force, std::cout);
    } else if (eval->parsed()) {
      cmd_eval(snnet::load_run_config(eval_args.config), eval_space, eval_out, eval_args.force,
               std::cout);
    } else if (sel->parsed()) {
      cmd_select(snnet::load_run_config(select_args.config), select_table, flops_budget,
                 std::cout);
    } else if (curve->parsed()) {
      cmd_export_curve(snnet::load_run_config(curve_args.config), curve_table, curve_args.force,
                       std::cout);
    }
  } catch (const snnet::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const snnet::ValueError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
