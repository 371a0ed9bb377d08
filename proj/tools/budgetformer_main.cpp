#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "budgetformer/runner.hpp"

namespace bf = budgetformer;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::int64_t seed = -1;
  int epochs = -1;
  std::string output_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat JSON config file");
  cmd->add_option("--set", args.sets, "override one config key, key=value")
      ->take_all();
  cmd->add_option("--seed", args.seed, "override the run seed");
  cmd->add_option("--epochs", args.epochs, "override the epoch count");
  cmd->add_option("--output-dir", args.output_dir, "override the output directory");
}

bf::RunConfig resolve(const CommonArgs& args) {
  bf::RunConfig cfg;
  if (!args.config_path.empty()) cfg = bf::load_run_config(args.config_path);
  for (const std::string& assignment : args.sets) bf::apply_override(cfg, assignment);
  if (args.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(args.seed);
  if (args.epochs >= 0) cfg.train.epochs = args.epochs;
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  return cfg;
}

int cmd_train(const CommonArgs& args) {
  bf::RunConfig cfg = resolve(args);
  bf::TrainingRun run = bf::run_training(cfg);
  const bf::TrainResult& res = run.result;
  if (res.diverged) {
    std::cerr << "training diverged at step " << res.final_step << "\n";
    return 1;
  }
  std::cout << "steps=" << res.final_step << "/" << res.total_steps;
  if (res.best_val_accuracy >= 0.0) {
    std::cout << " best_val_accuracy=" << res.best_val_accuracy << " best_epoch="
              << res.best_epoch;
  }
  std::cout << "\nartifacts: " << run.out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const CommonArgs& args, int force_k) {
  bf::RunConfig cfg = resolve(args);
  std::string out_dir = args.output_dir.empty() ? cfg.output_dir : args.output_dir;
  bf::EvalRun run = bf::run_eval(checkpoint, cfg, force_k, out_dir);
  std::cout << "accuracy=" << run.result.accuracy << " s_mean=" << run.result.s_mean
            << " mean_k=" << run.mean_k << " flops_total=" << run.result.cost.flops_total
            << " ratio_attention=" << run.result.cost.ratio_attention
            << " carbon_proxy=" << run.result.cost.carbon_proxy << "\n";
  if (!run.report_path.empty()) std::cout << "report: " << run.report_path << "\n";
  return 0;
}

int cmd_ablate(const std::string& mode, const std::vector<double>& grid, bool parallel,
               const CommonArgs& args) {
  bf::Ablation ablation;
  if (mode == "fixed_budget") ablation = bf::Ablation::fixed_budget;
  else if (mode == "random_gating") ablation = bf::Ablation::random_gating;
  else throw bf::ParameterError("ablate: unknown mode '" + mode + "'");
  bf::RunConfig cfg = resolve(args);
  bf::AblationRun run = bf::run_ablation(cfg, ablation, grid, parallel);
  for (const bf::AblationRow& row : run.rows) {
    std::cout << row.variant << ": accuracy=" << row.accuracy << " mean_k=" << row.mean_k
              << " ratio_attention=" << row.ratio_attention << "\n";
  }
  std::cout << "table: " << run.table_path << "\n";
  return 0;
}

int cmd_analyze(const std::string& checkpoint, const CommonArgs& args,
                std::int64_t example_index, bool dump_attention) {
  bf::RunConfig cfg = resolve(args);
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  bf::AnalysisReport rep =
      bf::run_analysis(checkpoint, cfg, dump_attention ? example_index : -1);
  std::cout << "examples=" << rep.examples << " s_mean=" << rep.s_mean_overall << "\n";
  std::cout << "tables: " << cfg.output_dir << "/analysis\n";
  if (dump_attention) {
    std::cout << "attention: " << cfg.output_dir << "/attention/example_" << example_index
              << ".json\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"budget-gated attention experiments"};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from a config");
  add_common(train_cmd, train_args);

  CommonArgs eval_args;
  std::string eval_checkpoint;
  int force_k = 0;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--force-k", force_k, "activate exactly k heads everywhere");

  CommonArgs ablate_args;
  std::string ablate_mode;
  std::vector<double> grid{0.1, 0.25, 0.5, 0.75, 1.0};
  bool parallel = false;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run an ablation comparison");
  add_common(ablate_cmd, ablate_args);
  ablate_cmd->add_option("--mode", ablate_mode, "fixed_budget or random_gating")->required();
  ablate_cmd->add_option("--grid", grid, "fixed_budget s values")->delimiter(',');
  ablate_cmd->add_flag("--parallel", parallel, "run grid points concurrently");

  CommonArgs analyze_args;
  std::string analyze_checkpoint;
  std::int64_t example_index = 0;
  bool dump_attention = false;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "budget statistics for a checkpoint");
  add_common(analyze_cmd, analyze_args);
  analyze_cmd->add_option("--checkpoint", analyze_checkpoint, "checkpoint file")->required();
  analyze_cmd->add_option("--example-index", example_index, "example whose maps to dump");
  analyze_cmd->add_flag("--dump-attention", dump_attention, "write the attention maps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_checkpoint, eval_args, force_k);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_mode, grid, parallel, ablate_args);
    if (analyze_cmd->parsed()) {
      return cmd_analyze(analyze_checkpoint, analyze_args, example_index, dump_attention);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
