// hfplp: train, evaluate and inspect HFPLP/DAAC locomotion policies.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "hfplp/checkpoint.hpp"
#include "hfplp/config.hpp"
#include "hfplp/evalkit.hpp"
#include "hfplp/trainer.hpp"

namespace {

using namespace hfplp;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

WorkbenchConfig resolve_config(const Common& c) {
  WorkbenchConfig cfg = c.config_path.empty() ? WorkbenchConfig{} : load_config(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  cfg.observer.sample_period_s = cfg.env.control_period_s;
  cfg.validate();
  return cfg;
}

std::string out_dir(const Common& c, const WorkbenchConfig& cfg) { return c.out.empty() ? cfg.io.out_dir : c.out; }

int cmd_train(const Common& c, const std::string& stage, const std::string& resume, std::optional<int> iters,
              const std::string& stage1) {
  WorkbenchConfig cfg = resolve_config(c);
  TrainOptions opt;
  opt.stage = parse_stage(stage);
  opt.out_dir = out_dir(c, cfg);
  opt.iterations = iters;
  if (!resume.empty()) {
    if (!std::filesystem::exists(resume)) throw MissingInput("resume checkpoint '" + resume + "' does not exist");
    opt.resume = resume;
  }
  if (is_stage2(opt.stage) && !opt.resume) {
    const std::string s1 = stage1.empty() ? checkpoint_path(opt.out_dir, TrainStage::kHfplp) : stage1;
    if (!std::filesystem::exists(s1))
      throw MissingInput("stage-1 checkpoint '" + s1 + "' not found (pass --stage1 or train hfplp first)");
    opt.stage1_checkpoint = s1;
  }
  const TrainResult r = train(cfg, opt);
  std::cout << "checkpoint " << r.checkpoint_path << "\n";
  std::cout << "log " << r.log_path << "\n";
  return 0;
}

int cmd_inspect(const std::string& path) {
  const CheckpointInfo info = inspect_checkpoint(path);
  std::cout << "format_version " << info.format_version << "\n";
  std::cout << "stage " << info.stage << "\n";
  std::cout << "action_mode " << mode_name(info.mode) << "\n";
  std::cout << "iteration " << info.iteration << "\n";
  std::cout << "daac_uses_observer " << (info.daac_uses_observer ? 1 : 0) << "\n";
  std::cout << "config_digest " << info.config_digest << "\n";
  std::cout << "blob_fnv1a64 " << info.blob_checksum << "\n";
  for (const auto& e : info.manifest)
    std::cout << "tensor " << e.name << " " << e.rows << "x" << e.cols << " params " << e.rows * e.cols << "\n";
  std::cout << "parameter_count " << info.parameter_count() << "\n";
  return 0;
}

Checkpoint load_for_eval(const std::string& path, const Common& c) {
  if (path.empty()) throw MissingInput("--checkpoint is required");
  if (!std::filesystem::exists(path)) throw MissingInput("checkpoint '" + path + "' does not exist");
  if (c.config_path.empty()) return load_checkpoint(path);
  const WorkbenchConfig cfg = resolve_config(c);
  Checkpoint ck = load_checkpoint(path, &cfg);
  ck.config = cfg;
  return ck;
}

int cmd_eval(const Common& c, const std::string& scenario, const std::string& ckpt_path, std::optional<int> trials) {
  Checkpoint ck = load_for_eval(ckpt_path, c);
  WorkbenchConfig cfg = ck.config;
  if (c.seed) cfg.seed = *c.seed;
  const std::string dir = c.out.empty() ? (std::filesystem::path(cfg.io.out_dir) / "eval").string() : c.out;
  const EvalRequest req{scenario, trials};
  const EvalOutput out = run_named_evaluation(ck.stack, cfg, req);
  export_report(out, dir, scenario, cfg.io.dump_traces);
  std::cout << "table " << (std::filesystem::path(dir) / (scenario + ".csv")).string() << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const std::string& kind, const std::string& ckpt_path, std::optional<int> trials) {
  if (kind != "payload" && kind != "pd-mismatch" && kind != "impact")
    throw ConfigError("unknown sweep '" + kind + "' (payload, pd-mismatch, impact)");
  return cmd_eval(c, kind + "-sweep", ckpt_path, trials);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HFPLP/DAAC locomotion workbench"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file (defaults when omitted)");
    sub->add_option("--seed", common.seed, "Override the top-level seed");
    sub->add_option("--out", common.out, "Output directory");
  };

  std::string stage, resume, stage1, ckpt, scenario, sweep_kind, inspect_path;
  std::optional<int> iters, trials;

  CLI::App* train = app.add_subcommand("train", "Run a training stage");
  train->add_option("stage", stage, "hfplp | baseline-position | daac | daac-no-observer")->required();
  add_common(train);
  train->add_option("--resume", resume, "Continue from a checkpoint of the same stage");
  train->add_option("--iters", iters, "Total iterations (overrides the config)");
  train->add_option("--stage1", stage1, "Stage-1 checkpoint for daac stages");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a scenario");
  eval->add_option("scenario", scenario, evaluation_names_help())->required();
  add_common(eval);
  eval->add_option("--checkpoint", ckpt, "Checkpoint to evaluate")->required();
  eval->add_option("--trials", trials, "Trials per condition (defaults to the seed list length)");

  CLI::App* sweep = app.add_subcommand("sweep", "Run a parameter sweep");
  sweep->add_option("kind", sweep_kind, "payload | pd-mismatch | impact")->required();
  add_common(sweep);
  sweep->add_option("--checkpoint", ckpt, "Checkpoint to evaluate")->required();
  sweep->add_option("--trials", trials, "Trials per point");

  CLI::App* inspect = app.add_subcommand("inspect", "Print a checkpoint manifest");
  inspect->add_option("checkpoint", inspect_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: UsageError: " << msg << "\n";
    return 2;
  }

  try {
    if (*train) return cmd_train(common, stage, resume, iters, stage1);
    if (*eval) return cmd_eval(common, scenario, ckpt, trials);
    if (*sweep) return cmd_sweep(common, sweep_kind, ckpt, trials);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const hfplp::Error& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << e.kind() << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: InternalError: " << msg << "\n";
    return 1;
  }
  return 0;
}
