#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "o2rnet/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string device = "cpu";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run config (JSON)")->check(CLI::ExistingFile);
  app->add_option("--preset", c.preset, "Named preset: desk, desk-baseline, arch-paper-3.5, exp-paper-4.1");
  app->add_option("--seed", c.seed, "Seed for every stochastic component");
  app->add_option("--out", c.out, "Output directory or file");
  app->add_option("--device", c.device, "Compute device (cpu)");
}

o2r::RunConfig resolve(const Common& c) {
  if (c.device != "cpu") throw std::invalid_argument("unsupported device '" + c.device + "' (only cpu is available)");
  o2r::RunConfig cfg = o2r::load_run_config(c.config, c.preset, o2r::current_environment());
  if (c.seed) cfg.apply_seed(*c.seed);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"O2RNet occlusion-aware detector: data, training, inference and evaluation"};
  app.require_subcommand(1);

  Common synth_c, aug_c, train_c, infer_c, eval_c, report_c;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic clustered-disc dataset");
  add_common(synth, synth_c);
  std::optional<int> count;
  synth->add_option("--count", count, "Number of scenes");

  auto* augment = app.add_subcommand("augment", "Materialize augmented copies of a manifest");
  add_common(augment, aug_c);
  std::string aug_manifest;
  int copies = 1;
  augment->add_option("--manifest", aug_manifest, "Input manifest")->required();
  augment->add_option("--copies", copies, "Augmented draws per record");

  auto* train = app.add_subcommand("train", "Train a model into a run directory");
  add_common(train, train_c);
  std::string train_manifest, test_manifest, init_ckpt;
  bool resume = false, replace_heads = false, eval_after = false;
  train->add_option("--train-manifest", train_manifest, "Training manifest (overrides paths.train_manifest)");
  train->add_option("--test-manifest", test_manifest, "Test manifest (overrides paths.test_manifest)");
  train->add_option("--init", init_ckpt, "Pretrained checkpoint to start from");
  train->add_flag("--replace-heads", replace_heads, "Re-initialize the final predictors after loading --init");
  train->add_flag("--resume", resume, "Continue from the run directory's last checkpoint");
  train->add_flag("--eval", eval_after, "Run inference and evaluation on the test manifest afterwards");

  auto* infer = app.add_subcommand("infer", "Detect objects in every image of a manifest");
  add_common(infer, infer_c);
  std::string checkpoint, infer_manifest, mode;
  std::optional<double> score_thr;
  infer->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  infer->add_option("--manifest", infer_manifest, "Image manifest")->required();
  infer->add_option("--mode", mode, "Output mode: union, occluder_only, occludee_only");
  infer->add_option("--score-threshold", score_thr, "Detection score threshold");

  auto* eval = app.add_subcommand("eval", "Score a detection dump against a manifest");
  add_common(eval, eval_c);
  std::string dump, eval_manifest;
  eval->add_option("--dump", dump, "Detection dump (JSON lines)")->required();
  eval->add_option("--manifest", eval_manifest, "Ground-truth manifest")->required();

  auto* report = app.add_subcommand("report", "Compare evaluated runs in one table with plots");
  add_common(report, report_c);
  std::vector<std::string> runs;
  report->add_option("runs", runs, "Run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) {
      auto cfg = resolve(synth_c);
      if (count) cfg.synth.count = *count;
      cfg.validate();
      o2r::cmd_synth(cfg, synth_c.out, std::cout);
    } else if (*augment) {
      const auto cfg = resolve(aug_c);
      o2r::cmd_augment(cfg, aug_manifest, aug_c.out, copies, std::cout);
    } else if (*train) {
      auto cfg = resolve(train_c);
      if (!train_manifest.empty()) cfg.paths.train_manifest = train_manifest;
      if (!test_manifest.empty()) cfg.paths.test_manifest = test_manifest;
      if (!init_ckpt.empty()) cfg.paths.init_checkpoint = init_ckpt;
      if (replace_heads) cfg.paths.replace_heads = true;
      if (eval_after && cfg.paths.test_manifest.empty())
        throw std::invalid_argument("train --eval needs a test manifest");
      const auto outcome = o2r::cmd_train(cfg, train_c.out, resume, std::cout);
      if (eval_after) {
        const o2r::fs::path run = train_c.out;
        o2r::cmd_infer(cfg, outcome.final_checkpoint, cfg.paths.test_manifest, run / "eval" / "detections.jsonl",
                       std::cout);
        o2r::cmd_eval(cfg, run / "eval" / "detections.jsonl", cfg.paths.test_manifest, run / "eval", std::cout);
      }
    } else if (*infer) {
      auto cfg = resolve(infer_c);
      if (!mode.empty()) cfg.detect.mode = o2r::parse_output_mode(mode);
      if (score_thr) cfg.detect.score_threshold = *score_thr;
      cfg.validate();
      o2r::cmd_infer(cfg, checkpoint, infer_manifest, infer_c.out, std::cout);
    } else if (*eval) {
      const auto cfg = resolve(eval_c);
      o2r::cmd_eval(cfg, dump, eval_manifest, eval_c.out, std::cout);
    } else if (*report) {
      resolve(report_c);
      std::vector<o2r::fs::path> dirs(runs.begin(), runs.end());
      o2r::cmd_report(dirs, report_c.out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
