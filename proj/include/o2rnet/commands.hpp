#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2rnet/config.hpp"

namespace o2r {

namespace fs = std::filesystem;

/// Writes scenes as PNG plus manifest.jsonl (all scenes) and train/val/test
/// manifests per the configured split. Returns the number of scenes.
std::size_t cmd_synth(const RunConfig& config, const fs::path& out_dir, std::ostream& log);

/// Materializes `copies` augmented draws per record of `manifest`.
std::size_t cmd_augment(const RunConfig& config, const fs::path& manifest, const fs::path& out_dir, int copies,
                        std::ostream& log);

struct TrainOutcome {
  int iterations = 0;
  int skipped_steps = 0;
  fs::path final_checkpoint;
  std::vector<IterationLog> history;
};

/// Trains into `run_dir` (config.json, metadata.json, loss.csv, checkpoints/).
/// With `resume`, continues from run_dir/checkpoints/last.bin when present.
TrainOutcome cmd_train(const RunConfig& config, const fs::path& run_dir, bool resume, std::ostream& log);

/// Trains in memory without touching the filesystem.
TrainOutcome train_in_memory(O2RNet& model, const RunConfig& config, const std::vector<ImageRecord>& train,
                             std::ostream* log = nullptr);

/// Runs detection over every record and returns one dump entry per detection.
std::vector<DumpEntry> infer_records(const O2RNet& model, const std::vector<ImageRecord>& records,
                                     const DetectParams& params);

std::size_t cmd_infer(const RunConfig& config, const fs::path& checkpoint, const fs::path& manifest,
                      const fs::path& dump, std::ostream& log);

std::vector<EvalDetection> to_eval_detections(const std::vector<DumpEntry>& dump);

nlohmann::json summary_to_json(const EvalSummary& s);
EvalSummary summary_from_json(const nlohmann::json& j);

/// Writes summary.json, summary.csv, summary.txt, pr_curve.csv and pr_curve.svg to out_dir.
EvalSummary cmd_eval(const RunConfig& config, const fs::path& dump, const fs::path& manifest, const fs::path& out_dir,
                     std::ostream& log);

/// Aggregates run directories (each with config.json and eval/summary.json) into
/// report.csv, report.txt, loss_curves.svg and pr_curves.svg.
void cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir, std::ostream& log);

/// Model described by a checkpoint's embedded config.
O2RNet model_from_checkpoint(const fs::path& checkpoint, RunConfig* config_out = nullptr);

}  // namespace o2r
