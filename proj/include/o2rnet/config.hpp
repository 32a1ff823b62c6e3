#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2rnet/augmentation.hpp"
#include "o2rnet/data.hpp"
#include "o2rnet/evaluation.hpp"
#include "o2rnet/inference.hpp"
#include "o2rnet/trainer.hpp"

namespace o2r {

inline constexpr const char* kVersion = "0.1.0";

struct SynthSection {
  SynthConfig scene;
  int count = 10;
  std::array<double, 3> split{0.8, 0.1, 0.1};
};

struct PathsConfig {
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  std::string init_checkpoint;  // optional pretrained weights
  bool replace_heads = false;
};

struct RunConfig {
  std::string name = "O2RNet";
  std::string preset = "desk";
  std::uint64_t seed = 0;
  SynthSection synth;
  TrainConfig train;
  DetectParams detect;
  EvalSettings eval;
  PathsConfig paths;
  int log_every = 50;
  int checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const;
  /// Propagates the top-level seed into every component that consumes one.
  void apply_seed(std::uint64_t s);
};

std::vector<std::string> preset_names();
/// Throws std::invalid_argument naming the preset when unknown.
RunConfig make_preset(const std::string& name);

nlohmann::json to_json(const RunConfig& c);
/// Overlays `j` on `base`. Unknown keys and type errors are reported with their
/// dotted path.
RunConfig run_config_from_json(const nlohmann::json& j, const RunConfig& base);

/// Applies O2RNET_<SECTION>__<KEY>=value style overrides (double underscore
/// separates nesting levels; values parse as JSON, falling back to strings).
void apply_env_overrides(nlohmann::json& j, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> current_environment(const std::string& prefix = "O2RNET_");

/// Loads a config file (optional), resolving its "preset" key first, then env overrides.
RunConfig load_run_config(const std::string& path, const std::string& preset_override,
                          const std::map<std::string, std::string>& env);

/// FNV-1a over the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& c);

}  // namespace o2r
