#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2rnet/tensor.hpp"

namespace o2r {

class O2RNet;

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::vector<int> shape;
  Matrix value;
};

/// Named parameter map plus optional optimizer state.
struct Checkpoint {
  int version = kCheckpointVersion;
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, NamedTensor> params;
  std::map<std::string, Matrix> velocity;
  int iteration = 0;
};

Checkpoint checkpoint_from_model(const O2RNet& model);
/// Copies every parameter by name; shapes and names must match exactly.
void restore_model(const Checkpoint& checkpoint, O2RNet& model);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace o2r
