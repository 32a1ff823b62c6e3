#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "o2rnet/model.hpp"

namespace o2r {

enum class OutputMode { union_branches, occluder_only, occludee_only };

std::string_view output_mode_name(OutputMode m);
OutputMode parse_output_mode(std::string_view s);

struct DetectParams {
  ProposalParams proposals{0.0, 600, 0.7, 300, 2.0};
  double score_threshold = 0.5;
  double nms_threshold = 0.5;        // per-class, within the occluder branch
  double merge_nms_threshold = 0.5;  // across branches
  OutputMode mode = OutputMode::union_branches;

  void validate() const;
};

struct Detection {
  Box box;
  double score = 0.0;
  int label = 1;
  Branch branch = Branch::occluder;
  int proposal_index = -1;
  int expansion_index = -1;  // -1 for occluder detections
};

/// Highest class-`label` score over the k+1 expansion outputs for proposal row `row`
/// (smallest expansion index on ties), decoded against that expansion's box.
Detection select_best(std::span<const BranchOutput> candidates, std::size_t row, std::span<const Box> expansions,
                      int label, const BoxCoderWeights& weights, ImageSize image);

/// Concatenates both lists and applies per-class NMS; descending score order.
std::vector<Detection> merge_branches(std::span<const Detection> occluder, std::span<const Detection> occludee,
                                      double merge_nms_threshold);

/// Per-class greedy NMS over detections (stable on ties).
std::vector<Detection> nms_detections(std::span<const Detection> dets, double threshold);

std::vector<Detection> detect(const O2RNet& model, const Image& image, const DetectParams& params);

// --- Detection dump (JSON lines) -------------------------------------------------------------

nlohmann::json detection_to_json(const std::string& image_id, const Detection& d);

struct DumpEntry {
  std::string image_id;
  Detection detection;
};

void write_detections(std::ostream& os, const std::string& image_id, std::span<const Detection> dets);
std::vector<DumpEntry> read_detections(const std::filesystem::path& path);
std::vector<DumpEntry> parse_detections(std::istream& is);

}  // namespace o2r
