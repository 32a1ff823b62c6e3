#include "o2rnet/inference.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace o2r {

std::string_view output_mode_name(OutputMode m) {
  switch (m) {
    case OutputMode::union_branches: return "union";
    case OutputMode::occluder_only: return "occluder_only";
    case OutputMode::occludee_only: return "occludee_only";
  }
  return "union";
}

OutputMode parse_output_mode(std::string_view s) {
  if (s == "union") return OutputMode::union_branches;
  if (s == "occluder_only") return OutputMode::occluder_only;
  if (s == "occludee_only") return OutputMode::occludee_only;
  throw std::invalid_argument("unknown output mode '" + std::string(s) + "'");
}

void DetectParams::validate() const {
  auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!unit(score_threshold) || !unit(nms_threshold) || !unit(merge_nms_threshold) || !unit(proposals.nms_threshold))
    throw std::invalid_argument("detect: thresholds must lie in [0,1]");
  if (proposals.pre_nms_top_n < 0 || proposals.post_nms_top_n < 0)
    throw std::invalid_argument("detect: proposal counts must be >= 0");
}

Detection select_best(std::span<const BranchOutput> candidates, std::size_t row, std::span<const Box> expansions,
                      int label, const BoxCoderWeights& weights, ImageSize image) {
  if (candidates.empty() || candidates.size() != expansions.size())
    throw std::invalid_argument("select_best: need one expansion box per candidate");
  const auto r = static_cast<Eigen::Index>(row);
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].scores(r, label) > candidates[best].scores(r, label)) best = i;
  const Matrix& d = candidates[best].deltas;
  Detection det;
  det.box = clip_box(decode_box(expansions[best], {d(r, 0), d(r, 1), d(r, 2), d(r, 3)}, weights), image);
  det.score = candidates[best].scores(r, label);
  det.label = label;
  det.branch = Branch::occludee;
  det.proposal_index = static_cast<int>(row);
  det.expansion_index = static_cast<int>(best);
  return det;
}

std::vector<Detection> nms_detections(std::span<const Detection> dets, double threshold) {
  std::vector<int> labels;
  for (const auto& d : dets) labels.push_back(d.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  std::vector<Detection> out;
  for (int label : labels) {
    std::vector<std::size_t> idx;
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (dets[i].label == label) {
        idx.push_back(i);
        boxes.push_back(dets[i].box);
        scores.push_back(dets[i].score);
      }
    for (std::size_t k : nms_indices(boxes, scores, threshold)) out.push_back(dets[idx[k]]);
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

std::vector<Detection> merge_branches(std::span<const Detection> occluder, std::span<const Detection> occludee,
                                      double threshold) {
  std::vector<Detection> all(occluder.begin(), occluder.end());
  all.insert(all.end(), occludee.begin(), occludee.end());
  return nms_detections(all, threshold);
}

std::vector<Detection> detect(const O2RNet& model, const Image& image, const DetectParams& params) {
  params.validate();
  const ModelConfig& mc = model.config();
  const ImageSize size{image.width, image.height};
  const auto features = model.backbone_forward(image);
  const auto rpn = model.rpn_forward(features);
  const ProposalSet props = model.rpn_propose(rpn, model.anchors_for(features), size, params.proposals);
  if (props.size() == 0) return {};

  const Matrix x0 = model.extract_roi_features(features, props.proposals);
  std::vector<Detection> occluder, occludee;

  if (params.mode != OutputMode::occludee_only) {
    const BranchOutput out = model.occluder_forward(x0);
    for (std::size_t r = 0; r < props.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      for (int c = 1; c < mc.num_classes; ++c) {
        const double s = out.scores(row, c);
        if (s < params.score_threshold) continue;
        Detection d;
        d.box = clip_box(decode_box(props.proposals[r],
                                    {out.deltas(row, 0), out.deltas(row, 1), out.deltas(row, 2), out.deltas(row, 3)},
                                    mc.roi_box_weights),
                         size);
        if (!(d.box.width() > 0.0 && d.box.height() > 0.0)) continue;
        d.score = s;
        d.label = c;
        d.branch = Branch::occluder;
        d.proposal_index = static_cast<int>(r);
        occluder.push_back(d);
      }
    }
    occluder = nms_detections(occluder, params.nms_threshold);
  }

  if (params.mode != OutputMode::occluder_only) {
    const std::size_t K = static_cast<std::size_t>(mc.fes.directions) + 1;
    std::vector<Matrix> xs(K);
    for (std::size_t i = 0; i < K; ++i) {
      std::vector<Box> boxes;
      for (const auto& e : props.expansions) boxes.push_back(e[i]);
      xs[i] = i == 0 ? x0 : model.extract_roi_features(features, boxes);
    }
    const Matrix ctx = model.occlusion_context(x0);
    const auto outs = model.occludee_forward(x0, ctx, xs);
    for (std::size_t r = 0; r < props.size(); ++r)
      for (int c = 1; c < mc.num_classes; ++c) {
        Detection d = select_best(outs, r, props.expansions[r], c, mc.roi_box_weights, size);
        if (d.score < params.score_threshold || !(d.box.width() > 0.0 && d.box.height() > 0.0)) continue;
        occludee.push_back(d);
      }
    occludee = nms_detections(occludee, params.nms_threshold);
  }
  return merge_branches(occluder, occludee, params.merge_nms_threshold);
}

// --- Dump --------------------------------------------------------------------------------------

nlohmann::json detection_to_json(const std::string& image_id, const Detection& d) {
  nlohmann::json j;
  j["image_id"] = image_id;
  j["box"] = {d.box.x1, d.box.y1, d.box.x2, d.box.y2};
  j["score"] = d.score;
  j["label"] = d.label;
  j["branch"] = std::string(branch_name(d.branch));
  j["proposal_index"] = d.proposal_index;
  j["expansion_index"] = d.branch == Branch::occludee ? nlohmann::json(d.expansion_index) : nlohmann::json(nullptr);
  return j;
}

void write_detections(std::ostream& os, const std::string& image_id, std::span<const Detection> dets) {
  for (const auto& d : dets) os << detection_to_json(image_id, d).dump() << '\n';
}

std::vector<DumpEntry> parse_detections(std::istream& is) {
  std::vector<DumpEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DumpEntry e;
      e.image_id = j.at("image_id").get<std::string>();
      const auto& b = j.at("box");
      if (!b.is_array() || b.size() != 4) throw std::invalid_argument("box must have four numbers");
      e.detection.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
      e.detection.score = j.at("score").get<double>();
      e.detection.label = j.value("label", 1);
      e.detection.branch = parse_branch(j.value("branch", std::string("occluder")));
      e.detection.proposal_index = j.value("proposal_index", -1);
      const auto& ei = j.contains("expansion_index") ? j.at("expansion_index") : nlohmann::json(nullptr);
      e.detection.expansion_index = ei.is_null() ? -1 : ei.get<int>();
      if (!(e.detection.score >= 0.0 && e.detection.score <= 1.0)) throw std::invalid_argument("score outside [0,1]");
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw std::runtime_error("detection dump line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

std::vector<DumpEntry> read_detections(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open detection dump " + path.string());
  return parse_detections(is);
}

}  // namespace o2r
