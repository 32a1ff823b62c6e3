#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "o2rnet/data.hpp"
#include "o2rnet/geometry.hpp"

namespace o2r {

/// TN is carried for completeness but never populated: detection has no
/// meaningful count of true negatives.
struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long tn = 0;
  long long fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

double f1_score(double precision, double recall);
Prf precision_recall_f1(const ConfusionCounts& c);

struct MatchResult {
  std::vector<bool> det_tp;
  std::vector<int> det_gt;  // matched gt index or -1
  std::vector<bool> gt_matched;

  ConfusionCounts counts() const;
};

/// Greedy matching of score-sorted detections: each takes the unmatched ground truth
/// of highest IoU >= threshold (first on ties).
MatchResult match_detections(std::span<const Box> dets_sorted, std::span<const Box> gts, double iou_threshold);

struct EvalDetection {
  std::string image_id;
  Box box;
  double score = 0.0;
  int label = 1;
};

struct EvalImage {
  std::string image_id;
  std::vector<Box> boxes;
  std::vector<int> labels;
};

std::vector<EvalImage> eval_images(std::span<const ImageRecord> records);

struct PrPoint {
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct ApResult {
  double ap = 0.0;
  double recall = 0.0;     // final recall with up to max_dets per image
  bool undefined = false;  // no ground truth for the label
  std::vector<PrPoint> curve;
};

/// 101-point interpolated AP for one label. Detections are ranked by score with
/// ties ordered canonically, and the curve has one point per distinct score.
ApResult average_precision(std::span<const EvalDetection> dets, std::span<const EvalImage> images,
                           double iou_threshold, int max_dets = 100, int label = 1);

/// Interpolated precision at recall 0, 0.01, ..., 1 averaged over the 101 points.
double interpolated_ap(std::span<const PrPoint> curve);

struct EvalSettings {
  int max_dets = 100;
  double f1_iou = 0.5;
  double f1_score = 0.5;

  void validate() const;
};

inline constexpr std::array<double, 10> kCocoIouThresholds{0.50, 0.55, 0.60, 0.65, 0.70,
                                                            0.75, 0.80, 0.85, 0.90, 0.95};

struct EvalSummary {
  std::array<double, 10> ap_at{};
  std::array<double, 10> ar_at{};
  double ap = 0.0, ap50 = 0.0, ap75 = 0.0;
  double ar = 0.0, ar50 = 0.0, ar75 = 0.0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  ConfusionCounts counts;
  bool undefined = false;  // no ground truth at all
  int max_dets = 100;
  std::vector<PrPoint> pr_curve50;
};

/// Throws if any detection names an image that is not in `images`.
EvalSummary coco_summary(std::span<const EvalDetection> dets, std::span<const EvalImage> images,
                         const EvalSettings& settings = {});

}  // namespace o2r
