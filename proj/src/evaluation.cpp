#include "o2rnet/evaluation.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

namespace o2r {

double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

Prf precision_recall_f1(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) throw std::invalid_argument("confusion counts must be >= 0");
  Prf out;
  out.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
  out.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

ConfusionCounts MatchResult::counts() const {
  ConfusionCounts c;
  for (bool t : det_tp) (t ? c.tp : c.fp) += 1;
  for (bool m : gt_matched) c.fn += !m;
  return c;
}

MatchResult match_detections(std::span<const Box> dets, std::span<const Box> gts, double thr) {
  MatchResult m;
  m.det_tp.assign(dets.size(), false);
  m.det_gt.assign(dets.size(), -1);
  m.gt_matched.assign(gts.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    int best = -1;
    double best_iou = thr;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (m.gt_matched[g]) continue;
      const double v = iou(dets[d], gts[g]);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      m.det_tp[d] = true;
      m.det_gt[d] = best;
      m.gt_matched[static_cast<std::size_t>(best)] = true;
    }
  }
  return m;
}

std::vector<EvalImage> eval_images(std::span<const ImageRecord> records) {
  std::vector<EvalImage> out;
  for (const auto& r : records) {
    EvalImage e{r.image_id, r.annotation.boxes, r.annotation.labels};
    if (e.labels.empty()) e.labels.assign(e.boxes.size(), kAppleLabel);
    out.push_back(std::move(e));
  }
  return out;
}

void EvalSettings::validate() const {
  if (max_dets < 1) throw std::invalid_argument("eval: max_dets must be positive");
  if (!(f1_iou >= 0.0 && f1_iou <= 1.0) || !(f1_score >= 0.0 && f1_score <= 1.0))
    throw std::invalid_argument("eval: thresholds must lie in [0,1]");
}

namespace {

struct Ranked {
  double score;
  Box box;
  std::size_t image;
  std::size_t index;
  bool tp = false;
};

bool ranked_before(const Ranked& a, const Ranked& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.box.x1, a.box.y1, a.box.x2, a.box.y2, a.image, a.index) <
         std::tie(b.box.x1, b.box.y1, b.box.x2, b.box.y2, b.image, b.index);
}

std::unordered_map<std::string, std::size_t> index_images(std::span<const EvalImage> images) {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < images.size(); ++i)
    if (!idx.emplace(images[i].image_id, i).second)
      throw std::invalid_argument("evaluation: duplicate image id " + images[i].image_id);
  return idx;
}

void check_ids(std::span<const EvalDetection> dets, const std::unordered_map<std::string, std::size_t>& idx) {
  std::set<std::string> offenders;
  for (const auto& d : dets)
    if (!idx.count(d.image_id)) offenders.insert(d.image_id);
  if (offenders.empty()) return;
  std::string msg = "evaluation: detections reference images missing from the manifest:";
  for (const auto& o : offenders) msg += " " + o;
  throw std::invalid_argument(msg);
}

// Per-image canonical ranking, truncated to max_dets.
std::vector<std::vector<Ranked>> per_image(std::span<const EvalDetection> dets,
                                           const std::unordered_map<std::string, std::size_t>& idx,
                                           std::size_t n_images, int label, int max_dets) {
  std::vector<std::vector<Ranked>> out(n_images);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].label != label) continue;
    const std::size_t im = idx.at(dets[i].image_id);
    out[im].push_back({dets[i].score, dets[i].box, im, i});
  }
  for (auto& v : out) {
    std::sort(v.begin(), v.end(), ranked_before);
    if (v.size() > static_cast<std::size_t>(max_dets)) v.resize(static_cast<std::size_t>(max_dets));
  }
  return out;
}

std::vector<Box> gt_for(const EvalImage& im, int label) {
  std::vector<Box> out;
  for (std::size_t g = 0; g < im.boxes.size(); ++g)
    if ((g < im.labels.size() ? im.labels[g] : kAppleLabel) == label) out.push_back(im.boxes[g]);
  return out;
}

ApResult ap_impl(std::span<const EvalDetection> dets, std::span<const EvalImage> images,
                 const std::unordered_map<std::string, std::size_t>& idx, double thr, int max_dets, int label) {
  ApResult res;
  auto ranked = per_image(dets, idx, images.size(), label, max_dets);
  std::size_t npos = 0;
  std::vector<Ranked> pooled;
  for (std::size_t im = 0; im < images.size(); ++im) {
    const auto gts = gt_for(images[im], label);
    npos += gts.size();
    std::vector<Box> boxes;
    for (const auto& r : ranked[im]) boxes.push_back(r.box);
    const MatchResult m = match_detections(boxes, gts, thr);
    for (std::size_t k = 0; k < ranked[im].size(); ++k) {
      ranked[im][k].tp = m.det_tp[k];
      pooled.push_back(ranked[im][k]);
    }
  }
  if (npos == 0) {
    res.undefined = true;
    return res;
  }
  std::sort(pooled.begin(), pooled.end(), ranked_before);
  long long tp = 0, fp = 0;
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    (pooled[k].tp ? tp : fp) += 1;
    const bool group_end = k + 1 == pooled.size() || pooled[k + 1].score != pooled[k].score;
    if (!group_end) continue;
    res.curve.push_back({pooled[k].score, static_cast<double>(tp) / static_cast<double>(tp + fp),
                         static_cast<double>(tp) / static_cast<double>(npos)});
  }
  res.recall = static_cast<double>(tp) / static_cast<double>(npos);
  res.ap = interpolated_ap(res.curve);
  return res;
}

std::vector<int> gt_labels(std::span<const EvalImage> images) {
  std::set<int> s;
  for (const auto& im : images)
    for (std::size_t g = 0; g < im.boxes.size(); ++g) s.insert(g < im.labels.size() ? im.labels[g] : kAppleLabel);
  return {s.begin(), s.end()};
}

}  // namespace

double interpolated_ap(std::span<const PrPoint> curve) {
  if (curve.empty()) return 0.0;
  std::vector<double> prec(curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) prec[i] = curve[i].precision;
  for (std::size_t i = prec.size() - 1; i-- > 0;) prec[i] = std::max(prec[i], prec[i + 1]);
  double sum = 0.0;
  std::size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r * 0.01;
    while (j < curve.size() && curve[j].recall < level) ++j;
    if (j == curve.size()) break;
    sum += prec[j];
  }
  return sum / 101.0;
}

ApResult average_precision(std::span<const EvalDetection> dets, std::span<const EvalImage> images, double thr,
                           int max_dets, int label) {
  const auto idx = index_images(images);
  check_ids(dets, idx);
  return ap_impl(dets, images, idx, thr, max_dets, label);
}

EvalSummary coco_summary(std::span<const EvalDetection> dets, std::span<const EvalImage> images,
                         const EvalSettings& settings) {
  settings.validate();
  const auto idx = index_images(images);
  check_ids(dets, idx);
  EvalSummary s;
  s.max_dets = settings.max_dets;
  const auto labels = gt_labels(images);
  s.undefined = labels.empty();

  for (std::size_t t = 0; t < kCocoIouThresholds.size(); ++t) {
    double ap = 0.0, ar = 0.0;
    for (int label : labels) {
      const ApResult r = ap_impl(dets, images, idx, kCocoIouThresholds[t], settings.max_dets, label);
      ap += r.ap;
      ar += r.recall;
      if (t == 0 && label == labels.front()) s.pr_curve50 = r.curve;
    }
    if (!labels.empty()) {
      ap /= static_cast<double>(labels.size());
      ar /= static_cast<double>(labels.size());
    }
    s.ap_at[t] = ap;
    s.ar_at[t] = ar;
  }
  s.ap = std::accumulate(s.ap_at.begin(), s.ap_at.end(), 0.0) / 10.0;
  s.ar = std::accumulate(s.ar_at.begin(), s.ar_at.end(), 0.0) / 10.0;
  s.ap50 = s.ap_at[0];
  s.ap75 = s.ap_at[5];
  s.ar50 = s.ar_at[0];
  s.ar75 = s.ar_at[5];

  // Operating-point counts over every label that appears in detections or ground truth.
  std::set<int> all_labels(labels.begin(), labels.end());
  for (const auto& d : dets) all_labels.insert(d.label);
  for (int label : all_labels) {
    auto ranked = per_image(dets, idx, images.size(), label, settings.max_dets);
    for (std::size_t im = 0; im < images.size(); ++im) {
      std::vector<Box> boxes;
      for (const auto& r : ranked[im])
        if (r.score >= settings.f1_score) boxes.push_back(r.box);
      s.counts += match_detections(boxes, gt_for(images[im], label), settings.f1_iou).counts();
    }
  }
  const Prf prf = precision_recall_f1(s.counts);
  s.precision = prf.precision;
  s.recall = prf.recall;
  s.f1 = prf.f1;
  return s;
}

}  // namespace o2r
