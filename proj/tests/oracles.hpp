#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Each one takes a deliberately different route from the library code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "o2rnet/evaluation.hpp"
#include "o2rnet/geometry.hpp"
#include "o2rnet/rng.hpp"
#include "o2rnet/tensor.hpp"

namespace oracle {

using o2r::Box;

/// Pixel-count IoU on a grid of cell size `res`; cells are counted when their
/// center lies inside the box. Exact for boxes whose corners sit on the grid.
inline double raster_iou(const Box& a, const Box& b, double res) {
  const double lo_x = std::min(a.x1, b.x1), lo_y = std::min(a.y1, b.y1);
  const double hi_x = std::max(a.x2, b.x2), hi_y = std::max(a.y2, b.y2);
  const long nx = std::lround((hi_x - lo_x) / res), ny = std::lround((hi_y - lo_y) / res);
  auto inside = [](const Box& r, double x, double y) { return x > r.x1 && x < r.x2 && y > r.y1 && y < r.y2; };
  long long in_a = 0, in_b = 0, both = 0;
  for (long j = 0; j < ny; ++j) {
    const double y = lo_y + (j + 0.5) * res;
    for (long i = 0; i < nx; ++i) {
      const double x = lo_x + (i + 0.5) * res;
      const bool ia = inside(a, x, y), ib = inside(b, x, y);
      in_a += ia;
      in_b += ib;
      both += ia && ib;
    }
  }
  const long long uni = in_a + in_b - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

/// Repeatedly keeps the best surviving box (earliest index on ties) and
/// strikes every survivor that overlaps it above the threshold.
inline std::vector<std::size_t> brute_force_nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                                                double thr) {
  std::set<std::size_t> alive;
  for (std::size_t i = 0; i < boxes.size(); ++i) alive.insert(i);
  std::vector<std::size_t> kept;
  while (!alive.empty()) {
    std::size_t best = *alive.begin();
    for (std::size_t i : alive)
      if (scores[i] > scores[best]) best = i;
    kept.push_back(best);
    alive.erase(best);
    for (auto it = alive.begin(); it != alive.end();) {
      if (o2r::iou(boxes[best], boxes[*it]) > thr)
        it = alive.erase(it);
      else
        ++it;
    }
  }
  return kept;
}

/// Bounding box of the four corners mapped through a rotation about `(cx, cy)`
/// by `deg` degrees counter-clockwise on screen (y down).
inline Box rotate_corners(const Box& b, double deg, double cx, double cy) {
  const double t = deg * M_PI / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  double xs[4] = {b.x1, b.x2, b.x2, b.x1};
  double ys[4] = {b.y1, b.y1, b.y2, b.y2};
  Box out{1e300, 1e300, -1e300, -1e300};
  for (int k = 0; k < 4; ++k) {
    // With y pointing down, a counter-clockwise turn maps (dx, dy) to (c dx + s dy, -s dx + c dy).
    const double dx = xs[k] - cx, dy = ys[k] - cy;
    const double x = cx + c * dx + s * dy;
    const double y = cy - s * dx + c * dy;
    out.x1 = std::min(out.x1, x);
    out.y1 = std::min(out.y1, y);
    out.x2 = std::max(out.x2, x);
    out.y2 = std::max(out.y2, y);
  }
  return out;
}

/// Size of the largest one-to-one matching between detections and ground truth
/// with IoU >= thr, by exhaustive search.
inline int max_matching(const std::vector<Box>& dets, const std::vector<Box>& gts, double thr) {
  std::vector<bool> used(gts.size(), false);
  std::function<int(std::size_t)> go = [&](std::size_t d) -> int {
    if (d == dets.size()) return 0;
    int best = go(d + 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || o2r::iou(dets[d], gts[g]) < thr) continue;
      used[g] = true;
      best = std::max(best, 1 + go(d + 1));
      used[g] = false;
    }
    return best;
  };
  return go(0);
}

// --- Exhaustive precision/recall oracle --------------------------------------------------

struct Det {
  std::size_t image;
  Box box;
  double score;
  std::size_t input;
};

inline bool box_less(const Box& a, const Box& b) {
  if (a.x1 != b.x1) return a.x1 < b.x1;
  if (a.y1 != b.y1) return a.y1 < b.y1;
  if (a.x2 != b.x2) return a.x2 < b.x2;
  return a.y2 < b.y2;
}

inline bool det_before(const Det& a, const Det& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.box != b.box) return box_less(a.box, b.box);
  if (a.image != b.image) return a.image < b.image;
  return a.input < b.input;
}

/// TP count when each image's detections (already ordered) are matched from scratch.
inline long long rematch_tp(const std::vector<std::vector<Det>>& per_image, const std::vector<std::vector<Box>>& gts,
                            double thr) {
  long long tp = 0;
  for (std::size_t im = 0; im < per_image.size(); ++im) {
    std::vector<bool> taken(gts[im].size(), false);
    for (const Det& d : per_image[im]) {
      int best = -1;
      double best_iou = thr;
      for (std::size_t g = 0; g < gts[im].size(); ++g) {
        if (taken[g]) continue;
        const double v = o2r::iou(d.box, gts[im][g]);
        if (v >= best_iou && (best < 0 || v > best_iou)) {
          best = static_cast<int>(g);
          best_iou = v;
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = true;
        ++tp;
      }
    }
  }
  return tp;
}

struct OracleAp {
  double ap = 0.0;
  double recall = 0.0;
  bool undefined = false;
  std::vector<o2r::PrPoint> curve;
};

/// Enumerates every distinct score threshold, rematches the surviving detections
/// of each image from scratch, and integrates the 101-point interpolated curve.
inline OracleAp exhaustive_ap(const std::vector<o2r::EvalDetection>& dets, const std::vector<o2r::EvalImage>& images,
                              double thr, int max_dets, int label) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < images.size(); ++i) idx[images[i].image_id] = i;
  std::vector<std::vector<Box>> gts(images.size());
  long long npos = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t g = 0; g < images[i].boxes.size(); ++g)
      if (images[i].labels[g] == label) {
        gts[i].push_back(images[i].boxes[g]);
        ++npos;
      }
  OracleAp out;
  if (npos == 0) {
    out.undefined = true;
    return out;
  }
  std::vector<std::vector<Det>> ranked(images.size());
  for (std::size_t k = 0; k < dets.size(); ++k)
    if (dets[k].label == label) {
      const std::size_t im = idx.at(dets[k].image_id);
      ranked[im].push_back({im, dets[k].box, dets[k].score, k});
    }
  std::set<double, std::greater<>> thresholds;
  for (auto& v : ranked) {
    std::sort(v.begin(), v.end(), det_before);
    if (v.size() > static_cast<std::size_t>(max_dets)) v.resize(static_cast<std::size_t>(max_dets));
    for (const Det& d : v) thresholds.insert(d.score);
  }
  for (double s : thresholds) {
    std::vector<std::vector<Det>> kept(images.size());
    long long n = 0;
    for (std::size_t im = 0; im < images.size(); ++im)
      for (const Det& d : ranked[im])
        if (d.score >= s) {
          kept[im].push_back(d);
          ++n;
        }
    const long long tp = rematch_tp(kept, gts, thr);
    out.curve.push_back({s, static_cast<double>(tp) / static_cast<double>(n),
                         static_cast<double>(tp) / static_cast<double>(npos)});
  }
  out.recall = out.curve.empty() ? 0.0 : out.curve.back().recall;
  double sum = 0.0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r * 0.01;
    double best = 0.0;
    for (const auto& p : out.curve)
      if (p.recall >= level) best = std::max(best, p.precision);
    sum += best;
  }
  out.ap = sum / 101.0;
  return out;
}

// --- Finite differences ----------------------------------------------------------------------

/// Central differences of `f` with respect to every entry of `m`.
inline o2r::Matrix central_differences(o2r::Matrix& m, const std::function<double()>& f, double h) {
  o2r::Matrix g(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    const double saved = v;
    v = saved + h;
    const double fp = f();
    v = saved - h;
    const double fm = f();
    v = saved;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), with a floor so that all-zero gradients compare equal.
inline double relative_error(const o2r::Matrix& a, const o2r::Matrix& b, double floor = 1e-10) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

}  // namespace oracle
