#include "o2rnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace o2r {

double Box::area() const {
  return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
}

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x1 <= x2 && y1 <= y2;
}

bool Box::contains(const Box& o, double tol) const {
  return x1 <= o.x1 + tol && y1 <= o.y1 + tol && x2 >= o.x2 - tol && y2 >= o.y2 - tol;
}

std::string_view branch_name(Branch b) {
  return b == Branch::occluder ? "occluder" : "occludee";
}

Branch parse_branch(std::string_view s) {
  if (s == "occluder") return Branch::occluder;
  if (s == "occludee") return Branch::occludee;
  throw std::invalid_argument("unknown branch '" + std::string(s) + "'");
}

void AnchorConfig::validate() const {
  if (strides.empty() || scales.empty() || aspect_ratios.empty())
    throw std::invalid_argument("anchor config: strides, scales and aspect_ratios must be non-empty");
  for (int s : strides)
    if (s <= 0) throw std::invalid_argument("anchor config: strides must be positive");
  for (double s : scales)
    if (!(s > 0.0)) throw std::invalid_argument("anchor config: scales must be positive");
  for (double r : aspect_ratios)
    if (!(r > 0.0)) throw std::invalid_argument("anchor config: aspect ratios must be positive");
  if (strides.size() > 1 && scales.size() != strides.size() && scales.size() != 1 &&
      scales.size() % strides.size() != 0)
    throw std::invalid_argument("anchor config: scales must divide evenly across strides");
}

std::vector<double> AnchorConfig::scales_for_level(std::size_t level) const {
  if (strides.size() <= 1) return scales;
  if (scales.size() == 1) return scales;
  const std::size_t per = scales.size() / strides.size();
  return {scales.begin() + static_cast<std::ptrdiff_t>(level * per),
          scales.begin() + static_cast<std::ptrdiff_t>((level + 1) * per)};
}

std::size_t AnchorConfig::anchors_per_cell(std::size_t level) const {
  return scales_for_level(level).size() * aspect_ratios.size();
}

void FesConfig::validate() const {
  if (steps < 0) throw std::invalid_argument("fes: steps must be >= 0");
  if (directions <= 0) throw std::invalid_argument("fes: directions must be positive");
  if (!(step_frac > 0.0)) throw std::invalid_argument("fes: step_frac must be positive");
}

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<std::size_t> nms_indices(std::span<const Box> boxes, std::span<const double> scores,
                                     double iou_threshold) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes and scores differ in length");
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("nms: iou_threshold must lie in [0,1]");

  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_threshold) suppressed[j] = 1;
    }
  }
  return keep;
}

std::vector<ScoredBox> nms(std::span<const ScoredBox> candidates, double iou_threshold) {
  std::vector<Box> boxes;
  std::vector<double> scores;
  boxes.reserve(candidates.size());
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    boxes.push_back(c.box);
    scores.push_back(c.score);
  }
  std::vector<ScoredBox> out;
  for (std::size_t i : nms_indices(boxes, scores, iou_threshold)) out.push_back(candidates[i]);
  return out;
}

std::vector<Box> generate_anchors(int rows, int cols, std::span<const double> scales,
                                  std::span<const double> aspect_ratios, int stride) {
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("generate_anchors: empty feature shape");
  if (stride <= 0) throw std::invalid_argument("generate_anchors: stride must be positive");
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(rows) * cols * scales.size() * aspect_ratios.size());
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double cx = (j + 0.5) * stride;
      const double cy = (i + 0.5) * stride;
      for (double s : scales) {
        for (double r : aspect_ratios) {
          const double w = s * std::sqrt(r);
          const double h = s / std::sqrt(r);
          out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return out;
}

std::vector<Box> generate_anchors(int rows, int cols, const AnchorConfig& config, int stride) {
  config.validate();
  std::size_t level = 0;
  for (std::size_t l = 0; l < config.strides.size(); ++l)
    if (config.strides[l] == stride) level = l;
  const auto scales = config.scales_for_level(level);
  return generate_anchors(rows, cols, scales, config.aspect_ratios, stride);
}

Box clip_box(const Box& b, ImageSize size) {
  const double w = size.width;
  const double h = size.height;
  Box c{std::clamp(b.x1, 0.0, w), std::clamp(b.y1, 0.0, h), std::clamp(b.x2, 0.0, w),
        std::clamp(b.y2, 0.0, h)};
  return c;
}

std::pair<int, int> expansion_direction(int index, int directions) {
  const double theta = 2.0 * std::numbers::pi * index / directions;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  auto sign = [](double v) { return std::abs(v) < 1e-9 ? 0 : (v > 0 ? 1 : -1); };
  // Image y grows downward, so "north" is negative dy.
  return {sign(c), -sign(s)};
}

std::vector<Box> fes_expand(const Box& proposal, const FesConfig& config, ImageSize image) {
  config.validate();
  if (!proposal.valid()) throw std::invalid_argument("fes_expand: invalid proposal");
  const int k = config.directions;
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(k) + 1);
  out.push_back(clip_box(proposal, image));

  const double ex = config.steps * config.step_frac * proposal.width();
  const double ey = config.steps * config.step_frac * proposal.height();
  for (int d = 0; d < k; ++d) {
    const auto [dx, dy] = expansion_direction(d, k);
    Box b = proposal;
    if (config.mode == ExpansionMode::extend_faces) {
      if (dx > 0) b.x2 += ex;
      if (dx < 0) b.x1 -= ex;
      if (dy > 0) b.y2 += ey;
      if (dy < 0) b.y1 -= ey;
    } else {
      b.x1 += dx * ex;
      b.x2 += dx * ex;
      b.y1 += dy * ey;
      b.y2 += dy * ey;
    }
    out.push_back(clip_box(b, image));
  }
  return out;
}

BoxDeltas encode_deltas(const Box& anchor, const Box& target) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  if (!(wa > 0.0 && ha > 0.0)) throw std::invalid_argument("encode_deltas: anchor has no area");
  const double w = target.width();
  const double h = target.height();
  if (!(w > 0.0 && h > 0.0))
    throw std::invalid_argument("encode_deltas: target box has non-positive size (invalid annotation)");
  return {(target.center_x() - anchor.center_x()) / wa, (target.center_y() - anchor.center_y()) / ha,
          std::log(w / wa), std::log(h / ha)};
}

Box apply_deltas(const Box& anchor, const BoxDeltas& d) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  if (!(wa > 0.0 && ha > 0.0)) throw std::invalid_argument("apply_deltas: anchor has no area");
  const double cx = anchor.center_x() + d.dx * wa;
  const double cy = anchor.center_y() + d.dy * ha;
  const double w = wa * std::exp(d.dw);
  const double h = ha * std::exp(d.dh);
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace o2r
