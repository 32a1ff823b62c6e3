#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace o2r {

/// Axis-aligned box in continuous pixel coordinates (origin top-left).
/// Area is (x2 - x1) * (y2 - y1); there is no +1 pixel correction.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const;
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const;
  bool contains(const Box& other, double tol = 0.0) const;

  friend bool operator==(const Box&, const Box&) = default;
};

enum class Branch { occluder, occludee };

std::string_view branch_name(Branch b);
Branch parse_branch(std::string_view s);

struct ScoredBox {
  Box box;
  double score = 0.0;
  int label = 1;
  Branch branch = Branch::occluder;
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct AnchorConfig {
  std::vector<int> strides{8};
  std::vector<double> scales{24.0, 40.0, 64.0};
  std::vector<double> aspect_ratios{1.0};

  void validate() const;
  // Scales assigned to a given pyramid level. With one stride every scale is
  // used; with one scale per stride each level gets its own.
  std::vector<double> scales_for_level(std::size_t level) const;
  std::size_t anchors_per_cell(std::size_t level) const;
};

enum class ExpansionMode { extend_faces, translate };

struct FesConfig {
  int steps = 1;        // t
  int directions = 8;   // k
  double step_frac = 0.1;
  ExpansionMode mode = ExpansionMode::extend_faces;

  void validate() const;
};

struct BoxDeltas {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

double intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

/// Greedy NMS. Ties at equal score keep input order. Returns indices into
/// `boxes`, sorted by descending score.
std::vector<std::size_t> nms_indices(std::span<const Box> boxes,
                                     std::span<const double> scores,
                                     double iou_threshold);

std::vector<ScoredBox> nms(std::span<const ScoredBox> candidates, double iou_threshold);

/// Anchors ordered by (row, col, scale, ratio), centered on cell centers.
std::vector<Box> generate_anchors(int rows, int cols, std::span<const double> scales,
                                  std::span<const double> aspect_ratios, int stride);
std::vector<Box> generate_anchors(int rows, int cols, const AnchorConfig& config, int stride);

Box clip_box(const Box& b, ImageSize size);

/// Unit compass offsets (dx, dy) for direction `index` out of `directions`,
/// counter-clockwise from east with y pointing down. Components are -1, 0 or 1.
std::pair<int, int> expansion_direction(int index, int directions);

/// Returns k+1 boxes: the clipped proposal followed by one outward expansion
/// per direction.
std::vector<Box> fes_expand(const Box& proposal, const FesConfig& config, ImageSize image);

BoxDeltas encode_deltas(const Box& anchor, const Box& target);
Box apply_deltas(const Box& anchor, const BoxDeltas& deltas);

}  // namespace o2r
