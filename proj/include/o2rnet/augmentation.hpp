#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "o2rnet/data.hpp"

namespace o2r {

// Rotation and shear are kept small: the corner-hull box rule inflates a box by
// up to cos(a) + sin(a) under rotation, which teaches loose boxes.
struct GeometricRanges {
  double probability = 1.0;
  double max_rotation_deg = 5.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_translate_frac = 0.1;
  double max_shear_deg = 2.0;
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
};

struct ColorRanges {
  double probability = 1.0;
  double min_brightness = -25.0;
  double max_brightness = 25.0;
  double min_contrast = 0.8;
  double max_contrast = 1.2;
};

struct FilterRanges {
  double noise_probability = 1.0;
  double max_noise_sigma = 8.0;
  double sharpen_probability = 1.0;
  double max_sharpen_strength = 0.5;
};

// Both images stay clearly visible, since every box of both keeps a full-weight label.
struct MixupRanges {
  double probability = 0.5;
  double min_alpha = 0.4;
  double max_alpha = 0.6;
};

struct AugmentSpec {
  bool geometric = false;
  bool color = false;
  bool gaussian_noise = false;
  bool mixup = false;
  bool sharpen = false;
  GeometricRanges geometric_ranges;
  ColorRanges color_ranges;
  FilterRanges filter_ranges;
  MixupRanges mixup_ranges;
  double tau_occ = kDefaultOcclusionTau;
  std::uint64_t seed = 0;

  bool any_enabled() const { return geometric || color || gaussian_noise || mixup || sharpen; }
  void validate() const;

  static AugmentSpec none() { return {}; }
  /// Geometric + color + mixup, the strongest combination in the reference ablation.
  static AugmentSpec best_combination();
  static AugmentSpec all_families();
};

struct GeometricParams {
  double rotation_deg = 0.0;  // counter-clockwise on screen
  double scale = 1.0;
  double translate_x = 0.0;   // pixels
  double translate_y = 0.0;
  double shear_deg = 0.0;
  bool hflip = false;
  bool vflip = false;
};

/// Row-major 2x3 forward map from source to destination pixel coordinates.
using Affine = std::array<double, 6>;

Affine geometric_matrix(const GeometricParams& params, ImageSize size);
std::pair<double, double> apply_affine(const Affine& m, double x, double y);

/// Axis-aligned bounds of the four transformed corners (unclipped).
Box transform_box(const Affine& m, const Box& b);

ImageRecord apply_geometric(const ImageRecord& record, const GeometricParams& params);

struct ColorParams {
  double gain = 1.0;
  double offset = 0.0;
};

ImageRecord apply_color(const ImageRecord& record, const ColorParams& params);

struct FilterParams {
  double noise_sigma = 0.0;
  double sharpen_strength = 0.0;
  std::uint64_t noise_seed = 0;
};

ImageRecord apply_pixel_filters(const ImageRecord& record, const FilterParams& params);

/// Pixel blend alpha*a + (1-alpha)*b with the union of both annotations.
/// `b` is resized to a's dimensions when they differ.
ImageRecord mixup(const ImageRecord& a, const ImageRecord& b, double alpha,
                  double tau_occ = kDefaultOcclusionTau);

/// Applies the enabled families in order mixup -> geometric -> color -> filters.
/// The mixup partner is drawn from `mix_pool` (mixup is skipped when empty).
ImageRecord augment_pipeline(const ImageRecord& record, const AugmentSpec& spec, std::uint64_t draw_index,
                             std::span<const ImageRecord> mix_pool = {});

}  // namespace o2r
