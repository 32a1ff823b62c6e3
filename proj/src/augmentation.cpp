#include "o2rnet/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "o2rnet/rng.hpp"

namespace o2r {

namespace {

void check_range(double lo, double hi, const char* what) {
  if (!(lo <= hi)) throw std::invalid_argument(std::string("augment: range '") + what + "' is not ordered");
}

void check_prob(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("augment: probability '") + what + "' outside [0,1]");
}

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

void AugmentSpec::validate() const {
  const auto& g = geometric_ranges;
  check_prob(g.probability, "geometric.probability");
  check_prob(g.hflip_prob, "geometric.hflip_prob");
  check_prob(g.vflip_prob, "geometric.vflip_prob");
  check_range(0.0, g.max_rotation_deg, "geometric.rotation");
  check_range(g.min_scale, g.max_scale, "geometric.scale");
  if (!(g.min_scale > 0.0)) throw std::invalid_argument("augment: scale must be positive");
  check_range(0.0, g.max_translate_frac, "geometric.translate");
  check_range(0.0, g.max_shear_deg, "geometric.shear");
  check_prob(color_ranges.probability, "color.probability");
  check_range(color_ranges.min_brightness, color_ranges.max_brightness, "color.brightness");
  check_range(color_ranges.min_contrast, color_ranges.max_contrast, "color.contrast");
  if (!(color_ranges.min_contrast >= 0.0)) throw std::invalid_argument("augment: contrast must be non-negative");
  check_prob(filter_ranges.noise_probability, "filters.noise_probability");
  check_prob(filter_ranges.sharpen_probability, "filters.sharpen_probability");
  check_range(0.0, filter_ranges.max_noise_sigma, "filters.noise_sigma");
  check_range(0.0, filter_ranges.max_sharpen_strength, "filters.sharpen_strength");
  check_prob(mixup_ranges.probability, "mixup.probability");
  check_range(mixup_ranges.min_alpha, mixup_ranges.max_alpha, "mixup.alpha");
  check_prob(mixup_ranges.min_alpha, "mixup.min_alpha");
  check_prob(mixup_ranges.max_alpha, "mixup.max_alpha");
}

AugmentSpec AugmentSpec::best_combination() {
  AugmentSpec s;
  s.geometric = s.color = s.mixup = true;
  return s;
}

AugmentSpec AugmentSpec::all_families() {
  AugmentSpec s = best_combination();
  s.gaussian_noise = s.sharpen = true;
  return s;
}

// --- Geometric ---------------------------------------------------------------

Affine geometric_matrix(const GeometricParams& p, ImageSize size) {
  const double cx = 0.5 * size.width;
  const double cy = 0.5 * size.height;
  const double fx = p.hflip ? -1.0 : 1.0;
  const double fy = p.vflip ? -1.0 : 1.0;
  const double sh = std::tan(deg2rad(p.shear_deg));
  const double c = std::cos(deg2rad(p.rotation_deg));
  const double s = std::sin(deg2rad(p.rotation_deg));
  // A = R * Shear * Scale * Flip
  // Shear * Scale * Flip = [[k*fx, sh*k*fy], [0, k*fy]]
  const double k = p.scale;
  const double m00 = k * fx, m01 = sh * k * fy, m10 = 0.0, m11 = k * fy;
  const double a00 = c * m00 + s * m10, a01 = c * m01 + s * m11;
  const double a10 = -s * m00 + c * m10, a11 = -s * m01 + c * m11;
  const double tx = cx + p.translate_x - (a00 * cx + a01 * cy);
  const double ty = cy + p.translate_y - (a10 * cx + a11 * cy);
  return {a00, a01, tx, a10, a11, ty};
}

std::pair<double, double> apply_affine(const Affine& m, double x, double y) {
  return {m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5]};
}

Box transform_box(const Affine& m, const Box& b) {
  const std::array<std::pair<double, double>, 4> corners{
      apply_affine(m, b.x1, b.y1), apply_affine(m, b.x2, b.y1), apply_affine(m, b.x1, b.y2),
      apply_affine(m, b.x2, b.y2)};
  Box out{corners[0].first, corners[0].second, corners[0].first, corners[0].second};
  for (const auto& [x, y] : corners) {
    out.x1 = std::min(out.x1, x);
    out.y1 = std::min(out.y1, y);
    out.x2 = std::max(out.x2, x);
    out.y2 = std::max(out.y2, y);
  }
  return out;
}

ImageRecord apply_geometric(const ImageRecord& record, const GeometricParams& params) {
  const GeometricParams identity{};
  if (params.rotation_deg == identity.rotation_deg && params.scale == identity.scale &&
      params.translate_x == 0.0 && params.translate_y == 0.0 && params.shear_deg == 0.0 && !params.hflip &&
      !params.vflip)
    return record;

  const ImageSize size = record.size();
  const Affine m = geometric_matrix(params, size);
  const double det = m[0] * m[4] - m[1] * m[3];
  if (std::abs(det) < 1e-12) throw std::invalid_argument("apply_geometric: singular transform");
  // Inverse map destination -> source.
  const double i00 = m[4] / det, i01 = -m[1] / det, i10 = -m[3] / det, i11 = m[0] / det;

  ImageRecord out = record;
  const Image& src = record.image;
  Image& dst = out.image;
  for (int v = 0; v < size.height; ++v) {
    for (int u = 0; u < size.width; ++u) {
      const double px = u + 0.5 - m[2], py = v + 0.5 - m[5];
      const double sx = i00 * px + i01 * py - 0.5;
      const double sy = i10 * px + i11 * py - 0.5;
      if (sx < -0.5 || sy < -0.5 || sx > src.width - 0.5 || sy > src.height - 0.5) {
        for (int c = 0; c < 3; ++c) dst.at(u, v, c) = 0;
        continue;
      }
      for (int c = 0; c < 3; ++c) dst.at(u, v, c) = saturate_u8(sample_bilinear(src, sx, sy, c));
    }
  }

  Annotation ann;
  ann.image_id = record.annotation.image_id;
  for (std::size_t i = 0; i < record.annotation.size(); ++i) {
    const Box b = clip_box(transform_box(m, record.annotation.boxes[i]), size);
    if (b.width() <= 0.0 || b.height() <= 0.0) continue;
    ann.boxes.push_back(b);
    ann.labels.push_back(record.annotation.labels[i]);
    ann.occluded.push_back(record.annotation.occluded[i]);
  }
  out.annotation = std::move(ann);
  return out;
}

// --- Color & filters -----------------------------------------------------------

ImageRecord apply_color(const ImageRecord& record, const ColorParams& params) {
  ImageRecord out = record;
  if (params.gain == 1.0 && params.offset == 0.0) return out;
  for (auto& p : out.image.pixels)
    p = saturate_u8(params.gain * (static_cast<double>(p) - 128.0) + 128.0 + params.offset);
  return out;
}

ImageRecord apply_pixel_filters(const ImageRecord& record, const FilterParams& params) {
  if (params.noise_sigma < 0.0 || params.sharpen_strength < 0.0)
    throw std::invalid_argument("apply_pixel_filters: negative sigma or strength");
  ImageRecord out = record;
  const Image& src = record.image;
  Image& dst = out.image;
  const int w = src.width, h = src.height;

  if (params.sharpen_strength > 0.0) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          double sum = 0.0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              sum += src.at(std::clamp(x + dx, 0, w - 1), std::clamp(y + dy, 0, h - 1), c);
          const double v = src.at(x, y, c);
          dst.at(x, y, c) = saturate_u8(v + params.sharpen_strength * (v - sum / 9.0));
        }
      }
    }
  }
  if (params.noise_sigma > 0.0) {
    Rng rng(params.noise_seed);
    for (auto& p : dst.pixels) p = saturate_u8(p + rng.normal(0.0, params.noise_sigma));
  }
  return out;
}

// --- Mixup -----------------------------------------------------------------------

ImageRecord mixup(const ImageRecord& a, const ImageRecord& b_in, double alpha, double tau_occ) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("mixup: alpha must lie in [0,1]");
  ImageRecord b = b_in;
  if (b.image.width != a.image.width || b.image.height != a.image.height) {
    const double sx = static_cast<double>(a.image.width) / b.image.width;
    const double sy = static_cast<double>(a.image.height) / b.image.height;
    b.image = resize_bilinear(b.image, a.image.width, a.image.height);
    for (auto& box : b.annotation.boxes) box = {box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy};
  }

  ImageRecord out = a;
  // Integer weights out of 1024 make the blend exactly symmetric under
  // (a, b, alpha) <-> (b, a, 1 - alpha).
  const auto wa = static_cast<std::uint32_t>(std::lround(alpha * 1024.0));
  const std::uint32_t wb = 1024u - wa;
  for (std::size_t i = 0; i < out.image.pixels.size(); ++i) {
    const std::uint32_t num = wa * a.image.pixels[i] + wb * b.image.pixels[i];
    out.image.pixels[i] = static_cast<std::uint8_t>((num + 512u) >> 10);
  }

  Annotation& ann = out.annotation;
  ann.boxes.insert(ann.boxes.end(), b.annotation.boxes.begin(), b.annotation.boxes.end());
  ann.labels.insert(ann.labels.end(), b.annotation.labels.begin(), b.annotation.labels.end());
  ann.occluded = label_occlusion_cases(ann.boxes, tau_occ);
  return out;
}

// --- Pipeline ----------------------------------------------------------------------

ImageRecord augment_pipeline(const ImageRecord& record, const AugmentSpec& spec, std::uint64_t draw_index,
                             std::span<const ImageRecord> mix_pool) {
  spec.validate();
  if (!spec.any_enabled()) return record;
  Rng rng(derive_seed(spec.seed, draw_index, 0xA06));

  ImageRecord cur = record;
  if (spec.mixup && !mix_pool.empty()) {
    const auto& r = spec.mixup_ranges;
    if (rng.bernoulli(r.probability)) {
      const int j = rng.uniform_int(0, static_cast<int>(mix_pool.size()) - 1);
      const double alpha = rng.uniform(r.min_alpha, r.max_alpha);
      cur = mixup(cur, mix_pool[static_cast<std::size_t>(j)], alpha, spec.tau_occ);
    }
  }
  if (spec.geometric) {
    const auto& g = spec.geometric_ranges;
    if (rng.bernoulli(g.probability)) {
      GeometricParams p;
      p.rotation_deg = rng.uniform(-g.max_rotation_deg, g.max_rotation_deg);
      p.scale = rng.uniform(g.min_scale, g.max_scale);
      p.translate_x = rng.uniform(-g.max_translate_frac, g.max_translate_frac) * cur.image.width;
      p.translate_y = rng.uniform(-g.max_translate_frac, g.max_translate_frac) * cur.image.height;
      p.shear_deg = rng.uniform(-g.max_shear_deg, g.max_shear_deg);
      p.hflip = rng.bernoulli(g.hflip_prob);
      p.vflip = rng.bernoulli(g.vflip_prob);
      cur = apply_geometric(cur, p);
      cur.annotation.occluded = label_occlusion_cases(cur.annotation.boxes, spec.tau_occ);
    }
  }
  if (spec.color) {
    const auto& c = spec.color_ranges;
    if (rng.bernoulli(c.probability)) {
      ColorParams p;
      p.gain = rng.uniform(c.min_contrast, c.max_contrast);
      p.offset = rng.uniform(c.min_brightness, c.max_brightness);
      cur = apply_color(cur, p);
    }
  }
  if (spec.gaussian_noise || spec.sharpen) {
    const auto& f = spec.filter_ranges;
    FilterParams p;
    if (spec.sharpen && rng.bernoulli(f.sharpen_probability))
      p.sharpen_strength = rng.uniform(0.0, f.max_sharpen_strength);
    if (spec.gaussian_noise && rng.bernoulli(f.noise_probability)) {
      p.noise_sigma = rng.uniform(0.0, f.max_noise_sigma);
      p.noise_seed = rng.next();
    }
    cur = apply_pixel_filters(cur, p);
  }
  return cur;
}

}  // namespace o2r
