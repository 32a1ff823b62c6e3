#include "o2rnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "o2rnet/rng.hpp"

namespace o2r {

using json = nlohmann::json;
namespace fs = std::filesystem;

void Annotation::validate() const {
  if (labels.size() != boxes.size() || occluded.size() != boxes.size())
    throw std::invalid_argument("annotation '" + image_id + "': boxes, labels and occluded differ in length");
  for (const auto& b : boxes)
    if (!b.valid()) throw std::invalid_argument("annotation '" + image_id + "': invalid box");
}

std::vector<bool> label_occlusion_cases(std::span<const Box> boxes, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("label_occlusion_cases: tau must lie in (0,1)");
  std::vector<bool> flags(boxes.size(), false);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double area = boxes[i].area();
    if (area <= 0.0) continue;
    for (std::size_t j = 0; j < boxes.size() && !flags[i]; ++j) {
      if (i == j) continue;
      if (intersection_area(boxes[i], boxes[j]) / area >= tau) flags[i] = true;
    }
  }
  return flags;
}

double intersection_over_smaller(const Box& a, const Box& b) {
  const double smaller = std::min(a.area(), b.area());
  if (smaller <= 0.0) return 0.0;
  return intersection_area(a, b) / smaller;
}

// --- VGG ---------------------------------------------------------------------

namespace {

double number_field(const json& obj, const char* key, const std::string& entry) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number())
    throw std::runtime_error("VGG entry '" + entry + "': region is missing numeric '" + key + "'");
  return it->get<double>();
}

}  // namespace

VggLoadResult parse_vgg_annotations(const std::string& text, const VggLoadOptions& options) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("malformed VGG JSON: ") + e.what());
  }
  if (root.contains("_via_img_metadata")) root = root["_via_img_metadata"];
  if (!root.is_object()) throw std::runtime_error("malformed VGG JSON: top level must be an object of image entries");

  VggLoadResult result;
  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string& key = it.key();
    const json& entry = it.value();
    if (!entry.is_object() || !entry.contains("filename") || !entry["filename"].is_string())
      throw std::runtime_error("VGG entry '" + key + "': missing 'filename'");

    ImageRecord rec;
    rec.image_id = entry["filename"].get<std::string>();
    rec.annotation.image_id = rec.image_id;
    if (!options.image_dir.empty()) rec.image_path = options.image_dir / rec.image_id;

    json regions = entry.value("regions", json::array());
    if (regions.is_object()) {
      // VIA 1.x stores regions as an object keyed by index.
      json arr = json::array();
      for (auto& [_, r] : regions.items()) arr.push_back(r);
      regions = std::move(arr);
    }
    if (!regions.is_array()) throw std::runtime_error("VGG entry '" + key + "': 'regions' must be a list");

    for (const auto& region : regions) {
      if (!region.is_object() || !region.contains("shape_attributes"))
        throw std::runtime_error("VGG entry '" + key + "': region without 'shape_attributes'");
      const json& shape = region["shape_attributes"];
      const std::string name = shape.value("name", std::string{});
      if (name != "rect") {
        ++result.warnings;
        result.messages.push_back("entry '" + key + "': skipped non-rect region '" + name + "'");
        continue;
      }
      const double x = number_field(shape, "x", key);
      const double y = number_field(shape, "y", key);
      const double w = number_field(shape, "width", key);
      const double h = number_field(shape, "height", key);
      if (!(w > 0.0 && h > 0.0)) {
        ++result.warnings;
        result.messages.push_back("entry '" + key + "': dropped zero-area region");
        continue;
      }
      rec.annotation.boxes.push_back({x, y, x + w, y + h});
      rec.annotation.labels.push_back(kAppleLabel);
    }

    if (options.load_pixels) {
      rec.image = read_image(rec.image_path);
      for (auto& b : rec.annotation.boxes) b = clip_box(b, rec.size());
    }
    rec.annotation.occluded = label_occlusion_cases(rec.annotation.boxes, options.tau_occ);
    result.records.push_back(std::move(rec));
  }
  return result;
}

VggLoadResult load_vgg_annotations(const fs::path& path, const VggLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open VGG annotation file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  VggLoadOptions opts = options;
  if (opts.image_dir.empty()) opts.image_dir = path.parent_path();
  return parse_vgg_annotations(ss.str(), opts);
}

std::string to_vgg_json(std::span<const ImageRecord> records) {
  json root = json::object();
  for (const auto& rec : records) {
    const std::string filename =
        rec.image_path.empty() ? rec.image_id : rec.image_path.filename().string();
    json regions = json::array();
    for (const auto& b : rec.annotation.boxes) {
      regions.push_back({{"shape_attributes",
                          {{"name", "rect"}, {"x", b.x1}, {"y", b.y1}, {"width", b.width()}, {"height", b.height()}}},
                         {"region_attributes", {{"label", "apple"}}}});
    }
    root[filename + "-1"] = {{"filename", filename}, {"size", -1}, {"regions", regions}, {"file_attributes", json::object()}};
  }
  return root.dump(2);
}

void save_vgg_annotations(const fs::path& path, std::span<const ImageRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << to_vgg_json(records) << '\n';
}

// --- Synthetic scenes ----------------------------------------------------------

void SynthConfig::validate() const {
  if (image_size.width < 32 || image_size.height < 32)
    throw std::invalid_argument("synth: image must be at least 32x32");
  if (min_objects < 0 || max_objects < min_objects)
    throw std::invalid_argument("synth: objects_per_image range is empty");
  if (!(min_radius > 0.0) || max_radius < min_radius)
    throw std::invalid_argument("synth: radius range is empty");
  if (2.0 * max_radius > std::min(image_size.width, image_size.height))
    throw std::invalid_argument("synth: radius too large for image");
  if (!(overlap_target >= 0.0 && overlap_target < 1.0))
    throw std::invalid_argument("synth: overlap_target must lie in [0,1)");
  if (!(cluster_fraction >= 0.0 && cluster_fraction <= 1.0))
    throw std::invalid_argument("synth: cluster_fraction must lie in [0,1]");
  if (max_retries <= 0) throw std::invalid_argument("synth: max_retries must be positive");
}

namespace {

struct Disc {
  double cx, cy, r;
  std::array<double, 3> color;
  Box box() const { return {cx - r, cy - r, cx + r, cy + r}; }
};

bool inside(const Box& b, ImageSize s) {
  return b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= s.width && b.y2 <= s.height;
}

// Distance along `theta` at which the two boxes reach the target overlap.
double solve_offset(double r_new, double r_partner, double theta, double target) {
  const double c = std::cos(theta), s = std::sin(theta);
  auto ios = [&](double d) {
    Box p{-r_partner, -r_partner, r_partner, r_partner};
    Box q{d * c - r_new, d * s - r_new, d * c + r_new, d * s + r_new};
    return intersection_over_smaller(p, q);
  };
  double lo = 0.0, hi = 2.0 * (r_new + r_partner) * std::sqrt(2.0);
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ios(mid) > target) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::array<double, 3> palette_color(Palette p, Rng& rng) {
  if (p == Palette::red)
    return {rng.uniform(170, 225), rng.uniform(20, 60), rng.uniform(25, 55)};
  return {rng.uniform(200, 235), rng.uniform(185, 220), rng.uniform(50, 90)};
}

// Low-frequency value noise in [0,1) sampled on a coarse grid.
std::vector<double> value_noise(int w, int h, int cells, Rng& rng) {
  std::vector<double> grid(static_cast<std::size_t>(cells + 1) * (cells + 1));
  for (auto& g : grid) g = rng.uniform();
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const double gy = static_cast<double>(y) / h * cells;
    const int y0 = std::min(static_cast<int>(gy), cells - 1);
    const double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      const double gx = static_cast<double>(x) / w * cells;
      const int x0 = std::min(static_cast<int>(gx), cells - 1);
      const double fx = gx - x0;
      auto g = [&](int i, int j) { return grid[static_cast<std::size_t>(j) * (cells + 1) + i]; };
      const double top = (1 - fx) * g(x0, y0) + fx * g(x0 + 1, y0);
      const double bot = (1 - fx) * g(x0, y0 + 1) + fx * g(x0 + 1, y0 + 1);
      out[static_cast<std::size_t>(y) * w + x] = (1 - fy) * top + fy * bot;
    }
  }
  return out;
}

void render_background(Image& img, Rng& rng) {
  const int w = img.width, h = img.height;
  const auto coarse = value_noise(w, h, 4, rng);
  const auto fine = value_noise(w, h, 16, rng);
  const std::array<double, 3> base{rng.uniform(45, 75), rng.uniform(90, 125), rng.uniform(35, 60)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = 0.6 + 0.5 * coarse[i] + 0.3 * fine[i];
      const double grain = rng.normal(0.0, 6.0);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = saturate_u8(base[c] * m + grain);
    }
  }
  // Leaf-like elongated blobs.
  const int leaves = rng.uniform_int(6, 14);
  for (int l = 0; l < leaves; ++l) {
    const double cx = rng.uniform(0, w), cy = rng.uniform(0, h);
    const double a = rng.uniform(8, 22), b = rng.uniform(3, 8);
    const double ang = rng.uniform(0, std::numbers::pi);
    const double tone = rng.uniform(0.6, 1.4);
    const double ca = std::cos(ang), sa = std::sin(ang);
    const int x0 = std::max(0, static_cast<int>(cx - a)), x1 = std::min(w - 1, static_cast<int>(cx + a));
    const int y0 = std::max(0, static_cast<int>(cy - a)), y1 = std::min(h - 1, static_cast<int>(cy + a));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        const double u = (dx * ca + dy * sa) / a, v = (-dx * sa + dy * ca) / b;
        if (u * u + v * v > 1.0) continue;
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = saturate_u8(img.at(x, y, c) * tone);
      }
    }
  }
}

void render_disc(Image& img, const Disc& d) {
  const int x0 = std::max(0, static_cast<int>(std::floor(d.cx - d.r)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(d.cx + d.r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(d.cy - d.r)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(d.cy + d.r)));
  constexpr double sub[2] = {0.25, 0.75};
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      int covered = 0;
      for (double sy : sub)
        for (double sx : sub) {
          const double u = (x + sx - d.cx) / d.r, v = (y + sy - d.cy) / d.r;
          if (u * u + v * v <= 1.0) ++covered;
        }
      if (covered == 0) continue;
      const double u = (x + 0.5 - d.cx) / d.r, v = (y + 0.5 - d.cy) / d.r;
      const double rr = std::min(1.0, u * u + v * v);
      const double shade = 0.45 + 0.55 * std::sqrt(1.0 - rr);
      const double spec = 70.0 * std::exp(-((u + 0.35) * (u + 0.35) + (v + 0.4) * (v + 0.4)) / 0.04);
      const double alpha = covered / 4.0;
      for (int c = 0; c < 3; ++c) {
        const double fg = d.color[c] * shade + spec;
        img.at(x, y, c) = saturate_u8(alpha * fg + (1.0 - alpha) * img.at(x, y, c));
      }
    }
  }
}

}  // namespace

SynthScene generate_synthetic_scene_detailed(const SynthConfig& config, std::uint64_t index) {
  config.validate();
  Rng rng(derive_seed(config.seed, index, 0x5eed));
  const ImageSize size = config.image_size;

  SynthScene scene;
  std::vector<Disc> discs;
  const int n = rng.uniform_int(config.min_objects, config.max_objects);
  for (int i = 0; i < n; ++i) {
    const bool clustered = !discs.empty() && rng.bernoulli(config.cluster_fraction);
    bool placed = false;
    for (int attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
      Disc d{};
      d.r = rng.uniform(config.min_radius, config.max_radius);
      int partner = -1;
      if (clustered) {
        partner = rng.uniform_int(0, static_cast<int>(discs.size()) - 1);
        const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const Disc& p = discs[static_cast<std::size_t>(partner)];
        const double dist = solve_offset(d.r, p.r, theta, config.overlap_target);
        d.cx = p.cx + dist * std::cos(theta);
        d.cy = p.cy + dist * std::sin(theta);
      } else {
        d.cx = rng.uniform(d.r, size.width - d.r);
        d.cy = rng.uniform(d.r, size.height - d.r);
      }
      const Box b = d.box();
      if (!inside(b, size)) continue;
      bool clear = true;
      for (std::size_t j = 0; j < discs.size() && clear; ++j) {
        if (static_cast<int>(j) == partner) continue;
        if (intersection_area(b, discs[j].box()) > 0.0) clear = false;
      }
      if (!clear) continue;
      d.color = palette_color(config.palette, rng);
      if (partner >= 0) scene.cluster_pairs.emplace_back(partner, static_cast<int>(discs.size()));
      discs.push_back(d);
      placed = true;
    }
    if (!placed) ++scene.warnings;
  }

  ImageRecord& rec = scene.record;
  rec.image_id = "synth_" + std::to_string(config.seed) + "_" + std::to_string(index);
  rec.image = Image(size.width, size.height);
  render_background(rec.image, rng);
  for (const auto& d : discs) render_disc(rec.image, d);

  rec.annotation.image_id = rec.image_id;
  for (const auto& d : discs) {
    rec.annotation.boxes.push_back(d.box());
    rec.annotation.labels.push_back(kAppleLabel);
  }
  rec.annotation.occluded = label_occlusion_cases(rec.annotation.boxes, kDefaultOcclusionTau);
  return scene;
}

ImageRecord generate_synthetic_scene(const SynthConfig& config, std::uint64_t index) {
  return generate_synthetic_scene_detailed(config, index).record;
}

std::vector<ImageRecord> generate_synthetic_dataset(const SynthConfig& config, std::size_t count,
                                                    std::uint64_t first_index) {
  std::vector<ImageRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_synthetic_scene(config, first_index + i));
  return out;
}

// --- Splits ------------------------------------------------------------------------

SplitIndices split_indices(std::size_t count, std::array<double, 3> fractions, std::uint64_t seed) {
  double sum = 0.0;
  int nonzero = 0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("split: fractions must be non-negative");
    sum += f;
    if (f > 0.0) ++nonzero;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  if (count < static_cast<std::size_t>(nonzero))
    throw std::invalid_argument("split: fewer records than non-empty splits");

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, count, 0x5417));
  rng.shuffle(order);

  auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(count)));
  auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(count)));
  n_train = std::min(n_train, count);
  n_val = std::min(n_val, count - n_train);
  // Keep every requested split non-empty.
  if (fractions[2] > 0.0 && n_train + n_val == count) {
    if (n_train > n_val && n_train > 1) --n_train; else if (n_val > 0) --n_val;
  }
  if (fractions[1] > 0.0 && n_val == 0 && n_train > 1) { --n_train; ++n_val; }

  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

DatasetSplit split_dataset(std::span<const ImageRecord> records, std::array<double, 3> fractions,
                           std::uint64_t seed) {
  const auto idx = split_indices(records.size(), fractions, seed);
  DatasetSplit out;
  for (auto i : idx.train) out.train.push_back(records[i]);
  for (auto i : idx.val) out.val.push_back(records[i]);
  for (auto i : idx.test) out.test.push_back(records[i]);
  return out;
}

// --- Manifest ----------------------------------------------------------------------

std::string manifest_line(const ImageRecord& rec, const fs::path& base_dir) {
  json boxes = json::array();
  for (const auto& b : rec.annotation.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
  std::string image = rec.image_path.generic_string();
  if (!base_dir.empty() && !rec.image_path.empty()) {
    std::error_code ec;
    auto rel = fs::relative(rec.image_path, base_dir, ec);
    if (!ec && !rel.empty()) image = rel.generic_string();
  }
  std::vector<bool> occ = rec.annotation.occluded;
  json j = {{"image_id", rec.image_id},
            {"image", image},
            {"width", rec.image.width},
            {"height", rec.image.height},
            {"boxes", boxes},
            {"labels", rec.annotation.labels},
            {"occluded", occ}};
  return j.dump();
}

void write_manifest(const fs::path& path, std::span<const ImageRecord> records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  for (const auto& rec : records) out << manifest_line(rec, base) << '\n';
}

std::vector<ImageRecord> read_manifest(const fs::path& path, bool load_pixels) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  std::vector<ImageRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      ImageRecord rec;
      rec.image_id = j.at("image_id").get<std::string>();
      const std::string image = j.value("image", std::string{});
      if (!image.empty()) {
        fs::path p(image);
        rec.image_path = p.is_absolute() ? p : path.parent_path() / p;
      }
      rec.annotation.image_id = rec.image_id;
      for (const auto& b : j.at("boxes"))
        rec.annotation.boxes.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                        b.at(3).get<double>()});
      rec.annotation.labels = j.at("labels").get<std::vector<int>>();
      rec.annotation.occluded = j.at("occluded").get<std::vector<bool>>();
      rec.annotation.validate();
      if (load_pixels && !rec.image_path.empty()) {
        rec.image = read_image(rec.image_path);
      } else {
        rec.image.width = j.value("width", 0);
        rec.image.height = j.value("height", 0);
      }
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace o2r
