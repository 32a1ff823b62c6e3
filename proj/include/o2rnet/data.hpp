#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "o2rnet/geometry.hpp"
#include "o2rnet/image.hpp"

namespace o2r {

inline constexpr int kBackgroundLabel = 0;
inline constexpr int kAppleLabel = 1;
inline constexpr double kDefaultOcclusionTau = 0.05;

struct Annotation {
  std::string image_id;
  std::vector<Box> boxes;
  std::vector<int> labels;
  std::vector<bool> occluded;

  std::size_t size() const { return boxes.size(); }
  void validate() const;
};

struct ImageRecord {
  std::string image_id;
  std::filesystem::path image_path;  // empty for in-memory scenes
  Image image;
  Annotation annotation;

  ImageSize size() const { return {image.width, image.height}; }
};

/// Box i is an occlusion case when some other box covers at least `tau` of
/// its own area.
std::vector<bool> label_occlusion_cases(std::span<const Box> boxes, double tau = kDefaultOcclusionTau);

// --- VGG Image Annotator -----------------------------------------------------

struct VggLoadOptions {
  bool load_pixels = false;
  std::filesystem::path image_dir;  // defaults to the JSON file's directory
  double tau_occ = kDefaultOcclusionTau;
};

struct VggLoadResult {
  std::vector<ImageRecord> records;
  int warnings = 0;
  std::vector<std::string> messages;
};

VggLoadResult load_vgg_annotations(const std::filesystem::path& path, const VggLoadOptions& options = {});
VggLoadResult parse_vgg_annotations(const std::string& json_text, const VggLoadOptions& options = {});
std::string to_vgg_json(std::span<const ImageRecord> records);
void save_vgg_annotations(const std::filesystem::path& path, std::span<const ImageRecord> records);

// --- Synthetic clustered scenes ----------------------------------------------

enum class Palette { red, yellow };

struct SynthConfig {
  ImageSize image_size{256, 256};
  int min_objects = 2;
  int max_objects = 6;
  double min_radius = 12.0;
  double max_radius = 24.0;
  double overlap_target = 0.3;   // intersection over smaller box area within a cluster
  double cluster_fraction = 0.5;
  std::uint64_t seed = 0;
  Palette palette = Palette::red;
  int max_retries = 64;

  void validate() const;
};

struct SynthScene {
  ImageRecord record;
  std::vector<std::pair<int, int>> cluster_pairs;  // (partner, placed) box indices
  int warnings = 0;
};

SynthScene generate_synthetic_scene_detailed(const SynthConfig& config, std::uint64_t index);
ImageRecord generate_synthetic_scene(const SynthConfig& config, std::uint64_t index);
std::vector<ImageRecord> generate_synthetic_dataset(const SynthConfig& config, std::size_t count,
                                                    std::uint64_t first_index = 0);

/// Intersection over the smaller of the two box areas.
double intersection_over_smaller(const Box& a, const Box& b);

// --- Splits ------------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

SplitIndices split_indices(std::size_t count, std::array<double, 3> fractions, std::uint64_t seed);

struct DatasetSplit {
  std::vector<ImageRecord> train, val, test;
};

DatasetSplit split_dataset(std::span<const ImageRecord> records, std::array<double, 3> fractions,
                           std::uint64_t seed);

// --- Manifest (JSON lines) ---------------------------------------------------

/// Image paths are written relative to the manifest directory when possible.
void write_manifest(const std::filesystem::path& path, std::span<const ImageRecord> records);
std::string manifest_line(const ImageRecord& record, const std::filesystem::path& base_dir = {});
std::vector<ImageRecord> read_manifest(const std::filesystem::path& path, bool load_pixels = true);

}  // namespace o2r
