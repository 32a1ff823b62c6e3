#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "o2rnet/backbone.hpp"
#include "o2rnet/geometry.hpp"
#include "o2rnet/image.hpp"
#include "o2rnet/layers.hpp"

namespace o2r {

/// How the occlusion-context module narrows RoI features before up-sampling:
/// a fully-connected layer onto a small grid, or a strided 3x3 conv.
enum class ContextBottleneck { dense, convolutional };

/// Per-coordinate multipliers applied to encoded deltas before regression.
using BoxCoderWeights = std::array<double, 4>;

BoxDeltas scale_deltas(const BoxDeltas& d, const BoxCoderWeights& w);
BoxDeltas unscale_deltas(const BoxDeltas& d, const BoxCoderWeights& w);
/// Inverse of scale_deltas followed by apply_deltas, with dw/dh clamped so
/// untrained heads cannot overflow.
Box decode_box(const Box& reference, const BoxDeltas& scaled, const BoxCoderWeights& w);

struct ModelConfig {
  BackboneSpec backbone;
  AnchorConfig anchors;
  int pool_size = 7;
  int sampling_ratio = 2;
  int head_hidden = 128;
  int num_classes = 2;  // background + apple
  FesConfig fes;
  ContextBottleneck context_mode = ContextBottleneck::dense;
  int context_grid = 0;  // 0 selects pool_size / 2
  BoxCoderWeights roi_box_weights{10.0, 10.0, 5.0, 5.0};
  BoxCoderWeights rpn_box_weights{1.0, 1.0, 1.0, 1.0};
  std::uint64_t init_seed = 0;

  void validate() const;
  int resolved_context_grid() const;
  int roi_feature_size() const { return backbone.channels() * pool_size * pool_size; }
};

struct HeadOutput {
  Matrix logits;  // N x num_classes
  Matrix deltas;  // N x 4 (scaled by the RoI box-coder weights)
};

/// Class probabilities and box deltas for a set of proposals.
struct BranchOutput {
  Matrix scores;  // N x num_classes, rows sum to 1
  Matrix deltas;  // N x 4
  Branch branch = Branch::occluder;
};

/// Two shared fully-connected layers followed by class and box predictors.
class DetectionHead {
 public:
  struct Cache {
    Linear::Cache fc1, fc2, cls, box;
    Matrix h1, h2;
  };

  DetectionHead() = default;
  DetectionHead(const std::string& name, int in_features, int hidden, int num_classes);

  HeadOutput forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_logits, const Matrix& d_deltas, bool input_grad = true);
  void init(Rng& rng);
  void collect(std::vector<Param*>& out);

  Linear fc1, fc2, cls_score, bbox_pred;
};

/// 3x3 conv -> bottleneck (FC or strided conv) -> bilinear up-sampling to
/// P x P -> 1x1 conv, producing a single-channel map per RoI.
class OcclusionContext {
 public:
  struct Cache {
    Conv2d::Cache conv;
    Tensor conv_out;
    Linear::Cache fc;
    Conv2d::Cache squeeze;
    Matrix grid;      // N x g*g, before up-sampling
    Matrix upsampled; // N x P*P
  };

  OcclusionContext() = default;
  OcclusionContext(const std::string& name, int channels, int pool, int grid, ContextBottleneck mode);

  Matrix forward(const Matrix& roi, Cache* cache) const;  // N x (C*P*P) -> N x (P*P)
  Matrix backward(const Cache& cache, const Matrix& grad_out);
  void init(Rng& rng);
  void collect(std::vector<Param*>& out);

  int grid_size() const { return grid_; }

 private:
  int channels_ = 0, pool_ = 0, grid_ = 0;
  ContextBottleneck mode_ = ContextBottleneck::dense;
  Conv2d conv_;
  Linear fc_;
  Conv2d squeeze_;
  Matrix upsample_;  // P*P x g*g
  Conv2d out_;       // 1x1, one channel
};

class RpnHead {
 public:
  struct LevelCache {
    Conv2d::Cache conv, cls, reg;
    Tensor hidden;
  };
  struct Cache {
    std::vector<LevelCache> levels;
  };
  struct Output {
    std::vector<Tensor> logits;  // per level: A x H x W
    std::vector<Tensor> deltas;  // per level: 4A x H x W
  };

  RpnHead() = default;
  RpnHead(int channels, int anchors_per_cell);

  Output forward(const std::vector<Tensor>& features, Cache* cache) const;
  std::vector<Tensor> backward(const Cache& cache, const std::vector<Tensor>& d_logits,
                               const std::vector<Tensor>& d_deltas);
  void init(Rng& rng);
  void collect(std::vector<Param*>& out);

  int anchors_per_cell() const { return anchors_; }

 private:
  int anchors_ = 0;
  Conv2d conv_, cls_, reg_;
};

/// Flattened per-anchor view of an RPN output, in generate_anchors order.
struct FlatRpn {
  std::vector<double> logits;
  std::vector<BoxDeltas> deltas;  // scaled by the RPN box-coder weights
};

FlatRpn flatten_rpn(const RpnHead::Output& out);
/// Scatter per-anchor gradients back to the per-level tensor layout.
void unflatten_rpn_grad(const RpnHead::Output& like, std::span<const double> d_logits,
                        std::span<const BoxDeltas> d_deltas, std::vector<Tensor>& g_logits,
                        std::vector<Tensor>& g_deltas);

struct ProposalParams {
  double score_threshold = 0.0;
  int pre_nms_top_n = 600;
  double nms_threshold = 0.7;
  int post_nms_top_n = 300;
  double min_size = 2.0;
};

struct ProposalSet {
  std::vector<Box> proposals;
  std::vector<double> objectness;
  std::vector<std::vector<Box>> expansions;  // k+1 per proposal

  std::size_t size() const { return proposals.size(); }
};

// --- RoI feature extraction ---------------------------------------------------------

struct RoiPoolCache {
  struct Tap {
    int index;  // flat spatial index in the level plane
    double weight;
  };
  std::vector<int> level;               // per box
  std::vector<std::uint32_t> offsets;   // per (box, bin): start into taps; size = boxes*P*P + 1
  std::vector<Tap> taps;
  int pool = 0;
};

/// Pyramid level used for a box (single-level backbones always return 0).
int roi_level(const Box& box, std::span<const int> strides);

/// Bilinear region pooling to P x P per channel (sampling_ratio^2 points per
/// bin). Rows are laid out (C, P, P).
Matrix extract_roi_features(std::span<const Tensor> levels, std::span<const int> strides,
                            std::span<const Box> boxes, int pool, int sampling_ratio, RoiPoolCache* cache);
void extract_roi_features_backward(const RoiPoolCache& cache, const Matrix& grad,
                                   std::vector<Tensor>& level_grads);

// --- The network ---------------------------------------------------------------------

class O2RNet {
 public:
  explicit O2RNet(ModelConfig config);
  O2RNet(const O2RNet& other);
  O2RNet& operator=(const O2RNet& other);
  O2RNet(O2RNet&&) noexcept = default;
  O2RNet& operator=(O2RNet&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }

  /// Normalized CHW input padded (bottom/right) to the backbone stride.
  Tensor preprocess(const Image& image) const;
  std::vector<int> strides() const { return config_.backbone.strides(); }

  std::vector<Tensor> backbone_forward(const Tensor& input, std::unique_ptr<Backbone::Tape>* tape = nullptr) const;
  std::vector<Tensor> backbone_forward(const Image& image) const;

  /// Anchors for each pyramid level of the given feature maps.
  std::vector<std::vector<Box>> anchors_for(std::span<const Tensor> features) const;

  RpnHead::Output rpn_forward(const std::vector<Tensor>& features, RpnHead::Cache* cache = nullptr) const;
  ProposalSet rpn_propose(const RpnHead::Output& rpn, const std::vector<std::vector<Box>>& anchors,
                          ImageSize image, const ProposalParams& params) const;

  Matrix extract_roi_features(std::span<const Tensor> features, std::span<const Box> boxes,
                              RoiPoolCache* cache = nullptr) const;

  BranchOutput occluder_forward(const Matrix& roi) const;
  Matrix occlusion_context(const Matrix& roi) const;
  /// Adds the context map to every channel of each expansion's features and
  /// applies the occludee head. `expansion_features` holds k+1 matrices, one
  /// per expansion index, each N x (C*P*P).
  std::vector<BranchOutput> occludee_forward(const Matrix& roi, const Matrix& context,
                                             std::span<const Matrix> expansion_features) const;

  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  Param* find_parameter(const std::string& name);
  void zero_grad();
  void init(std::uint64_t seed);

  std::unique_ptr<Backbone> backbone;
  RpnHead rpn;
  DetectionHead occluder_head;
  OcclusionContext context;
  DetectionHead occludee_head;

 private:
  ModelConfig config_;
};

/// Broadcast-add a per-RoI P*P map across the C channels of RoI features.
Matrix add_context(const Matrix& roi, const Matrix& context, int channels);
/// Gradient of add_context with respect to the context map.
Matrix add_context_backward(const Matrix& grad, int channels);

}  // namespace o2r
