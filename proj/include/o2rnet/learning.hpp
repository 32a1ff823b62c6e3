#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "o2rnet/data.hpp"
#include "o2rnet/model.hpp"

namespace o2r {

struct Checkpoint;

// --- Loss weights and breakdown ---------------------------------------------------------

struct LossWeights {
  double lambda1 = 0.5;  // occluder branch
  double lambda2 = 0.5;  // occludee branch

  /// Rejects negative weights or weights off the simplex lambda1 + lambda2 = 1.
  void validate() const;
  static LossWeights from_lambda1(double l1) { return {l1, 1.0 - l1}; }
};

struct BranchLoss {
  double cls = 0.0;
  double bbox = 0.0;

  double sum() const { return cls + bbox; }
};

struct LossBreakdown {
  double occluder_cls = 0.0;
  double occluder_bbox = 0.0;
  std::vector<BranchLoss> occludee_terms;  // k+1 entries, expansion index 0..k
  double rpn_cls = 0.0;
  double rpn_bbox = 0.0;
  double total = 0.0;  // weighted two-branch loss

  double occluder() const { return occluder_cls + occluder_bbox; }
  double occludee() const;
  /// What the optimizer minimises: the weighted total plus the proposal-network terms.
  double objective() const { return total + rpn_cls + rpn_bbox; }
};

LossBreakdown total_loss(const BranchLoss& occluder, std::span<const BranchLoss> occludee, const LossWeights& w);

// --- Target assignment and sampling -----------------------------------------------------------

inline constexpr int kIgnoreLabel = -1;

struct RoiTarget {
  int label = kBackgroundLabel;  // class id, 0 = background, -1 = ignored
  int gt_index = -1;
  double iou = 0.0;
  bool occluded = false;
  BoxDeltas deltas;  // raw (unscaled) encoding toward the matched box; zero for background
};

struct AssignConfig {
  double fg_iou = 0.5;
  double bg_iou = 0.3;

  void validate() const;
};

/// Matches each proposal to its highest-IoU ground-truth box. Equal IoUs resolve to
/// the lexicographically smallest box so the result does not depend on the order of
/// the annotation.
std::vector<RoiTarget> assign_targets(std::span<const Box> proposals, const Annotation& annotation,
                                      const AssignConfig& config = {});
std::vector<RoiTarget> assign_targets(const ProposalSet& proposals, const Annotation& annotation,
                                      const AssignConfig& config = {});

struct SamplerConfig {
  int batch_rois = 64;
  double fg_fraction = 0.25;
  double occlusion_ratio = 0.5;

  void validate() const;
};

struct SampledRois {
  std::vector<std::size_t> occluded, clear, background;

  std::size_t foreground() const { return occluded.size() + clear.size(); }
  /// Occluded, then clear, then background.
  std::vector<std::size_t> all() const;
};

/// Picks `fg_request` foreground indices with round(occlusion_ratio * n) occluded
/// when supply permits, topping up from the other pool otherwise.
SampledRois sample_foreground(std::span<const std::size_t> occluded_pool, std::span<const std::size_t> clear_pool,
                              std::size_t fg_request, double occlusion_ratio, std::uint64_t seed);

SampledRois sample_balanced(std::span<const RoiTarget> targets, const SamplerConfig& config, std::uint64_t seed);

// --- Branch losses --------------------------------------------------------------------------

double smooth_l1(double x, double beta = 1.0);
double smooth_l1_grad(double x, double beta = 1.0);

/// Mean cross-entropy over rows with label >= 0 and mean (over foreground rows)
/// of the smooth-L1 sum over the four deltas. `scores` are probabilities.
BranchLoss branch_loss(const Matrix& scores, const Matrix& deltas, std::span<const int> labels,
                       std::span<const BoxDeltas> delta_targets, double beta = 1.0);

struct BranchLossGrad {
  BranchLoss loss;
  Matrix d_logits;
  Matrix d_deltas;
};

/// Same loss from logits, with gradients of (cls + bbox).
BranchLossGrad branch_loss_with_grad(const Matrix& logits, const Matrix& deltas, std::span<const int> labels,
                                     std::span<const BoxDeltas> delta_targets, double beta = 1.0);

// --- RPN loss ----------------------------------------------------------------------------------

struct RpnTrainConfig {
  double fg_iou = 0.7;
  double bg_iou = 0.3;
  int batch_anchors = 256;
  double fg_fraction = 0.5;
  double beta = 1.0 / 9.0;

  void validate() const;
};

struct RpnTargets {
  std::vector<int> labels;             // per anchor: 1, 0, or -1 (not sampled)
  std::vector<BoxDeltas> deltas;       // scaled targets for label == 1
};

RpnTargets assign_rpn_targets(std::span<const Box> anchors, std::span<const Box> gt, const RpnTrainConfig& config,
                              const BoxCoderWeights& weights, std::uint64_t seed);

struct RpnLossGrad {
  double cls = 0.0;
  double bbox = 0.0;
  std::vector<double> d_logits;
  std::vector<BoxDeltas> d_deltas;
};

/// Binary cross-entropy on sampled anchors plus smooth-L1 on positives, both
/// averaged over the number of sampled anchors.
RpnLossGrad rpn_loss(const FlatRpn& rpn, const RpnTargets& targets, double beta);

// --- Schedule and optimizer ------------------------------------------------------------------

enum class DecayKind { lr_factor, l2 };

struct ScheduleSpec {
  double base_lr = 0.01;
  int warmup_iters = 100;
  double warmup_factor = 0.1;
  int total_iters = 1000;
  double momentum = 0.9;
  double decay = 0.0;                       // meaning depends on decay_kind
  DecayKind decay_kind = DecayKind::lr_factor;
  std::vector<int> milestones;              // lr *= decay at each (lr_factor kind)
  double weight_decay = 0.0;                // extra L2 coefficient, independent of `decay`
  int batch_size = 1;
  double grad_clip = 0.0;                   // global-norm clip, 0 disables

  void validate() const;
  double l2() const { return decay_kind == DecayKind::l2 ? decay + weight_decay : weight_decay; }
  double gamma() const { return decay_kind == DecayKind::lr_factor && decay > 0.0 ? decay : 1.0; }
};

double lr_at(int iter, const ScheduleSpec& spec);

/// One SGD-with-momentum update on a single parameter: v <- m v + g + l2 p; p <- p - lr v.
void sgd_momentum_update(Param& p, Matrix& velocity, double lr, double momentum, double l2);

class SgdMomentum {
 public:
  SgdMomentum(double momentum = 0.9, double l2 = 0.0, double grad_clip = 0.0)
      : momentum_(momentum), l2_(l2), grad_clip_(grad_clip) {}

  /// Returns false (and counts the skip) when any gradient is non-finite.
  bool step(std::span<Param* const> params, double lr);

  int skipped_steps() const { return skipped_; }
  std::map<std::string, Matrix>& velocity() { return velocity_; }
  const std::map<std::string, Matrix>& velocity() const { return velocity_; }

 private:
  double momentum_, l2_, grad_clip_;
  int skipped_ = 0;
  std::map<std::string, Matrix> velocity_;
};

// --- Transfer learning -------------------------------------------------------------------------

/// Final class and box predictors of both branches.
bool is_replaceable_head(const std::string& param_name);

struct LoadReport {
  std::vector<std::string> loaded, replaced, missing, unexpected;
};

LoadReport load_pretrained(const Checkpoint& checkpoint, O2RNet& model, bool replace_heads,
                           std::uint64_t reinit_seed = 0);

}  // namespace o2r
