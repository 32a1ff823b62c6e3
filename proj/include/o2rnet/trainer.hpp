#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "o2rnet/augmentation.hpp"
#include "o2rnet/checkpoint.hpp"
#include "o2rnet/learning.hpp"
#include "o2rnet/model.hpp"

namespace o2r {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  AssignConfig assign;
  SamplerConfig sampler;
  RpnTrainConfig rpn;
  double rpn_loss_weight = 1.0;
  ScheduleSpec schedule;
  ProposalParams proposals{0.0, 600, 0.7, 128, 2.0};
  bool add_gt_proposals = true;
  AugmentSpec augment;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Everything about one training image that is fixed before the differentiable
/// part of the step: proposals, sampled RoIs, and their targets.
struct StepPlan {
  Tensor input;
  ImageSize size;
  Annotation annotation;

  std::vector<Box> rois;                          // sampled RoIs
  std::vector<std::vector<Box>> expansions;       // per RoI, k+1 boxes
  std::vector<int> labels;                        // occluder-branch class targets
  std::vector<BoxDeltas> deltas;                  // occluder-branch scaled delta targets
  std::vector<bool> occluded;
  std::vector<int> occludee_rows;                 // RoIs that feed the occludee loss
  std::vector<int> occludee_labels;               // per occludee row
  std::vector<std::vector<BoxDeltas>> occludee_deltas;  // [expansion][occludee row]
  RpnTargets rpn_targets;
};

/// Cached forward pass so that planning and the gradient pass share one backbone run.
struct ForwardState {
  std::unique_ptr<Backbone::Tape> tape;
  std::vector<Tensor> features;
  RpnHead::Cache rpn_cache;
  RpnHead::Output rpn_out;
  bool valid = false;
};

StepPlan plan_step(const O2RNet& model, const ImageRecord& record, const TrainConfig& config, std::uint64_t step_seed,
                   ForwardState* state = nullptr);

/// Plan over caller-chosen RoIs (no proposal sampling); RoIs in the ignore band
/// are kept but contribute no loss.
StepPlan plan_for_rois(const O2RNet& model, const ImageRecord& record, std::span<const Box> rois,
                       const TrainConfig& config, std::uint64_t step_seed = 0);

/// Loss for a fixed plan. With `compute_grad`, parameter gradients of
/// grad_scale * objective() are accumulated into the model (the caller zeroes them).
/// A valid `state` is consumed instead of recomputing the backbone.
LossBreakdown loss_and_grad(O2RNet& model, const StepPlan& plan, const TrainConfig& config, bool compute_grad,
                            ForwardState* state = nullptr, double grad_scale = 1.0);

/// Parameters the optimizer updates: a branch whose loss weight is zero is frozen.
std::vector<Param*> trainable_parameters(O2RNet& model, const LossWeights& weights);

struct IterationLog {
  int iteration = 0;
  double lr = 0.0;
  LossBreakdown loss;
  bool skipped = false;
};

class Trainer {
 public:
  Trainer(O2RNet& model, TrainConfig config, std::vector<ImageRecord> train_set);

  IterationLog step();
  std::vector<IterationLog> run(int iterations, const std::function<void(const IterationLog&)>& on_iteration = {});

  int iteration() const { return iteration_; }
  bool finished() const { return iteration_ >= config_.schedule.total_iters; }
  const TrainConfig& config() const { return config_; }
  int skipped_steps() const { return optimizer_.skipped_steps(); }

  Checkpoint checkpoint() const;
  void resume(const Checkpoint& checkpoint);

  /// The (possibly augmented) record used for global sample index `n`.
  ImageRecord sample(std::uint64_t n);

 private:
  O2RNet& model_;
  TrainConfig config_;
  std::vector<ImageRecord> train_;
  SgdMomentum optimizer_;
  int iteration_ = 0;
  std::uint64_t cached_epoch_ = ~0ULL;
  std::vector<std::size_t> order_;
};

}  // namespace o2r
