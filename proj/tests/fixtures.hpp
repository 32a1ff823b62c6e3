#pragma once

#include "o2rnet/data.hpp"
#include "o2rnet/model.hpp"
#include "o2rnet/trainer.hpp"

namespace fixture {

/// C=8 channels at stride 4, P=4, k=8, t=1.
inline o2r::ModelConfig tiny_model(std::uint64_t seed = 3) {
  o2r::ModelConfig mc;
  mc.backbone.stage_channels = {4, 8};
  mc.backbone.extra_convs = 0;
  mc.anchors.strides = {4};
  mc.anchors.scales = {8.0, 16.0};
  mc.anchors.aspect_ratios = {1.0};
  mc.pool_size = 4;
  mc.head_hidden = 16;
  mc.fes.steps = 1;
  mc.fes.directions = 8;
  mc.init_seed = seed;
  return mc;
}

inline o2r::TrainConfig tiny_train(std::uint64_t seed = 3) {
  o2r::TrainConfig tc;
  tc.model = tiny_model(seed);
  tc.weights = {0.5, 0.5};
  tc.sampler.batch_rois = 16;
  tc.rpn.batch_anchors = 32;
  tc.proposals.post_nms_top_n = 16;
  tc.proposals.pre_nms_top_n = 64;
  tc.schedule.total_iters = 20;
  tc.schedule.warmup_iters = 2;
  tc.schedule.base_lr = 0.01;
  tc.seed = seed;
  return tc;
}

/// 32x32 scene with an overlapping pair of discs.
inline o2r::ImageRecord tiny_scene(std::uint64_t index = 0) {
  o2r::SynthConfig sc;
  sc.image_size = {32, 32};
  sc.min_objects = sc.max_objects = 2;
  sc.min_radius = 5.0;
  sc.max_radius = 7.0;
  sc.cluster_fraction = 1.0;
  sc.overlap_target = 0.3;
  return o2r::generate_synthetic_scene(sc, index);
}

}  // namespace fixture
