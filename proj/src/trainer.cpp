#include "o2rnet/trainer.hpp"

#include <numeric>
#include <stdexcept>

namespace o2r {

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  assign.validate();
  sampler.validate();
  rpn.validate();
  schedule.validate();
  augment.validate();
  if (!(rpn_loss_weight >= 0.0)) throw std::invalid_argument("train: rpn_loss_weight must be >= 0");
  if (proposals.post_nms_top_n < 0 || proposals.pre_nms_top_n < 0)
    throw std::invalid_argument("train: proposal counts must be >= 0");
}

namespace {

// Records the selected RoIs and their occluder/occludee targets.
void fill_rois(StepPlan& plan, const ModelConfig& mc, std::span<const Box> boxes, std::span<const RoiTarget> targets,
               std::span<const std::size_t> selected) {
  const Annotation& ann = plan.annotation;
  const std::size_t K = static_cast<std::size_t>(mc.fes.directions) + 1;
  plan.occludee_deltas.assign(K, {});
  for (std::size_t idx : selected) {
    const RoiTarget& t = targets[idx];
    const Box& roi = boxes[idx];
    const int row = static_cast<int>(plan.rois.size());
    plan.rois.push_back(roi);
    plan.expansions.push_back(fes_expand(roi, mc.fes, plan.size));
    plan.labels.push_back(t.label);
    plan.deltas.push_back(t.label > 0 ? scale_deltas(t.deltas, mc.roi_box_weights) : BoxDeltas{});
    plan.occluded.push_back(t.label > 0 && t.occluded);

    // Occludee branch: occluded foreground regresses from every expansion toward
    // the matched box, background teaches rejection, clear foreground is skipped.
    if (t.label < 0 || (t.label > 0 && !t.occluded)) continue;
    plan.occludee_rows.push_back(row);
    plan.occludee_labels.push_back(t.label);
    for (std::size_t i = 0; i < K; ++i) {
      BoxDeltas d{};
      if (t.label > 0) {
        const Box& gt = ann.boxes[static_cast<std::size_t>(t.gt_index)];
        d = scale_deltas(encode_deltas(plan.expansions.back()[i], gt), mc.roi_box_weights);
      }
      plan.occludee_deltas[i].push_back(d);
    }
  }
}

std::vector<Box> flatten_anchors(const std::vector<std::vector<Box>>& anchors) {
  std::vector<Box> flat;
  for (const auto& level : anchors) flat.insert(flat.end(), level.begin(), level.end());
  return flat;
}

}  // namespace

StepPlan plan_step(const O2RNet& model, const ImageRecord& record, const TrainConfig& config, std::uint64_t step_seed,
                   ForwardState* state) {
  const ModelConfig& mc = model.config();
  StepPlan plan;
  plan.input = model.preprocess(record.image);
  plan.size = record.size();
  plan.annotation = record.annotation;
  const Annotation& ann = plan.annotation;

  ForwardState local;
  ForwardState& st = state ? *state : local;
  st.features = model.backbone_forward(plan.input, state ? &st.tape : nullptr);
  st.rpn_out = model.rpn_forward(st.features, state ? &st.rpn_cache : nullptr);
  st.valid = state != nullptr;

  const auto anchors = model.anchors_for(st.features);
  plan.rpn_targets = assign_rpn_targets(flatten_anchors(anchors), ann.boxes, config.rpn, mc.rpn_box_weights,
                                        derive_seed(step_seed, 1, 0x9A));

  ProposalSet props = model.rpn_propose(st.rpn_out, anchors, plan.size, config.proposals);
  std::vector<Box> boxes = props.proposals;
  if (config.add_gt_proposals)
    for (const Box& b : ann.boxes)
      if (b.width() > 0.0 && b.height() > 0.0) boxes.push_back(b);

  const auto targets = assign_targets(boxes, ann, config.assign);
  const SampledRois sample = sample_balanced(targets, config.sampler, derive_seed(step_seed, 2, 0x9A));
  fill_rois(plan, mc, boxes, targets, sample.all());
  return plan;
}

StepPlan plan_for_rois(const O2RNet& model, const ImageRecord& record, std::span<const Box> rois,
                       const TrainConfig& config, std::uint64_t step_seed) {
  const ModelConfig& mc = model.config();
  StepPlan plan;
  plan.input = model.preprocess(record.image);
  plan.size = record.size();
  plan.annotation = record.annotation;
  const auto features = model.backbone_forward(plan.input);
  plan.rpn_targets = assign_rpn_targets(flatten_anchors(model.anchors_for(features)), plan.annotation.boxes,
                                        config.rpn, mc.rpn_box_weights, derive_seed(step_seed, 1, 0x9A));
  const auto targets = assign_targets(rois, plan.annotation, config.assign);
  std::vector<std::size_t> all(rois.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  fill_rois(plan, mc, rois, targets, all);
  return plan;
}

LossBreakdown loss_and_grad(O2RNet& model, const StepPlan& plan, const TrainConfig& config, bool compute_grad,
                            ForwardState* state, double grad_scale) {
  const ModelConfig& mc = model.config();
  const int C = mc.backbone.channels();
  const std::size_t K = static_cast<std::size_t>(mc.fes.directions) + 1;
  const LossWeights& w = config.weights;
  w.validate();

  ForwardState local;
  ForwardState* st = state && state->valid ? state : &local;
  if (st == &local) {
    local.features = model.backbone_forward(plan.input, compute_grad ? &local.tape : nullptr);
    local.rpn_out = model.rpn_forward(local.features, compute_grad ? &local.rpn_cache : nullptr);
  }
  const std::vector<Tensor>& features = st->features;

  // RPN
  const FlatRpn flat = flatten_rpn(st->rpn_out);
  const RpnLossGrad rl = rpn_loss(flat, plan.rpn_targets, config.rpn.beta);

  // Occluder branch
  RoiPoolCache pool0;
  DetectionHead::Cache occ_cache;
  BranchLossGrad occ{};
  if (!plan.rois.empty()) {
    const Matrix x0 = model.extract_roi_features(features, plan.rois, &pool0);
    const HeadOutput h = model.occluder_head.forward(x0, &occ_cache);
    occ = branch_loss_with_grad(h.logits, h.deltas, plan.labels, plan.deltas);
  }

  // Occludee branch
  const std::size_t R = plan.occludee_rows.size();
  std::vector<BranchLoss> terms(K);
  std::vector<RoiPoolCache> pools(K);
  std::vector<DetectionHead::Cache> head_caches(K);
  std::vector<BranchLossGrad> occludee(K);
  OcclusionContext::Cache ctx_cache;
  if (R > 0) {
    std::vector<std::vector<Box>> boxes(K);
    for (int r : plan.occludee_rows)
      for (std::size_t i = 0; i < K; ++i) boxes[i].push_back(plan.expansions[static_cast<std::size_t>(r)][i]);
    std::vector<Matrix> xs(K);
    for (std::size_t i = 0; i < K; ++i) xs[i] = model.extract_roi_features(features, boxes[i], &pools[i]);
    const Matrix ctx = model.context.forward(xs[0], &ctx_cache);
    for (std::size_t i = 0; i < K; ++i) {
      const HeadOutput h = model.occludee_head.forward(add_context(xs[i], ctx, C), &head_caches[i]);
      occludee[i] = branch_loss_with_grad(h.logits, h.deltas, plan.occludee_labels, plan.occludee_deltas[i]);
      terms[i] = occludee[i].loss;
    }
  }

  LossBreakdown out = total_loss(occ.loss, terms, w);
  out.rpn_cls = config.rpn_loss_weight * rl.cls;
  out.rpn_bbox = config.rpn_loss_weight * rl.bbox;
  if (!compute_grad) return out;

  std::vector<Tensor> level_grads;
  for (const Tensor& f : features) level_grads.emplace_back(1, f.shape);

  if (!plan.rois.empty() && w.lambda1 > 0.0) {
    const double s = grad_scale * w.lambda1;
    const Matrix dx = model.occluder_head.backward(occ_cache, occ.d_logits * s, occ.d_deltas * s);
    extract_roi_features_backward(pool0, dx, level_grads);
  }
  if (R > 0 && w.lambda2 > 0.0) {
    const double s = grad_scale * w.lambda2;
    Matrix d_ctx;
    for (std::size_t i = 0; i < K; ++i) {
      const Matrix dx = model.occludee_head.backward(head_caches[i], occludee[i].d_logits * s, occludee[i].d_deltas * s);
      extract_roi_features_backward(pools[i], dx, level_grads);
      if (i == 0) d_ctx = add_context_backward(dx, C);
      else d_ctx += add_context_backward(dx, C);
    }
    const Matrix dx0 = model.context.backward(ctx_cache, d_ctx);
    extract_roi_features_backward(pools[0], dx0, level_grads);
  }
  if (config.rpn_loss_weight > 0.0) {
    const double s = grad_scale * config.rpn_loss_weight;
    std::vector<double> dl = rl.d_logits;
    std::vector<BoxDeltas> dd = rl.d_deltas;
    for (double& v : dl) v *= s;
    for (BoxDeltas& d : dd) d = {d.dx * s, d.dy * s, d.dw * s, d.dh * s};
    std::vector<Tensor> gl, gd;
    unflatten_rpn_grad(st->rpn_out, dl, dd, gl, gd);
    const auto d_feat = model.rpn.backward(st->rpn_cache, gl, gd);
    for (std::size_t l = 0; l < level_grads.size(); ++l) level_grads[l].data += d_feat[l].data;
  }
  model.backbone->backward(*st->tape, level_grads);
  return out;
}

std::vector<Param*> trainable_parameters(O2RNet& model, const LossWeights& weights) {
  std::vector<Param*> out;
  for (Param* p : model.parameters()) {
    const bool occludee = p->name.starts_with("context.") || p->name.starts_with("occludee_head.");
    const bool occluder = p->name.starts_with("occluder_head.");
    if (occludee && weights.lambda2 == 0.0) continue;
    if (occluder && weights.lambda1 == 0.0) continue;
    out.push_back(p);
  }
  return out;
}

// --- Trainer ----------------------------------------------------------------------------------

Trainer::Trainer(O2RNet& model, TrainConfig config, std::vector<ImageRecord> train_set)
    : model_(model), config_(std::move(config)), train_(std::move(train_set)),
      optimizer_(config_.schedule.momentum, config_.schedule.l2(), config_.schedule.grad_clip) {
  config_.validate();
  if (train_.empty()) throw std::invalid_argument("trainer: empty training set");
  for (const auto& r : train_)
    if (r.image.empty()) throw std::invalid_argument("trainer: record " + r.image_id + " has no pixels");
}

ImageRecord Trainer::sample(std::uint64_t n) {
  const std::uint64_t epoch = n / train_.size();
  if (epoch != cached_epoch_) {
    order_.resize(train_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(config_.seed, epoch, 0xDA7A));
    rng.shuffle(order_);
    cached_epoch_ = epoch;
  }
  const ImageRecord& base = train_[order_[n % train_.size()]];
  if (!config_.augment.any_enabled()) return base;
  AugmentSpec spec = config_.augment;
  spec.seed = derive_seed(config_.seed, spec.seed, 0xA06);
  return augment_pipeline(base, spec, n, train_);
}

IterationLog Trainer::step() {
  if (finished()) throw std::logic_error("trainer: schedule already complete");
  const int B = config_.schedule.batch_size;
  IterationLog log;
  log.iteration = iteration_;
  log.lr = lr_at(iteration_, config_.schedule);
  model_.zero_grad();
  const double scale = 1.0 / B;
  for (int b = 0; b < B; ++b) {
    const std::uint64_t n = static_cast<std::uint64_t>(iteration_) * B + static_cast<std::uint64_t>(b);
    const ImageRecord rec = sample(n);
    ForwardState state;
    const StepPlan plan = plan_step(model_, rec, config_, derive_seed(config_.seed, n, 0x57E9), &state);
    const LossBreakdown l = loss_and_grad(model_, plan, config_, true, &state, scale);
    if (b == 0) {
      log.loss = l;
      log.loss.occludee_terms.assign(l.occludee_terms.size(), {});
      log.loss.occluder_cls = log.loss.occluder_bbox = log.loss.rpn_cls = log.loss.rpn_bbox = log.loss.total = 0.0;
    }
    log.loss.occluder_cls += l.occluder_cls * scale;
    log.loss.occluder_bbox += l.occluder_bbox * scale;
    log.loss.rpn_cls += l.rpn_cls * scale;
    log.loss.rpn_bbox += l.rpn_bbox * scale;
    log.loss.total += l.total * scale;
    for (std::size_t i = 0; i < l.occludee_terms.size(); ++i) {
      log.loss.occludee_terms[i].cls += l.occludee_terms[i].cls * scale;
      log.loss.occludee_terms[i].bbox += l.occludee_terms[i].bbox * scale;
    }
  }
  const auto params = trainable_parameters(model_, config_.weights);
  log.skipped = !optimizer_.step(params, log.lr);
  ++iteration_;
  return log;
}

std::vector<IterationLog> Trainer::run(int iterations, const std::function<void(const IterationLog&)>& cb) {
  std::vector<IterationLog> out;
  for (int i = 0; i < iterations && !finished(); ++i) {
    out.push_back(step());
    if (cb) cb(out.back());
  }
  return out;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = checkpoint_from_model(model_);
  c.velocity = optimizer_.velocity();
  c.iteration = iteration_;
  return c;
}

void Trainer::resume(const Checkpoint& c) {
  restore_model(c, model_);
  optimizer_.velocity() = c.velocity;
  iteration_ = c.iteration;
}

}  // namespace o2r
