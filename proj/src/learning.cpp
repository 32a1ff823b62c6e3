#include "o2rnet/learning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "o2rnet/checkpoint.hpp"
#include "o2rnet/rng.hpp"

namespace o2r {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
  if (std::abs(lambda1 + lambda2 - 1.0) > 1e-9)
    throw std::invalid_argument("loss weights must satisfy lambda1 + lambda2 = 1");
}

double LossBreakdown::occludee() const {
  double s = 0.0;
  for (const auto& t : occludee_terms) s += t.sum();
  return s;
}

LossBreakdown total_loss(const BranchLoss& occluder, std::span<const BranchLoss> occludee, const LossWeights& w) {
  w.validate();
  LossBreakdown out;
  out.occluder_cls = occluder.cls;
  out.occluder_bbox = occluder.bbox;
  out.occludee_terms.assign(occludee.begin(), occludee.end());
  out.total = w.lambda1 * out.occluder() + w.lambda2 * out.occludee();
  return out;
}

// --- Targets ------------------------------------------------------------------------------------

void AssignConfig::validate() const {
  if (!(bg_iou >= 0.0 && bg_iou <= fg_iou && fg_iou <= 1.0))
    throw std::invalid_argument("assign: need 0 <= bg_iou <= fg_iou <= 1");
}

namespace {
bool box_less(const Box& a, const Box& b) {
  return std::tie(a.x1, a.y1, a.x2, a.y2) < std::tie(b.x1, b.y1, b.x2, b.y2);
}
}  // namespace

std::vector<RoiTarget> assign_targets(std::span<const Box> proposals, const Annotation& ann,
                                      const AssignConfig& config) {
  config.validate();
  std::vector<RoiTarget> out(proposals.size());
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    RoiTarget& t = out[p];
    int best = -1;
    double best_iou = 0.0;
    for (std::size_t g = 0; g < ann.boxes.size(); ++g) {
      const double v = iou(proposals[p], ann.boxes[g]);
      if (best < 0 || v > best_iou || (v == best_iou && box_less(ann.boxes[g], ann.boxes[static_cast<std::size_t>(best)]))) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best < 0) continue;  // no ground truth: background
    t.gt_index = best;
    t.iou = best_iou;
    const auto g = static_cast<std::size_t>(best);
    if (best_iou >= config.fg_iou) {
      t.label = ann.labels.empty() ? kAppleLabel : ann.labels[g];
      t.occluded = g < ann.occluded.size() && ann.occluded[g];
      t.deltas = encode_deltas(proposals[p], ann.boxes[g]);
    } else if (best_iou < config.bg_iou) {
      t.label = kBackgroundLabel;
    } else {
      t.label = kIgnoreLabel;
    }
  }
  return out;
}

std::vector<RoiTarget> assign_targets(const ProposalSet& proposals, const Annotation& ann, const AssignConfig& config) {
  return assign_targets(std::span<const Box>(proposals.proposals), ann, config);
}

void SamplerConfig::validate() const {
  if (batch_rois < 1) throw std::invalid_argument("sampler: batch_rois must be positive");
  if (!(fg_fraction >= 0.0 && fg_fraction <= 1.0)) throw std::invalid_argument("sampler: fg_fraction must be in [0,1]");
  if (!(occlusion_ratio >= 0.0 && occlusion_ratio <= 1.0))
    throw std::invalid_argument("sampler: occlusion_ratio must be in [0,1]");
}

std::vector<std::size_t> SampledRois::all() const {
  std::vector<std::size_t> out = occluded;
  out.insert(out.end(), clear.begin(), clear.end());
  out.insert(out.end(), background.begin(), background.end());
  return out;
}

namespace {
std::vector<std::size_t> take_random(std::span<const std::size_t> pool, std::size_t n, Rng& rng) {
  std::vector<std::size_t> v(pool.begin(), pool.end());
  rng.shuffle(v);
  v.resize(std::min(n, v.size()));
  std::sort(v.begin(), v.end());
  return v;
}
}  // namespace

SampledRois sample_foreground(std::span<const std::size_t> occluded_pool, std::span<const std::size_t> clear_pool,
                              std::size_t fg_request, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("sampler: occlusion_ratio must be in [0,1]");
  const std::size_t n = std::min(fg_request, occluded_pool.size() + clear_pool.size());
  std::size_t n_occ = std::min<std::size_t>(static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))),
                                            occluded_pool.size());
  const std::size_t n_clear = std::min(n - n_occ, clear_pool.size());
  n_occ = std::min(n - n_clear, occluded_pool.size());
  Rng rng(derive_seed(seed, 0, 0x5A3));
  SampledRois out;
  out.occluded = take_random(occluded_pool, n_occ, rng);
  out.clear = take_random(clear_pool, n_clear, rng);
  return out;
}

SampledRois sample_balanced(std::span<const RoiTarget> targets, const SamplerConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<std::size_t> occ, clear, bg;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].label > 0) (targets[i].occluded ? occ : clear).push_back(i);
    else if (targets[i].label == kBackgroundLabel) bg.push_back(i);
  }
  const auto quota = static_cast<std::size_t>(std::llround(config.batch_rois * config.fg_fraction));
  SampledRois out = sample_foreground(occ, clear, quota, config.occlusion_ratio, seed);
  Rng rng(derive_seed(seed, 1, 0x5A3));
  out.background = take_random(bg, static_cast<std::size_t>(config.batch_rois) - out.foreground(), rng);
  return out;
}

// --- Losses --------------------------------------------------------------------------------------

double smooth_l1(double x, double beta) {
  const double a = std::abs(x);
  if (beta <= 0.0) return a;
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

double smooth_l1_grad(double x, double beta) {
  if (beta > 0.0 && std::abs(x) < beta) return x / beta;
  return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

namespace {
void check_aligned(const Matrix& a, const Matrix& deltas, std::span<const int> labels,
                   std::span<const BoxDeltas> targets) {
  if (a.rows() != deltas.rows() || static_cast<std::size_t>(a.rows()) != labels.size() ||
      labels.size() != targets.size() || deltas.cols() != 4)
    throw std::invalid_argument("branch_loss: outputs and targets are not aligned");
  for (int l : labels)
    if (l >= a.cols()) throw std::invalid_argument("branch_loss: label out of range");
}

std::array<double, 4> as_array(const BoxDeltas& d) { return {d.dx, d.dy, d.dw, d.dh}; }
}  // namespace

BranchLoss branch_loss(const Matrix& scores, const Matrix& deltas, std::span<const int> labels,
                       std::span<const BoxDeltas> targets, double beta) {
  check_aligned(scores, deltas, labels, targets);
  BranchLoss out;
  int n = 0, n_fg = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0) continue;
    ++n;
    out.cls -= std::log(std::max(scores(static_cast<Eigen::Index>(r), labels[r]), 1e-300));
    if (labels[r] > 0) {
      ++n_fg;
      const auto t = as_array(targets[r]);
      for (int q = 0; q < 4; ++q) out.bbox += smooth_l1(deltas(static_cast<Eigen::Index>(r), q) - t[q], beta);
    }
  }
  if (n > 0) out.cls /= n;
  if (n_fg > 0) out.bbox /= n_fg;
  return out;
}

BranchLossGrad branch_loss_with_grad(const Matrix& logits, const Matrix& deltas, std::span<const int> labels,
                                     std::span<const BoxDeltas> targets, double beta) {
  check_aligned(logits, deltas, labels, targets);
  BranchLossGrad out;
  out.d_logits = Matrix::Zero(logits.rows(), logits.cols());
  out.d_deltas = Matrix::Zero(deltas.rows(), 4);
  int n = 0, n_fg = 0;
  for (int l : labels) {
    if (l >= 0) ++n;
    if (l > 0) ++n_fg;
  }
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int l = labels[r];
    if (l < 0) continue;
    const auto row = static_cast<Eigen::Index>(r);
    const double m = logits.row(row).maxCoeff();
    const RowVector e = (logits.row(row).array() - m).exp().matrix();
    const double z = e.sum();
    out.loss.cls += std::log(z) + m - logits(row, l);
    out.d_logits.row(row) = e / (z * n);
    out.d_logits(row, l) -= 1.0 / n;
    if (l > 0) {
      const auto t = as_array(targets[r]);
      for (int q = 0; q < 4; ++q) {
        const double diff = deltas(row, q) - t[q];
        out.loss.bbox += smooth_l1(diff, beta);
        out.d_deltas(row, q) = smooth_l1_grad(diff, beta) / n_fg;
      }
    }
  }
  if (n > 0) out.loss.cls /= n;
  if (n_fg > 0) out.loss.bbox /= n_fg;
  return out;
}

// --- RPN -------------------------------------------------------------------------------------------

void RpnTrainConfig::validate() const {
  if (!(bg_iou >= 0.0 && bg_iou <= fg_iou && fg_iou <= 1.0))
    throw std::invalid_argument("rpn: need 0 <= bg_iou <= fg_iou <= 1");
  if (batch_anchors < 1) throw std::invalid_argument("rpn: batch_anchors must be positive");
  if (!(fg_fraction >= 0.0 && fg_fraction <= 1.0)) throw std::invalid_argument("rpn: fg_fraction must be in [0,1]");
  if (beta < 0.0) throw std::invalid_argument("rpn: beta must be >= 0");
}

RpnTargets assign_rpn_targets(std::span<const Box> anchors, std::span<const Box> gt, const RpnTrainConfig& config,
                              const BoxCoderWeights& weights, std::uint64_t seed) {
  config.validate();
  const std::size_t A = anchors.size();
  RpnTargets out;
  out.labels.assign(A, kIgnoreLabel);
  out.deltas.assign(A, BoxDeltas{});
  std::vector<int> match(A, -1);
  std::vector<double> best(A, 0.0);
  std::vector<double> gt_best(gt.size(), 0.0);
  std::vector<double> ious(A * gt.size());
  for (std::size_t a = 0; a < A; ++a) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(anchors[a], gt[g]);
      ious[a * gt.size() + g] = v;
      if (match[a] < 0 || v > best[a]) {
        best[a] = v;
        match[a] = static_cast<int>(g);
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  for (std::size_t a = 0; a < A; ++a) {
    if (gt.empty() || best[a] < config.bg_iou) out.labels[a] = 0;
    else if (best[a] >= config.fg_iou) out.labels[a] = 1;
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t a = 0; a < A; ++a)
      if (ious[a * gt.size() + g] == gt_best[g]) out.labels[a] = 1;
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t a = 0; a < A; ++a) {
    if (out.labels[a] == 1) pos.push_back(a);
    else if (out.labels[a] == 0) neg.push_back(a);
  }
  Rng rng(derive_seed(seed, 0, 0x4B7));
  const auto max_pos = static_cast<std::size_t>(config.batch_anchors * config.fg_fraction);
  const auto keep_pos = take_random(pos, max_pos, rng);
  const auto keep_neg = take_random(neg, static_cast<std::size_t>(config.batch_anchors) - keep_pos.size(), rng);
  std::fill(out.labels.begin(), out.labels.end(), kIgnoreLabel);
  for (std::size_t a : keep_pos) {
    out.labels[a] = 1;
    out.deltas[a] = scale_deltas(encode_deltas(anchors[a], gt[static_cast<std::size_t>(match[a])]), weights);
  }
  for (std::size_t a : keep_neg) out.labels[a] = 0;
  return out;
}

RpnLossGrad rpn_loss(const FlatRpn& rpn, const RpnTargets& targets, double beta) {
  const std::size_t A = rpn.logits.size();
  if (targets.labels.size() != A) throw std::invalid_argument("rpn_loss: target count differs from anchor count");
  RpnLossGrad out;
  out.d_logits.assign(A, 0.0);
  out.d_deltas.assign(A, BoxDeltas{});
  std::size_t n = 0;
  for (int l : targets.labels) n += l >= 0;
  if (n == 0) return out;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < A; ++a) {
    const int l = targets.labels[a];
    if (l < 0) continue;
    const double x = rpn.logits[a];
    const double y = l;
    out.cls += (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)))) * inv;
    out.d_logits[a] = (1.0 / (1.0 + std::exp(-x)) - y) * inv;
    if (l == 1) {
      const auto p = as_array(rpn.deltas[a]);
      const auto t = as_array(targets.deltas[a]);
      std::array<double, 4> g{};
      for (int q = 0; q < 4; ++q) {
        out.bbox += smooth_l1(p[q] - t[q], beta) * inv;
        g[q] = smooth_l1_grad(p[q] - t[q], beta) * inv;
      }
      out.d_deltas[a] = {g[0], g[1], g[2], g[3]};
    }
  }
  return out;
}

// --- Schedule / optimizer --------------------------------------------------------------------------

void ScheduleSpec::validate() const {
  if (!(base_lr > 0.0)) throw std::invalid_argument("schedule: base_lr must be positive");
  if (total_iters < 1) throw std::invalid_argument("schedule: total_iters must be positive");
  if (warmup_iters < 0 || warmup_iters >= total_iters)
    throw std::invalid_argument("schedule: warmup_iters must be in [0, total_iters)");
  if (!(warmup_factor > 0.0)) throw std::invalid_argument("schedule: warmup_factor must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("schedule: momentum must be in [0,1)");
  if (!(decay >= 0.0) || !(weight_decay >= 0.0)) throw std::invalid_argument("schedule: decay terms must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("schedule: batch_size must be positive");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("schedule: grad_clip must be >= 0");
  if (!std::is_sorted(milestones.begin(), milestones.end()))
    throw std::invalid_argument("schedule: milestones must be sorted");
}

double lr_at(int iter, const ScheduleSpec& spec) {
  if (iter < 0 || iter >= spec.total_iters) throw std::out_of_range("lr_at: iteration outside [0, total_iters)");
  double lr = spec.base_lr;
  if (iter < spec.warmup_iters) lr *= spec.warmup_factor;
  for (int m : spec.milestones)
    if (iter >= m) lr *= spec.gamma();
  return lr;
}

void sgd_momentum_update(Param& p, Matrix& v, double lr, double momentum, double l2) {
  if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) v = Matrix::Zero(p.value.rows(), p.value.cols());
  v = momentum * v + p.grad;
  if (l2 != 0.0) v += l2 * p.value;
  p.value -= lr * v;
}

bool SgdMomentum::step(std::span<Param* const> params, double lr) {
  double sq = 0.0;
  for (const Param* p : params) {
    if (!all_finite(p->grad)) {
      ++skipped_;
      return false;
    }
    sq += p->grad.squaredNorm();
  }
  double scale = 1.0;
  if (grad_clip_ > 0.0 && std::sqrt(sq) > grad_clip_) scale = grad_clip_ / std::sqrt(sq);
  for (Param* p : params) {
    if (scale != 1.0) p->grad *= scale;
    sgd_momentum_update(*p, velocity_[p->name], lr, momentum_, l2_);
  }
  return true;
}

// --- Transfer learning ------------------------------------------------------------------------

bool is_replaceable_head(const std::string& name) {
  const bool head = name.starts_with("occluder_head.") || name.starts_with("occludee_head.");
  return head && (name.find(".cls_score.") != std::string::npos || name.find(".bbox_pred.") != std::string::npos);
}

LoadReport load_pretrained(const Checkpoint& ckpt, O2RNet& model, bool replace_heads, std::uint64_t reinit_seed) {
  LoadReport report;
  auto params = model.parameters();
  // Validate everything before touching the model.
  for (Param* p : params) {
    auto it = ckpt.params.find(p->name);
    if (it == ckpt.params.end() || (replace_heads && is_replaceable_head(p->name))) continue;
    if (it->second.value.rows() != p->value.rows() || it->second.value.cols() != p->value.cols())
      throw std::invalid_argument("load_pretrained: shape mismatch for parameter " + p->name);
  }
  for (Param* p : params) {
    if (replace_heads && is_replaceable_head(p->name)) {
      report.replaced.push_back(p->name);
      continue;
    }
    auto it = ckpt.params.find(p->name);
    if (it == ckpt.params.end()) {
      report.missing.push_back(p->name);
      continue;
    }
    p->value = it->second.value;
    report.loaded.push_back(p->name);
  }
  for (const auto& [name, t] : ckpt.params)
    if (!model.find_parameter(name)) report.unexpected.push_back(name);

  if (replace_heads) {
    Rng rng(derive_seed(reinit_seed, 0, 0x4EAD));
    for (DetectionHead* h : {&model.occluder_head, &model.occludee_head}) {
      h->cls_score.init(rng, Init::small);
      h->bbox_pred.init(rng, Init::tiny);
    }
  }
  return report;
}

}  // namespace o2r
