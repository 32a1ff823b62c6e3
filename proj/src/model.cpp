#include "o2rnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace o2r {

namespace {
const double kDeltaClamp = std::log(1000.0 / 16.0);
}

BoxDeltas scale_deltas(const BoxDeltas& d, const BoxCoderWeights& w) {
  return {d.dx * w[0], d.dy * w[1], d.dw * w[2], d.dh * w[3]};
}

BoxDeltas unscale_deltas(const BoxDeltas& d, const BoxCoderWeights& w) {
  return {d.dx / w[0], d.dy / w[1], d.dw / w[2], d.dh / w[3]};
}

Box decode_box(const Box& reference, const BoxDeltas& scaled, const BoxCoderWeights& w) {
  BoxDeltas d = unscale_deltas(scaled, w);
  d.dw = std::min(d.dw, kDeltaClamp);
  d.dh = std::min(d.dh, kDeltaClamp);
  return apply_deltas(reference, d);
}

// --- ModelConfig ---------------------------------------------------------------------

void ModelConfig::validate() const {
  backbone.validate();
  anchors.validate();
  fes.validate();
  if (anchors.strides != backbone.strides())
    throw std::invalid_argument("model: anchor strides must match the backbone's pyramid strides");
  for (std::size_t l = 1; l < anchors.strides.size(); ++l)
    if (anchors.anchors_per_cell(l) != anchors.anchors_per_cell(0))
      throw std::invalid_argument("model: every pyramid level needs the same number of anchors per cell");
  if (pool_size < 1 || sampling_ratio < 1 || head_hidden < 1)
    throw std::invalid_argument("model: pool_size, sampling_ratio and head_hidden must be positive");
  if (num_classes < 2) throw std::invalid_argument("model: need background plus at least one class");
  if (context_grid < 0) throw std::invalid_argument("model: context_grid must be >= 0");
  for (double v : roi_box_weights)
    if (!(v > 0.0)) throw std::invalid_argument("model: box-coder weights must be positive");
  for (double v : rpn_box_weights)
    if (!(v > 0.0)) throw std::invalid_argument("model: box-coder weights must be positive");
}

int ModelConfig::resolved_context_grid() const {
  if (context_mode == ContextBottleneck::convolutional) return (pool_size - 1) / 2 + 1;
  if (context_grid > 0) return context_grid;
  return std::max(1, pool_size / 2);
}

// --- DetectionHead -----------------------------------------------------------------------

DetectionHead::DetectionHead(const std::string& name, int in, int hidden, int classes)
    : fc1(name + ".fc1", in, hidden), fc2(name + ".fc2", hidden, hidden),
      cls_score(name + ".cls_score", hidden, classes), bbox_pred(name + ".bbox_pred", hidden, 4) {}

HeadOutput DetectionHead::forward(const Matrix& x, Cache* c) const {
  Matrix h1 = fc1.forward(x, c ? &c->fc1 : nullptr);
  relu_inplace(h1);
  Matrix h2 = fc2.forward(h1, c ? &c->fc2 : nullptr);
  relu_inplace(h2);
  HeadOutput out{cls_score.forward(h2, c ? &c->cls : nullptr), bbox_pred.forward(h2, c ? &c->box : nullptr)};
  if (c) {
    c->h1 = std::move(h1);
    c->h2 = std::move(h2);
  }
  return out;
}

Matrix DetectionHead::backward(const Cache& c, const Matrix& d_logits, const Matrix& d_deltas, bool input_grad) {
  Matrix d_h2 = cls_score.backward(c.cls, d_logits);
  d_h2 += bbox_pred.backward(c.box, d_deltas);
  relu_backward_inplace(c.h2, d_h2);
  Matrix d_h1 = fc2.backward(c.fc2, d_h2);
  relu_backward_inplace(c.h1, d_h1);
  return fc1.backward(c.fc1, d_h1, input_grad);
}

void DetectionHead::init(Rng& rng) {
  fc1.init(rng, Init::he);
  fc2.init(rng, Init::he);
  cls_score.init(rng, Init::small);
  bbox_pred.init(rng, Init::tiny);
}

void DetectionHead::collect(std::vector<Param*>& out) {
  fc1.collect(out);
  fc2.collect(out);
  cls_score.collect(out);
  bbox_pred.collect(out);
}

// --- OcclusionContext ----------------------------------------------------------------------

OcclusionContext::OcclusionContext(const std::string& name, int channels, int pool, int grid, ContextBottleneck mode)
    : channels_(channels), pool_(pool), grid_(grid), mode_(mode),
      conv_(name + ".conv", channels, channels, 3, 1, 1), out_(name + ".out", 1, 1, 1, 1, 0) {
  if (mode_ == ContextBottleneck::dense) {
    fc_ = Linear(name + ".fc", channels * pool * pool, grid * grid);
  } else {
    squeeze_ = Conv2d(name + ".squeeze", channels, 1, 3, 2, 1);
    grid_ = squeeze_.output_shape({channels, pool, pool}).height;
  }
  upsample_ = bilinear_resize_operator(grid_, grid_, pool_, pool_);
}

Matrix OcclusionContext::forward(const Matrix& roi, Cache* c) const {
  const FeatureShape in{channels_, pool_, pool_};
  Tensor h = conv_.forward(Tensor(roi, in), c ? &c->conv : nullptr);
  relu_inplace(h.data);
  Matrix grid;
  if (mode_ == ContextBottleneck::dense) {
    grid = fc_.forward(h.data, c ? &c->fc : nullptr);
  } else {
    grid = squeeze_.forward(h, c ? &c->squeeze : nullptr).data;
  }
  Matrix up = grid * upsample_.transpose();
  Tensor out = out_.forward(Tensor(up, {1, pool_, pool_}), nullptr);
  if (c) {
    c->conv_out = std::move(h);
    c->grid = std::move(grid);
    c->upsampled = std::move(up);
  }
  return std::move(out.data);
}

Matrix OcclusionContext::backward(const Cache& c, const Matrix& grad_out) {
  // The 1x1 single-channel conv is a scalar affine map.
  const double a = out_.weight.value(0, 0);
  out_.weight.grad(0, 0) += (grad_out.array() * c.upsampled.array()).sum();
  out_.bias.grad(0, 0) += grad_out.sum();
  const Matrix d_up = grad_out * a;
  const Matrix d_grid = d_up * upsample_;
  Tensor d_h;
  if (mode_ == ContextBottleneck::dense) {
    d_h = Tensor(fc_.backward(c.fc, d_grid), c.conv_out.shape);
  } else {
    const FeatureShape gs{1, grid_, grid_};
    d_h = squeeze_.backward(c.squeeze, Tensor(d_grid, gs));
  }
  relu_backward_inplace(c.conv_out.data, d_h.data);
  return std::move(conv_.backward(c.conv, d_h).data);
}

void OcclusionContext::init(Rng& rng) {
  conv_.init(rng, Init::he);
  if (mode_ == ContextBottleneck::dense) fc_.init(rng, Init::he);
  else squeeze_.init(rng, Init::he);
  out_.init(rng, Init::he);
  out_.weight.value(0, 0) = 0.1;
}

void OcclusionContext::collect(std::vector<Param*>& out) {
  conv_.collect(out);
  if (mode_ == ContextBottleneck::dense) fc_.collect(out);
  else squeeze_.collect(out);
  out_.collect(out);
}

// --- RPN ---------------------------------------------------------------------------------

RpnHead::RpnHead(int channels, int anchors)
    : anchors_(anchors), conv_("rpn.conv", channels, channels, 3, 1, 1), cls_("rpn.cls_logits", channels, anchors, 1, 1, 0),
      reg_("rpn.bbox_pred", channels, 4 * anchors, 1, 1, 0) {}

RpnHead::Output RpnHead::forward(const std::vector<Tensor>& features, Cache* c) const {
  Output out;
  if (c) c->levels.resize(features.size());
  for (std::size_t l = 0; l < features.size(); ++l) {
    LevelCache* lc = c ? &c->levels[l] : nullptr;
    Tensor h = conv_.forward(features[l], lc ? &lc->conv : nullptr);
    relu_inplace(h.data);
    out.logits.push_back(cls_.forward(h, lc ? &lc->cls : nullptr));
    out.deltas.push_back(reg_.forward(h, lc ? &lc->reg : nullptr));
    if (lc) lc->hidden = std::move(h);
  }
  return out;
}

std::vector<Tensor> RpnHead::backward(const Cache& c, const std::vector<Tensor>& d_logits,
                                      const std::vector<Tensor>& d_deltas) {
  std::vector<Tensor> d_features;
  for (std::size_t l = 0; l < c.levels.size(); ++l) {
    const LevelCache& lc = c.levels[l];
    Tensor d_h = cls_.backward(lc.cls, d_logits[l]);
    d_h.data += reg_.backward(lc.reg, d_deltas[l]).data;
    relu_backward_inplace(lc.hidden.data, d_h.data);
    d_features.push_back(conv_.backward(lc.conv, d_h));
  }
  return d_features;
}

void RpnHead::init(Rng& rng) {
  conv_.init(rng, Init::he);
  cls_.init(rng, Init::small);
  reg_.init(rng, Init::small);
}

void RpnHead::collect(std::vector<Param*>& out) {
  conv_.collect(out);
  cls_.collect(out);
  reg_.collect(out);
}

FlatRpn flatten_rpn(const RpnHead::Output& out) {
  FlatRpn flat;
  for (std::size_t l = 0; l < out.logits.size(); ++l) {
    const Tensor& lg = out.logits[l];
    const Tensor& dl = out.deltas[l];
    const int A = lg.shape.channels;
    for (int i = 0; i < lg.shape.height; ++i)
      for (int j = 0; j < lg.shape.width; ++j)
        for (int a = 0; a < A; ++a) {
          flat.logits.push_back(lg.at(0, a, i, j));
          flat.deltas.push_back(
              {dl.at(0, 4 * a, i, j), dl.at(0, 4 * a + 1, i, j), dl.at(0, 4 * a + 2, i, j), dl.at(0, 4 * a + 3, i, j)});
        }
  }
  return flat;
}

void unflatten_rpn_grad(const RpnHead::Output& like, std::span<const double> d_logits,
                        std::span<const BoxDeltas> d_deltas, std::vector<Tensor>& g_logits,
                        std::vector<Tensor>& g_deltas) {
  g_logits.clear();
  g_deltas.clear();
  std::size_t k = 0;
  for (std::size_t l = 0; l < like.logits.size(); ++l) {
    Tensor gl(1, like.logits[l].shape);
    Tensor gd(1, like.deltas[l].shape);
    const int A = gl.shape.channels;
    for (int i = 0; i < gl.shape.height; ++i)
      for (int j = 0; j < gl.shape.width; ++j)
        for (int a = 0; a < A; ++a, ++k) {
          gl.at(0, a, i, j) = d_logits[k];
          gd.at(0, 4 * a, i, j) = d_deltas[k].dx;
          gd.at(0, 4 * a + 1, i, j) = d_deltas[k].dy;
          gd.at(0, 4 * a + 2, i, j) = d_deltas[k].dw;
          gd.at(0, 4 * a + 3, i, j) = d_deltas[k].dh;
        }
    g_logits.push_back(std::move(gl));
    g_deltas.push_back(std::move(gd));
  }
}

// --- RoI pooling ----------------------------------------------------------------------------

int roi_level(const Box& box, std::span<const int> strides) {
  if (strides.size() <= 1) return 0;
  const double side = std::sqrt(std::max(box.area(), 1e-6));
  const int k = static_cast<int>(std::floor(4.0 + std::log2(side / 224.0 + 1e-6)));
  const int base = static_cast<int>(std::lround(std::log2(strides[0])));
  return std::clamp(k - base, 0, static_cast<int>(strides.size()) - 1);
}

Matrix extract_roi_features(std::span<const Tensor> levels, std::span<const int> strides, std::span<const Box> boxes,
                            int pool, int sr, RoiPoolCache* cache) {
  if (levels.empty()) throw std::invalid_argument("extract_roi_features: no feature levels");
  const int C = levels[0].shape.channels;
  const int bins = pool * pool;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(boxes.size()), static_cast<Eigen::Index>(C) * bins);
  RoiPoolCache local;
  RoiPoolCache& rc = cache ? *cache : local;
  rc = RoiPoolCache{};
  rc.pool = pool;
  rc.offsets.reserve(boxes.size() * bins + 1);
  rc.taps.reserve(boxes.size() * bins * sr * sr * 4);

  const double sample_weight = 1.0 / (sr * sr);
  for (std::size_t n = 0; n < boxes.size(); ++n) {
    const Box& b = boxes[n];
    if (!(b.width() > 0.0 && b.height() > 0.0))
      throw std::invalid_argument("extract_roi_features: zero-area box");
    const int l = roi_level(b, strides);
    rc.level.push_back(l);
    const Tensor& f = levels[static_cast<std::size_t>(l)];
    const int H = f.shape.height, W = f.shape.width;
    const double s = strides[static_cast<std::size_t>(l)];
    const double x0 = b.x1 / s - 0.5, y0 = b.y1 / s - 0.5;
    const double bw = (b.width() / s) / pool, bh = (b.height() / s) / pool;

    for (int py = 0; py < pool; ++py) {
      for (int px = 0; px < pool; ++px) {
        rc.offsets.push_back(static_cast<std::uint32_t>(rc.taps.size()));
        for (int iy = 0; iy < sr; ++iy) {
          double y = y0 + py * bh + (iy + 0.5) * bh / sr;
          for (int ix = 0; ix < sr; ++ix) {
            double x = x0 + px * bw + (ix + 0.5) * bw / sr;
            if (y < -1.0 || y > H || x < -1.0 || x > W) continue;
            double yy = std::max(y, 0.0), xx = std::max(x, 0.0);
            int ylo = static_cast<int>(yy), xlo = static_cast<int>(xx);
            int yhi, xhi;
            if (ylo >= H - 1) { ylo = yhi = H - 1; yy = ylo; } else yhi = ylo + 1;
            if (xlo >= W - 1) { xlo = xhi = W - 1; xx = xlo; } else xhi = xlo + 1;
            const double ly = yy - ylo, lx = xx - xlo, hy = 1.0 - ly, hx = 1.0 - lx;
            rc.taps.push_back({ylo * W + xlo, sample_weight * hy * hx});
            rc.taps.push_back({ylo * W + xhi, sample_weight * hy * lx});
            rc.taps.push_back({yhi * W + xlo, sample_weight * ly * hx});
            rc.taps.push_back({yhi * W + xhi, sample_weight * ly * lx});
          }
        }
      }
    }
  }
  rc.offsets.push_back(static_cast<std::uint32_t>(rc.taps.size()));

  for (std::size_t n = 0; n < boxes.size(); ++n) {
    const Tensor& f = levels[static_cast<std::size_t>(rc.level[n])];
    const int plane = f.shape.plane();
    const double* fdata = f.data.row(0).data();
    double* orow = out.row(static_cast<Eigen::Index>(n)).data();
    for (int p = 0; p < bins; ++p) {
      const std::uint32_t begin = rc.offsets[n * bins + p], end = rc.offsets[n * bins + p + 1];
      for (int c = 0; c < C; ++c) {
        const double* fp = fdata + static_cast<std::ptrdiff_t>(c) * plane;
        double acc = 0.0;
        for (std::uint32_t t = begin; t < end; ++t) acc += rc.taps[t].weight * fp[rc.taps[t].index];
        orow[c * bins + p] = acc;
      }
    }
  }
  return out;
}

void extract_roi_features_backward(const RoiPoolCache& rc, const Matrix& grad, std::vector<Tensor>& level_grads) {
  const int bins = rc.pool * rc.pool;
  for (std::size_t n = 0; n < rc.level.size(); ++n) {
    Tensor& g = level_grads[static_cast<std::size_t>(rc.level[n])];
    const int C = g.shape.channels;
    const int plane = g.shape.plane();
    double* gdata = g.data.row(0).data();
    const double* grow = grad.row(static_cast<Eigen::Index>(n)).data();
    for (int p = 0; p < bins; ++p) {
      const std::uint32_t begin = rc.offsets[n * bins + p], end = rc.offsets[n * bins + p + 1];
      for (int c = 0; c < C; ++c) {
        const double go = grow[c * bins + p];
        if (go == 0.0) continue;
        double* gp = gdata + static_cast<std::ptrdiff_t>(c) * plane;
        for (std::uint32_t t = begin; t < end; ++t) gp[rc.taps[t].index] += rc.taps[t].weight * go;
      }
    }
  }
}

Matrix add_context(const Matrix& roi, const Matrix& context, int channels) {
  Matrix out = roi;
  const Eigen::Index bins = context.cols();
  for (int c = 0; c < channels; ++c) out.middleCols(c * bins, bins) += context;
  return out;
}

Matrix add_context_backward(const Matrix& grad, int channels) {
  const Eigen::Index bins = grad.cols() / channels;
  Matrix d = Matrix::Zero(grad.rows(), bins);
  for (int c = 0; c < channels; ++c) d += grad.middleCols(c * bins, bins);
  return d;
}

// --- O2RNet ---------------------------------------------------------------------------------

O2RNet::O2RNet(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int C = config_.backbone.channels();
  const int P = config_.pool_size;
  const int D = C * P * P;
  backbone = make_backbone(config_.backbone);
  rpn = RpnHead(C, static_cast<int>(config_.anchors.anchors_per_cell(0)));
  occluder_head = DetectionHead("occluder_head", D, config_.head_hidden, config_.num_classes);
  context = OcclusionContext("context", C, P, config_.resolved_context_grid(), config_.context_mode);
  occludee_head = DetectionHead("occludee_head", D, config_.head_hidden, config_.num_classes);
  init(config_.init_seed);
}

O2RNet::O2RNet(const O2RNet& o)
    : backbone(o.backbone->clone()), rpn(o.rpn), occluder_head(o.occluder_head), context(o.context),
      occludee_head(o.occludee_head), config_(o.config_) {}

O2RNet& O2RNet::operator=(const O2RNet& o) {
  if (this != &o) {
    O2RNet tmp(o);
    *this = std::move(tmp);
  }
  return *this;
}

void O2RNet::init(std::uint64_t seed) {
  Rng b(derive_seed(seed, 1, 0x1417)), r(derive_seed(seed, 2, 0x1417)), h1(derive_seed(seed, 3, 0x1417)),
      cx(derive_seed(seed, 4, 0x1417)), h2(derive_seed(seed, 5, 0x1417));
  backbone->init(b);
  rpn.init(r);
  occluder_head.init(h1);
  context.init(cx);
  occludee_head.init(h2);
}

Tensor O2RNet::preprocess(const Image& image) const {
  if (image.empty()) throw std::invalid_argument("preprocess: empty image");
  const int d = config_.backbone.size_divisor();
  const int H = (image.height + d - 1) / d * d;
  const int W = (image.width + d - 1) / d * d;
  Tensor t(1, {3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) t.at(0, c, y, x) = (image.at(x, y, c) / 255.0 - 0.5) / 0.25;
  return t;
}

std::vector<Tensor> O2RNet::backbone_forward(const Tensor& input, std::unique_ptr<Backbone::Tape>* tape) const {
  if (!input.data.allFinite()) throw std::invalid_argument("backbone_forward: non-finite input");
  const int d = config_.backbone.size_divisor();
  if (input.shape.height % d != 0 || input.shape.width % d != 0)
    throw std::invalid_argument("backbone_forward: input sides must be multiples of " + std::to_string(d));
  return backbone->forward(input, tape);
}

std::vector<Tensor> O2RNet::backbone_forward(const Image& image) const { return backbone_forward(preprocess(image)); }

std::vector<std::vector<Box>> O2RNet::anchors_for(std::span<const Tensor> features) const {
  std::vector<std::vector<Box>> out;
  const auto strides = config_.backbone.strides();
  for (std::size_t l = 0; l < features.size(); ++l) {
    const auto scales = config_.anchors.scales_for_level(l);
    out.push_back(generate_anchors(features[l].shape.height, features[l].shape.width, scales,
                                   config_.anchors.aspect_ratios, strides[l]));
  }
  return out;
}

RpnHead::Output O2RNet::rpn_forward(const std::vector<Tensor>& features, RpnHead::Cache* cache) const {
  return rpn.forward(features, cache);
}

ProposalSet O2RNet::rpn_propose(const RpnHead::Output& out, const std::vector<std::vector<Box>>& anchors,
                                ImageSize image, const ProposalParams& params) const {
  const FlatRpn flat = flatten_rpn(out);
  std::vector<Box> boxes;
  std::vector<double> scores;
  std::size_t offset = 0;
  for (const auto& level_anchors : anchors) {
    std::vector<std::size_t> idx;
    for (std::size_t a = 0; a < level_anchors.size(); ++a) {
      const double s = 1.0 / (1.0 + std::exp(-flat.logits[offset + a]));
      if (s > params.score_threshold) idx.push_back(a);
    }
    auto score_of = [&](std::size_t a) { return flat.logits[offset + a]; };
    const auto top = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::max(0, params.pre_nms_top_n)));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(top), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        return score_of(a) > score_of(b) || (score_of(a) == score_of(b) && a < b);
                      });
    idx.resize(top);
    for (std::size_t a : idx) {
      Box b = clip_box(decode_box(level_anchors[a], flat.deltas[offset + a], config_.rpn_box_weights), image);
      if (b.width() < params.min_size || b.height() < params.min_size) continue;
      boxes.push_back(b);
      scores.push_back(1.0 / (1.0 + std::exp(-flat.logits[offset + a])));
    }
    offset += level_anchors.size();
  }
  auto keep = nms_indices(boxes, scores, params.nms_threshold);
  if (keep.size() > static_cast<std::size_t>(std::max(0, params.post_nms_top_n)))
    keep.resize(static_cast<std::size_t>(std::max(0, params.post_nms_top_n)));

  ProposalSet ps;
  for (std::size_t i : keep) {
    ps.proposals.push_back(boxes[i]);
    ps.objectness.push_back(scores[i]);
    ps.expansions.push_back(fes_expand(boxes[i], config_.fes, image));
  }
  return ps;
}

Matrix O2RNet::extract_roi_features(std::span<const Tensor> features, std::span<const Box> boxes,
                                    RoiPoolCache* cache) const {
  const auto strides = config_.backbone.strides();
  return o2r::extract_roi_features(features, strides, boxes, config_.pool_size, config_.sampling_ratio, cache);
}

BranchOutput O2RNet::occluder_forward(const Matrix& roi) const {
  HeadOutput h = occluder_head.forward(roi, nullptr);
  return {softmax_rows(h.logits), std::move(h.deltas), Branch::occluder};
}

Matrix O2RNet::occlusion_context(const Matrix& roi) const { return context.forward(roi, nullptr); }

std::vector<BranchOutput> O2RNet::occludee_forward(const Matrix& roi, const Matrix& ctx,
                                                   std::span<const Matrix> expansion_features) const {
  const auto expected = static_cast<std::size_t>(config_.fes.directions) + 1;
  if (expansion_features.size() != expected)
    throw std::invalid_argument("occludee_forward: expected " + std::to_string(expected) + " expansion feature sets");
  if (ctx.rows() != roi.rows()) throw std::invalid_argument("occludee_forward: context rows differ from RoIs");
  const int C = config_.backbone.channels();
  std::vector<BranchOutput> out;
  for (const auto& feats : expansion_features) {
    HeadOutput h = occludee_head.forward(add_context(feats, ctx, C), nullptr);
    out.push_back({softmax_rows(h.logits), std::move(h.deltas), Branch::occludee});
  }
  return out;
}

std::vector<Param*> O2RNet::parameters() {
  std::vector<Param*> out;
  backbone->collect(out);
  rpn.collect(out);
  occluder_head.collect(out);
  context.collect(out);
  occludee_head.collect(out);
  return out;
}

std::vector<const Param*> O2RNet::parameters() const {
  auto ps = const_cast<O2RNet*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Param* O2RNet::find_parameter(const std::string& name) {
  for (Param* p : parameters())
    if (p->name == name) return p;
  return nullptr;
}

void O2RNet::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

}  // namespace o2r
