#include "o2rnet/backbone.hpp"

#include <stdexcept>
#include <string>

namespace o2r {

void BackboneSpec::validate() const {
  if (variant == BackboneVariant::tiny) {
    if (stage_channels.empty()) throw std::invalid_argument("backbone: tiny variant needs at least one stage");
    for (int c : stage_channels)
      if (c <= 0) throw std::invalid_argument("backbone: stage channels must be positive");
    if (extra_convs < 0) throw std::invalid_argument("backbone: extra_convs must be >= 0");
  } else {
    if (blocks.size() != 4) throw std::invalid_argument("backbone: fpn_resnet needs four block counts");
    for (int b : blocks)
      if (b <= 0) throw std::invalid_argument("backbone: block counts must be positive");
    if (base_width <= 0 || fpn_channels <= 0) throw std::invalid_argument("backbone: widths must be positive");
  }
}

int BackboneSpec::channels() const {
  return variant == BackboneVariant::tiny ? stage_channels.back() : fpn_channels;
}

std::vector<int> BackboneSpec::strides() const {
  if (variant == BackboneVariant::tiny) return {1 << stage_channels.size()};
  return {4, 8, 16, 32};
}

int BackboneSpec::size_divisor() const { return strides().back(); }

namespace {

// --- tiny ------------------------------------------------------------------------

// Leaky activations: trained from scratch without normalization, a plain-ReLU
// stack can be knocked into an all-zero state it never leaves.
constexpr double kTinySlope = 0.01;

class TinyBackbone final : public Backbone {
 public:
  explicit TinyBackbone(const BackboneSpec& spec) {
    int in = 3;
    for (std::size_t s = 0; s < spec.stage_channels.size(); ++s) {
      const int out = spec.stage_channels[s];
      convs_.emplace_back("backbone.stage" + std::to_string(s + 1) + ".conv", in, out, 3, 2, 1);
      in = out;
    }
    for (int e = 0; e < spec.extra_convs; ++e)
      convs_.emplace_back("backbone.extra" + std::to_string(e + 1) + ".conv", in, in, 3, 1, 1);
  }

  struct TinyTape final : Tape {
    std::vector<Conv2d::Cache> caches;
    std::vector<Tensor> outputs;
  };

  std::vector<Tensor> forward(const Tensor& image, std::unique_ptr<Tape>* tape) const override {
    TinyTape* t = nullptr;
    if (tape) {
      auto owned = std::make_unique<TinyTape>();
      t = owned.get();
      *tape = std::move(owned);
      t->caches.resize(convs_.size());
    }
    Tensor x = image;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i].forward(x, t ? &t->caches[i] : nullptr);
      leaky_relu_inplace(x.data, kTinySlope);
      if (t) t->outputs.push_back(x);
    }
    return {std::move(x)};
  }

  void backward(Tape& tape, const std::vector<Tensor>& level_grads) override {
    auto& t = dynamic_cast<TinyTape&>(tape);
    Tensor g = level_grads.at(0);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      leaky_relu_backward_inplace(t.outputs[i].data, g.data, kTinySlope);
      g = convs_[i].backward(t.caches[i], g, /*input_grad=*/i > 0);
    }
  }

  void collect(std::vector<Param*>& out) override {
    for (auto& c : convs_) c.collect(out);
  }

  void init(Rng& rng) override {
    for (auto& c : convs_) c.init(rng, Init::he);
  }

  std::unique_ptr<Backbone> clone() const override { return std::make_unique<TinyBackbone>(*this); }

 private:
  std::vector<Conv2d> convs_;
};

// --- ResNet + FPN -------------------------------------------------------------------

struct ConvAffine {
  Conv2d conv;
  ChannelAffine bn;

  ConvAffine() = default;
  ConvAffine(const std::string& name, int in, int out, int k, int s, int p)
      : conv(name, in, out, k, s, p), bn(name + "_bn", out) {}

  struct Cache {
    Conv2d::Cache conv;
    Tensor pre_bn;
  };

  Tensor forward(const Tensor& x, Cache* c) const {
    Tensor a = conv.forward(x, c ? &c->conv : nullptr);
    Tensor b = bn.forward(a);
    if (c) c->pre_bn = std::move(a);
    return b;
  }
  Tensor backward(const Cache& c, const Tensor& g, bool input_grad = true) {
    return conv.backward(c.conv, bn.backward(c.pre_bn, g), input_grad);
  }
  void collect(std::vector<Param*>& out) {
    conv.collect(out);
    bn.collect(out);
  }
};

class Bottleneck {
 public:
  Bottleneck(const std::string& name, int in, int mid, int out, int stride)
      : a_(name + ".conv1", in, mid, 1, 1, 0), b_(name + ".conv2", mid, mid, 3, stride, 1),
        c_(name + ".conv3", mid, out, 1, 1, 0), has_down_(in != out || stride != 1) {
    if (has_down_) down_ = ConvAffine(name + ".downsample", in, out, 1, stride, 0);
  }

  struct Cache {
    ConvAffine::Cache a, b, c, down;
    Tensor ra, rb, out;
  };

  Tensor forward(const Tensor& x, Cache* k) const {
    Tensor ra = a_.forward(x, k ? &k->a : nullptr);
    relu_inplace(ra.data);
    Tensor rb = b_.forward(ra, k ? &k->b : nullptr);
    relu_inplace(rb.data);
    Tensor y = c_.forward(rb, k ? &k->c : nullptr);
    if (has_down_) y.data += down_.forward(x, k ? &k->down : nullptr).data;
    else y.data += x.data;
    relu_inplace(y.data);
    if (k) {
      k->ra = std::move(ra);
      k->rb = std::move(rb);
      k->out = y;
    }
    return y;
  }

  Tensor backward(const Cache& k, Tensor g) {
    relu_backward_inplace(k.out.data, g.data);
    Tensor d = c_.backward(k.c, g);
    relu_backward_inplace(k.rb.data, d.data);
    d = b_.backward(k.b, d);
    relu_backward_inplace(k.ra.data, d.data);
    Tensor dx = a_.backward(k.a, d);
    if (has_down_) dx.data += down_.backward(k.down, g).data;
    else dx.data += g.data;
    return dx;
  }

  void collect(std::vector<Param*>& out) {
    a_.collect(out);
    b_.collect(out);
    c_.collect(out);
    if (has_down_) down_.collect(out);
  }

  void init(Rng& rng) {
    a_.conv.init(rng, Init::he);
    b_.conv.init(rng, Init::he);
    c_.conv.init(rng, Init::he);
    if (has_down_) down_.conv.init(rng, Init::he);
  }

 private:
  ConvAffine a_, b_, c_, down_;
  bool has_down_;
};

class ResNetFpnBackbone final : public Backbone {
 public:
  explicit ResNetFpnBackbone(const BackboneSpec& spec)
      : stem_("backbone.stem", 3, spec.base_width, 7, 2, 3), pool_(3, 2, 1) {
    int in = spec.base_width;
    for (int stage = 0; stage < 4; ++stage) {
      const int mid = spec.base_width << stage;
      const int out = mid * 4;
      std::vector<Bottleneck> blocks;
      for (int b = 0; b < spec.blocks[static_cast<std::size_t>(stage)]; ++b) {
        const int stride = (b == 0 && stage > 0) ? 2 : 1;
        blocks.emplace_back("backbone.layer" + std::to_string(stage + 1) + "." + std::to_string(b), in, mid, out,
                            stride);
        in = out;
      }
      stages_.push_back(std::move(blocks));
      lateral_.emplace_back("backbone.fpn.lateral" + std::to_string(stage + 2), out, spec.fpn_channels, 1, 1, 0);
      output_.emplace_back("backbone.fpn.output" + std::to_string(stage + 2), spec.fpn_channels,
                           spec.fpn_channels, 3, 1, 1);
    }
  }

  struct FpnTape final : Tape {
    ConvAffine::Cache stem;
    Tensor stem_out;
    MaxPool2d::Cache pool;
    std::vector<std::vector<Bottleneck::Cache>> blocks;
    std::vector<Conv2d::Cache> lateral, output;
    std::vector<FeatureShape> merged_shapes;
  };

  std::vector<Tensor> forward(const Tensor& image, std::unique_ptr<Tape>* tape) const override {
    FpnTape* t = nullptr;
    if (tape) {
      auto owned = std::make_unique<FpnTape>();
      t = owned.get();
      *tape = std::move(owned);
      t->blocks.resize(stages_.size());
      t->lateral.resize(4);
      t->output.resize(4);
      t->merged_shapes.resize(4);
    }
    Tensor x = stem_.forward(image, t ? &t->stem : nullptr);
    relu_inplace(x.data);
    if (t) t->stem_out = x;
    x = pool_.forward(x, t ? &t->pool : nullptr);

    std::vector<Tensor> c;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      if (t) t->blocks[s].resize(stages_[s].size());
      for (std::size_t b = 0; b < stages_[s].size(); ++b) x = stages_[s][b].forward(x, t ? &t->blocks[s][b] : nullptr);
      c.push_back(x);
    }

    std::vector<Tensor> merged(4);
    for (int l = 3; l >= 0; --l) {
      Tensor lat = lateral_[l].forward(c[l], t ? &t->lateral[l] : nullptr);
      if (l < 3) lat.data += upsample_nearest(merged[l + 1], lat.shape.height, lat.shape.width).data;
      merged[l] = std::move(lat);
      if (t) t->merged_shapes[l] = merged[l].shape;
    }
    std::vector<Tensor> out(4);
    for (int l = 0; l < 4; ++l) out[l] = output_[l].forward(merged[l], t ? &t->output[l] : nullptr);
    return out;
  }

  void backward(Tape& tape, const std::vector<Tensor>& level_grads) override {
    auto& t = dynamic_cast<FpnTape&>(tape);
    std::vector<Tensor> d_merged(4);
    for (int l = 0; l < 4; ++l) d_merged[l] = output_[l].backward(t.output[l], level_grads.at(l));
    std::vector<Tensor> d_c(4);
    for (int l = 0; l < 4; ++l) {
      if (l < 3) d_merged[l + 1].data += upsample_nearest_backward(d_merged[l], t.merged_shapes[l + 1]).data;
    }
    for (int l = 0; l < 4; ++l) d_c[l] = lateral_[l].backward(t.lateral[l], d_merged[l]);

    Tensor g = d_c[3];
    for (std::size_t s = stages_.size(); s-- > 0;) {
      for (std::size_t b = stages_[s].size(); b-- > 0;) g = stages_[s][b].backward(t.blocks[s][b], g);
      if (s > 0) g.data += d_c[s - 1].data;
    }
    g = pool_.backward(t.pool, g);
    relu_backward_inplace(t.stem_out.data, g.data);
    stem_.backward(t.stem, g, /*input_grad=*/false);
  }

  void collect(std::vector<Param*>& out) override {
    stem_.collect(out);
    for (auto& s : stages_)
      for (auto& b : s) b.collect(out);
    for (auto& l : lateral_) l.collect(out);
    for (auto& o : output_) o.collect(out);
  }

  void init(Rng& rng) override {
    stem_.conv.init(rng, Init::he);
    for (auto& s : stages_)
      for (auto& b : s) b.init(rng);
    for (auto& l : lateral_) l.init(rng, Init::he);
    for (auto& o : output_) o.init(rng, Init::he);
  }

  std::unique_ptr<Backbone> clone() const override { return std::make_unique<ResNetFpnBackbone>(*this); }

 private:
  ConvAffine stem_;
  MaxPool2d pool_;
  std::vector<std::vector<Bottleneck>> stages_;
  std::vector<Conv2d> lateral_, output_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec) {
  spec.validate();
  if (spec.variant == BackboneVariant::tiny) return std::make_unique<TinyBackbone>(spec);
  return std::make_unique<ResNetFpnBackbone>(spec);
}

}  // namespace o2r
