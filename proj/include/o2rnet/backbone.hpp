#pragma once

#include <memory>
#include <vector>

#include "o2rnet/layers.hpp"

namespace o2r {

enum class BackboneVariant { tiny, fpn_resnet };

struct BackboneSpec {
  BackboneVariant variant = BackboneVariant::tiny;

  // tiny: one stride-2 3x3 conv per stage, plus `extra_convs` stride-1 convs
  // on the last stage.
  std::vector<int> stage_channels{16, 32, 32};
  int extra_convs = 1;

  // fpn_resnet: bottleneck ResNet (ResNet-101 is {3, 4, 23, 3} at width 64)
  // with a top-down feature pyramid over strides 4..32.
  std::vector<int> blocks{3, 4, 23, 3};
  int base_width = 64;
  int fpn_channels = 256;

  void validate() const;
  int channels() const;
  std::vector<int> strides() const;
  /// Input sides are padded up to a multiple of this.
  int size_divisor() const;
};

class Backbone {
 public:
  struct Tape {
    virtual ~Tape() = default;
  };

  virtual ~Backbone() = default;
  /// Returns one feature map per pyramid level (finest first). When `tape`
  /// is non-null the activations needed for backward are recorded there.
  virtual std::vector<Tensor> forward(const Tensor& image, std::unique_ptr<Tape>* tape) const = 0;
  virtual void backward(Tape& tape, const std::vector<Tensor>& level_grads) = 0;
  virtual void collect(std::vector<Param*>& out) = 0;
  virtual void init(Rng& rng) = 0;
  virtual std::unique_ptr<Backbone> clone() const = 0;
};

std::unique_ptr<Backbone> make_backbone(const BackboneSpec& spec);

}  // namespace o2r
