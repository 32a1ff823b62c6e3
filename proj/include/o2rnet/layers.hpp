#pragma once

#include <string>
#include <vector>

#include "o2rnet/rng.hpp"
#include "o2rnet/tensor.hpp"

namespace o2r {

enum class Init { he, small, tiny, zero };

class Conv2d {
 public:
  struct Cache {
    Matrix columns;  // (in * k * k) x (batch * out_h * out_w)
    FeatureShape input;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride, int pad);

  FeatureShape output_shape(FeatureShape in) const;
  Tensor forward(const Tensor& x, Cache* cache) const;
  /// Accumulates parameter gradients; returns the input gradient when requested.
  Tensor backward(const Cache& cache, const Tensor& grad_out, bool input_grad = true);
  void init(Rng& rng, Init kind);
  void collect(std::vector<Param*>& out) { out.push_back(&weight); out.push_back(&bias); }

  Param weight;  // out x (in * k * k)
  Param bias;    // 1 x out
  int in_channels = 0, out_channels = 0, kernel = 1, stride = 1, pad = 0;
};

class Linear {
 public:
  struct Cache {
    Matrix input;
  };

  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& grad_out, bool input_grad = true);
  void init(Rng& rng, Init kind);
  void collect(std::vector<Param*>& out) { out.push_back(&weight); out.push_back(&bias); }

  Param weight;  // out x in
  Param bias;    // 1 x out
  int in_features = 0, out_features = 0;
};

/// Per-channel scale and shift (frozen batch-norm style).
class ChannelAffine {
 public:
  ChannelAffine() = default;
  ChannelAffine(const std::string& name, int channels);

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& input, const Tensor& grad_out);
  void collect(std::vector<Param*>& out) { out.push_back(&scale); out.push_back(&shift); }

  Param scale;
  Param shift;
};

class MaxPool2d {
 public:
  struct Cache {
    std::vector<int> argmax;  // flat input index per output element (per batch row)
    FeatureShape input;
  };

  MaxPool2d(int kernel = 3, int stride = 2, int pad = 1) : kernel_(kernel), stride_(stride), pad_(pad) {}
  FeatureShape output_shape(FeatureShape in) const;
  Tensor forward(const Tensor& x, Cache* cache) const;
  Tensor backward(const Cache& cache, const Tensor& grad_out) const;

 private:
  int kernel_, stride_, pad_;
};

void relu_inplace(Matrix& m);
/// grad *= (output > 0)
void relu_backward_inplace(const Matrix& output, Matrix& grad);
void leaky_relu_inplace(Matrix& m, double slope);
/// grad *= (output > 0 ? 1 : slope); valid for slope > 0
void leaky_relu_backward_inplace(const Matrix& output, Matrix& grad, double slope);

/// Nearest-neighbour resize of every channel to the target spatial size.
Tensor upsample_nearest(const Tensor& x, int height, int width);
Tensor upsample_nearest_backward(const Tensor& grad_out, FeatureShape input);

/// Linear operator (dst_h*dst_w x src_h*src_w) for bilinear resizing with
/// half-pixel centers.
Matrix bilinear_resize_operator(int src_h, int src_w, int dst_h, int dst_w);

/// Row-wise softmax.
Matrix softmax_rows(const Matrix& logits);

}  // namespace o2r
