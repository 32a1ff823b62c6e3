#include "o2rnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace o2r {

bool all_finite(const Matrix& m) { return m.allFinite(); }

namespace {

void init_matrix(Matrix& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, stddev);
}

double init_std(Init kind, int fan_in) {
  switch (kind) {
    case Init::he: return std::sqrt(2.0 / std::max(1, fan_in));
    case Init::small: return 0.01;
    case Init::tiny: return 0.001;
    case Init::zero: return 0.0;
  }
  return 0.0;
}

}  // namespace

// --- Conv2d -------------------------------------------------------------------------

Conv2d::Conv2d(const std::string& name, int in, int out, int k, int s, int p)
    : weight(name + ".weight", {out, in, k, k}, out, in * k * k),
      bias(name + ".bias", {out}, 1, out),
      in_channels(in), out_channels(out), kernel(k), stride(s), pad(p) {}

FeatureShape Conv2d::output_shape(FeatureShape in) const {
  return {out_channels, (in.height + 2 * pad - kernel) / stride + 1, (in.width + 2 * pad - kernel) / stride + 1};
}

void Conv2d::init(Rng& rng, Init kind) {
  const double sd = init_std(kind, in_channels * kernel * kernel);
  if (sd > 0.0) init_matrix(weight.value, rng, sd); else weight.value.setZero();
  bias.value.setZero();
}

Tensor Conv2d::forward(const Tensor& x, Cache* cache) const {
  if (x.shape.channels != in_channels) throw std::invalid_argument("conv: channel mismatch for " + weight.name);
  const FeatureShape in = x.shape;
  const FeatureShape os = output_shape(in);
  if (os.height <= 0 || os.width <= 0) throw std::invalid_argument("conv: input too small for " + weight.name);
  const int n_batch = x.batch();
  const int plane = os.plane();
  const int kk = kernel * kernel;

  Matrix cols(static_cast<Eigen::Index>(in_channels) * kk, static_cast<Eigen::Index>(n_batch) * plane);
  for (int c = 0; c < in_channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = cols.row((c * kernel + ky) * kernel + kx).data();
        for (int n = 0; n < n_batch; ++n) {
          const double* src = x.data.row(n).data() + static_cast<std::ptrdiff_t>(c) * in.plane();
          double* dst = row + static_cast<std::ptrdiff_t>(n) * plane;
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * stride - pad + ky;
            double* drow = dst + static_cast<std::ptrdiff_t>(oy) * os.width;
            if (iy < 0 || iy >= in.height) {
              std::fill(drow, drow + os.width, 0.0);
              continue;
            }
            const double* srow = src + static_cast<std::ptrdiff_t>(iy) * in.width;
            for (int ox = 0; ox < os.width; ++ox) {
              const int ix = ox * stride - pad + kx;
              drow[ox] = (ix >= 0 && ix < in.width) ? srow[ix] : 0.0;
            }
          }
        }
      }
    }
  }

  Matrix y = weight.value * cols;  // out x (batch * plane)
  Tensor out(n_batch, os);
  for (int n = 0; n < n_batch; ++n) {
    for (int o = 0; o < out_channels; ++o) {
      const double b = bias.value(0, o);
      const double* src = y.row(o).data() + static_cast<std::ptrdiff_t>(n) * plane;
      double* dst = out.data.row(n).data() + static_cast<std::ptrdiff_t>(o) * plane;
      for (int i = 0; i < plane; ++i) dst[i] = src[i] + b;
    }
  }
  if (cache) {
    cache->columns = std::move(cols);
    cache->input = in;
  }
  return out;
}

Tensor Conv2d::backward(const Cache& cache, const Tensor& grad_out, bool input_grad) {
  const FeatureShape in = cache.input;
  const FeatureShape os = grad_out.shape;
  const int n_batch = grad_out.batch();
  const int plane = os.plane();

  Matrix dy(out_channels, static_cast<Eigen::Index>(n_batch) * plane);
  for (int n = 0; n < n_batch; ++n)
    for (int o = 0; o < out_channels; ++o) {
      const double* src = grad_out.data.row(n).data() + static_cast<std::ptrdiff_t>(o) * plane;
      std::copy(src, src + plane, dy.row(o).data() + static_cast<std::ptrdiff_t>(n) * plane);
    }
  weight.grad.noalias() += dy * cache.columns.transpose();
  bias.grad += dy.rowwise().sum().transpose();
  if (!input_grad) return {};

  Matrix dcols = weight.value.transpose() * dy;
  Tensor dx(n_batch, in);
  for (int c = 0; c < in_channels; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = dcols.row((c * kernel + ky) * kernel + kx).data();
        for (int n = 0; n < n_batch; ++n) {
          double* dst = dx.data.row(n).data() + static_cast<std::ptrdiff_t>(c) * in.plane();
          const double* src = row + static_cast<std::ptrdiff_t>(n) * plane;
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= in.height) continue;
            double* drow = dst + static_cast<std::ptrdiff_t>(iy) * in.width;
            const double* srow = src + static_cast<std::ptrdiff_t>(oy) * os.width;
            for (int ox = 0; ox < os.width; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < in.width) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
  return dx;
}

// --- Linear -------------------------------------------------------------------------

Linear::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", {out, in}, out, in), bias(name + ".bias", {out}, 1, out),
      in_features(in), out_features(out) {}

void Linear::init(Rng& rng, Init kind) {
  const double sd = init_std(kind, in_features);
  if (sd > 0.0) init_matrix(weight.value, rng, sd); else weight.value.setZero();
  bias.value.setZero();
}

Matrix Linear::forward(const Matrix& x, Cache* cache) const {
  if (x.cols() != in_features) throw std::invalid_argument("linear: feature mismatch for " + weight.name);
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  if (cache) cache->input = x;
  return y;
}

Matrix Linear::backward(const Cache& cache, const Matrix& grad_out, bool input_grad) {
  weight.grad.noalias() += grad_out.transpose() * cache.input;
  bias.grad += grad_out.colwise().sum();
  if (!input_grad) return {};
  return grad_out * weight.value;
}

// --- ChannelAffine ---------------------------------------------------------------------

ChannelAffine::ChannelAffine(const std::string& name, int channels)
    : scale(name + ".scale", {channels}, 1, channels), shift(name + ".shift", {channels}, 1, channels) {
  scale.value.setOnes();
}

Tensor ChannelAffine::forward(const Tensor& x) const {
  Tensor y = x;
  const int plane = x.shape.plane();
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.shape.channels; ++c) {
      double* p = y.data.row(n).data() + static_cast<std::ptrdiff_t>(c) * plane;
      const double s = scale.value(0, c), t = shift.value(0, c);
      for (int i = 0; i < plane; ++i) p[i] = p[i] * s + t;
    }
  return y;
}

Tensor ChannelAffine::backward(const Tensor& input, const Tensor& grad_out) {
  Tensor dx = grad_out;
  const int plane = input.shape.plane();
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.shape.channels; ++c) {
      const double* xi = input.data.row(n).data() + static_cast<std::ptrdiff_t>(c) * plane;
      const double* g = grad_out.data.row(n).data() + static_cast<std::ptrdiff_t>(c) * plane;
      double* d = dx.data.row(n).data() + static_cast<std::ptrdiff_t>(c) * plane;
      double ds = 0.0, dt = 0.0;
      const double s = scale.value(0, c);
      for (int i = 0; i < plane; ++i) {
        ds += g[i] * xi[i];
        dt += g[i];
        d[i] = g[i] * s;
      }
      scale.grad(0, c) += ds;
      shift.grad(0, c) += dt;
    }
  return dx;
}

// --- MaxPool2d -------------------------------------------------------------------------

FeatureShape MaxPool2d::output_shape(FeatureShape in) const {
  return {in.channels, (in.height + 2 * pad_ - kernel_) / stride_ + 1, (in.width + 2 * pad_ - kernel_) / stride_ + 1};
}

Tensor MaxPool2d::forward(const Tensor& x, Cache* cache) const {
  const FeatureShape in = x.shape;
  const FeatureShape os = output_shape(in);
  Tensor out(x.batch(), os);
  if (cache) {
    cache->argmax.assign(static_cast<std::size_t>(x.batch()) * os.size(), -1);
    cache->input = in;
  }
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < in.channels; ++c)
      for (int oy = 0; oy < os.height; ++oy)
        for (int ox = 0; ox < os.width; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          int arg = -1;
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in.height) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in.width) continue;
              const int idx = (c * in.height + iy) * in.width + ix;
              const double v = x.data(n, idx);
              if (v > best) { best = v; arg = idx; }
            }
          }
          const int oidx = (c * os.height + oy) * os.width + ox;
          out.data(n, oidx) = best;
          if (cache) cache->argmax[static_cast<std::size_t>(n) * os.size() + oidx] = arg;
        }
  return out;
}

Tensor MaxPool2d::backward(const Cache& cache, const Tensor& grad_out) const {
  Tensor dx(grad_out.batch(), cache.input);
  const int osize = grad_out.shape.size();
  for (int n = 0; n < grad_out.batch(); ++n)
    for (int i = 0; i < osize; ++i) {
      const int arg = cache.argmax[static_cast<std::size_t>(n) * osize + i];
      if (arg >= 0) dx.data(n, arg) += grad_out.data(n, i);
    }
  return dx;
}

// --- Elementwise helpers -----------------------------------------------------------------

void relu_inplace(Matrix& m) { m = m.cwiseMax(0.0); }

void relu_backward_inplace(const Matrix& output, Matrix& grad) {
  grad = (output.array() > 0.0).select(grad, 0.0);
}

void leaky_relu_inplace(Matrix& m, double slope) { m = (m.array() > 0.0).select(m, slope * m); }

void leaky_relu_backward_inplace(const Matrix& output, Matrix& grad, double slope) {
  grad = (output.array() > 0.0).select(grad, slope * grad);
}

Tensor upsample_nearest(const Tensor& x, int height, int width) {
  Tensor out(x.batch(), {x.shape.channels, height, width});
  for (int n = 0; n < x.batch(); ++n)
    for (int c = 0; c < x.shape.channels; ++c)
      for (int y = 0; y < height; ++y) {
        const int sy = std::min(x.shape.height - 1, y * x.shape.height / height);
        for (int xx = 0; xx < width; ++xx) {
          const int sx = std::min(x.shape.width - 1, xx * x.shape.width / width);
          out.at(n, c, y, xx) = x.at(n, c, sy, sx);
        }
      }
  return out;
}

Tensor upsample_nearest_backward(const Tensor& grad_out, FeatureShape input) {
  Tensor dx(grad_out.batch(), input);
  const int height = grad_out.shape.height, width = grad_out.shape.width;
  for (int n = 0; n < grad_out.batch(); ++n)
    for (int c = 0; c < input.channels; ++c)
      for (int y = 0; y < height; ++y) {
        const int sy = std::min(input.height - 1, y * input.height / height);
        for (int xx = 0; xx < width; ++xx) {
          const int sx = std::min(input.width - 1, xx * input.width / width);
          dx.at(n, c, sy, sx) += grad_out.at(n, c, y, xx);
        }
      }
  return dx;
}

Matrix bilinear_resize_operator(int src_h, int src_w, int dst_h, int dst_w) {
  Matrix op = Matrix::Zero(static_cast<Eigen::Index>(dst_h) * dst_w, static_cast<Eigen::Index>(src_h) * src_w);
  auto axis = [](int src, int dst, int i, int& i0, int& i1, double& f) {
    double s = (i + 0.5) * static_cast<double>(src) / dst - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, src - 1);
    f = s - i0;
  };
  for (int y = 0; y < dst_h; ++y) {
    int y0, y1;
    double fy;
    axis(src_h, dst_h, y, y0, y1, fy);
    for (int x = 0; x < dst_w; ++x) {
      int x0, x1;
      double fx;
      axis(src_w, dst_w, x, x0, x1, fx);
      const int r = y * dst_w + x;
      op(r, y0 * src_w + x0) += (1 - fy) * (1 - fx);
      op(r, y0 * src_w + x1) += (1 - fy) * fx;
      op(r, y1 * src_w + x0) += fy * (1 - fx);
      op(r, y1 * src_w + x1) += fy * fx;
    }
  }
  return op;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      out(i, j) = std::exp(logits(i, j) - mx);
      sum += out(i, j);
    }
    out.row(i) /= sum;
  }
  return out;
}

}  // namespace o2r
