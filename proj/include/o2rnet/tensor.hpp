#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace o2r {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;

  int plane() const { return height * width; }
  int size() const { return channels * height * width; }
  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

/// A batch of feature maps: one row per sample, laid out channel-major (C, H, W).
struct Tensor {
  Matrix data;
  FeatureShape shape;

  Tensor() = default;
  Tensor(int batch, FeatureShape s) : data(Matrix::Zero(batch, s.size())), shape(s) {}
  Tensor(Matrix d, FeatureShape s) : data(std::move(d)), shape(s) {}

  int batch() const { return static_cast<int>(data.rows()); }
  double& at(int n, int c, int y, int x) { return data(n, (c * shape.height + y) * shape.width + x); }
  double at(int n, int c, int y, int x) const { return data(n, (c * shape.height + y) * shape.width + x); }
};

/// Learnable parameter with its accumulated gradient.
struct Param {
  std::string name;
  std::vector<int> shape;  // logical shape, recorded in checkpoints
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, std::vector<int> logical, int rows, int cols)
      : name(std::move(n)), shape(std::move(logical)), value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)) {}

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

bool all_finite(const Matrix& m);

}  // namespace o2r
