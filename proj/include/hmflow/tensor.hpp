#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hmflow/errors.hpp"

namespace hmflow {

// Dense row-major tensor of doubles. Rank stays small: scalars, bias
// vectors, {C,H,W} feature maps and {O,I,Kh,Kw} convolution kernels.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, double fill) : Tensor(std::move(shape)) {
    for (double& v : data_) v = fill;
  }

  static Tensor scalar(double v) {
    Tensor t(std::vector<int>{});
    t.data_.assign(1, v);
    return t;
  }
  static Tensor chw(int c, int h, int w) { return Tensor({c, h, w}); }

  bool defined() const { return !data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // {C,H,W} accessors
  double& at(int c, int y, int x) {
    assert(rank() == 3);
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int c, int y, int x) const {
    return const_cast<Tensor*>(this)->at(c, y, x);
  }
  // {O,I,Kh,Kw} accessors
  double& at4(int a, int b, int c, int d) {
    assert(rank() == 4);
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) *
                     shape_[3] +
                 d];
  }

  void fill(double v) {
    for (double& x : data_) x = v;
  }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // this += a * other
  void axpy(double a, const Tensor& other) {
    assert(same_shape(other));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * other.data_[i];
  }

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative tensor dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace hmflow
