#pragma once

#include <cstddef>
#include <vector>

#include "appsign/errors.hpp"

namespace appsign {

// Dense value container, either flat {n} or channel-major {c, h, w}.
// Data is row-major within each channel.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(t.count(), 0.0);
    return t;
  }

  static Tensor chw(int c, int h, int w) { return zeros({c, h, w}); }
  static Tensor flat(int n) { return zeros({n}); }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    if (t.data_.size() != t.count()) {
      throw ShapeError("tensor: data length does not match shape");
    }
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  bool is_3d() const { return shape_.size() == 3; }
  int channels() const { return is_3d() ? shape_[0] : 1; }
  int height() const { return is_3d() ? shape_[1] : 1; }
  int width() const { return is_3d() ? shape_[2] : static_cast<int>(size()); }
  std::size_t size() const { return data_.size(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Reinterpret as flat, preserving channel-major order.
  Tensor flattened() const {
    Tensor t;
    t.shape_ = {static_cast<int>(size())};
    t.data_ = data_;
    return t;
  }

 private:
  std::size_t count() const {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d <= 0) throw ShapeError("tensor: non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return shape_.empty() ? 0 : n;
  }

  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace appsign
