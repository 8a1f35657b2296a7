// Copyright (c) 2026 the geoattn authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major double tensors with shared storage. A Tensor is a cheap
// value-semantic handle: copies alias the same data and grad buffers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace geoattn {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(count(shape_), fill)) {}

  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (data_->size() != count(shape_))
      throw std::invalid_argument("Tensor: shape does not match value count");
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_ ? data_->size() : 0; }

  // 2-D helpers; row-major layout
  int rows() const { return shape_.size() == 2 ? shape_[0] : (shape_.size() == 1 ? shape_[0] : fail_dims()); }
  int cols() const { return shape_.size() == 2 ? shape_[1] : (shape_.size() == 1 ? 1 : fail_dims()); }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  double& operator[](std::size_t i) { return (*data_)[i]; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double& at(int r, int c) { return (*data_)[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return (*data_)[static_cast<std::size_t>(r) * shape_[1] + c]; }

  bool defined() const { return static_cast<bool>(data_); }
  bool same_buffer(const Tensor& o) const { return data_ == o.data_; }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on = true) {
    requires_grad_ = on;
    if (on) ensure_grad();
    return *this;
  }

  // Gradient buffers are shared auxiliary state: accessible and mutable
  // through const handles, exactly like the value buffer of a copied handle.
  bool has_grad() const { return static_cast<bool>(grad_); }
  void ensure_grad() const {
    if (!grad_) grad_ = std::make_shared<std::vector<double>>(numel(), 0.0);
  }
  void zero_grad() const {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
  }
  double* grad() const { ensure_grad(); return grad_->data(); }
  const std::vector<double>& grad_vec() const {
    if (!grad_) throw std::logic_error("Tensor: grad not allocated");
    return *grad_;
  }

  // deep copy of values (fresh buffers, no grad)
  Tensor clone() const {
    Tensor t(shape_, *data_);
    return t;
  }

  // shares buffers, reinterprets shape
  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != numel())
      throw std::invalid_argument("Tensor: reshape element count mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }

 private:
  static int fail_dims() { throw std::logic_error("Tensor: not 1-D/2-D"); }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  mutable std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor::shape_str(a.shape()) + " vs " +
                                Tensor::shape_str(b.shape()));
}

inline void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite())
    throw std::domain_error(std::string(op) + ": non-finite input");
}

}  // namespace geoattn
