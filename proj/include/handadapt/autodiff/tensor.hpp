#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "handadapt/autodiff/errors.hpp"

namespace handadapt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << 'x';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

/// Dense row-major array of 64-bit floats with an optional gradient slot.
///
/// A Tensor is a plain value: copying it copies the data. Leaves that
/// should receive gradients set requires_grad; Graph::backward then fills
/// grad with a buffer of the same length as data.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  // Same storage viewed under another shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool on) {
    requires_grad_ = on;
    if (!on) grad_.reset();
    return *this;
  }

  const std::optional<std::vector<double>>& grad() const { return grad_; }
  std::optional<std::vector<double>>& grad() { return grad_; }
  void zero_grad() { grad_.reset(); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

// Bitwise comparison, unlike operator== which treats -0.0 == 0.0.
inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  return a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Row i of the leading (batch) axis, with that axis dropped.
inline Tensor instance(const Tensor& batch, std::size_t i) {
  if (batch.rank() == 0 || i >= batch.dim(0)) throw ShapeError("instance: index out of range for " + shape_str(batch.shape()));
  Shape inner(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = shape_numel(inner);
  return Tensor(std::move(inner), std::vector<double>(batch.data().begin() + static_cast<long>(i * n),
                                                      batch.data().begin() + static_cast<long>((i + 1) * n)));
}

// Inverse of instance(): stacks equally shaped tensors along a new leading axis.
inline Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no items");
  Shape shape{items.size()};
  shape.insert(shape.end(), items[0].shape().begin(), items[0].shape().end());
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  for (const auto& t : items) {
    if (t.shape() != items[0].shape()) throw ShapeError("stack: mixed shapes " + shape_str(t.shape()) + " vs " + shape_str(items[0].shape()));
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* where) {
  if (a != b) {
    throw ShapeError(std::string(where) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace handadapt
