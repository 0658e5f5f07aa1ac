#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ape/errors.hpp"

namespace ape {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

// Dense row-major tensor handle. Copies share storage (shallow); the autodiff
// tape relies on that to accumulate gradients into leaf parameters. The grad
// buffer exists iff requires_grad and always matches the value shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(Shape shape, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(check_numel(shape_), T(0))),
        requires_grad_(requires_grad) {
    if (requires_grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    for (auto& v : *t.data_) v = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (shape_numel(t.shape_) != static_cast<std::int64_t>(values.size())) {
      throw DimensionError("tensor init: shape " + shape_str(t.shape_) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    t.requires_grad_ = requires_grad;
    if (requires_grad) t.grad_ = std::make_shared<std::vector<T>>(t.data_->size(), T(0));
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->size()); }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  std::vector<T>& values() { return *data_; }
  const std::vector<T>& values() const { return *data_; }

  bool requires_grad() const { return requires_grad_; }

  // Turns a plain tensor into a trainable leaf.
  void set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
    if (!on) grad_.reset();
  }

  T* grad() { return grad_ ? grad_->data() : nullptr; }
  const T* grad() const { return grad_ ? grad_->data() : nullptr; }
  std::vector<T>& grad_values() {
    if (!grad_) throw Error("tensor has no gradient buffer");
    return *grad_;
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  // True when two handles alias the same value storage.
  bool shares_storage_with(const Tensor& other) const { return data_ == other.data_; }

  T item() const {
    if (numel() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    }
    return (*data_)[0];
  }

  T at(std::int64_t flat) const { return (*data_)[static_cast<std::size_t>(flat)]; }
  T& at(std::int64_t flat) { return (*data_)[static_cast<std::size_t>(flat)]; }

  // Deep copy; the clone never aliases this tensor.
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    t.requires_grad_ = requires_grad_;
    if (grad_) t.grad_ = std::make_shared<std::vector<T>>(*grad_);
    return t;
  }

 private:
  static std::size_t check_numel(const Shape& s) {
    for (auto d : s) {
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(s));
    }
    return static_cast<std::size_t>(shape_numel(s));
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
  bool requires_grad_ = false;
};

}  // namespace ape
