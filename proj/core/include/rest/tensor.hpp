#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rest {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this leaf
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major double tensor. A Tensor is a handle: copies share storage,
// use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy of the values; the copy is a fresh leaf that keeps the
  // requires_grad flag but drops any accumulated gradient.
  Tensor clone() const;
  // Deep copy detached from gradient tracking.
  Tensor detach() const;
  // Same values under a new shape with equal element count. Recorded on the
  // active tape so gradients flow through.
  Tensor reshape(Shape new_shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Bitwise equality of shapes and values.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace rest
