#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace melnet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {
struct TensorImpl;
struct Node;
}  // namespace detail

/// Dense row-major tensor of doubles taking part in reverse-mode
/// differentiation.
///
/// A Tensor is a shared handle: copies refer to the same storage and graph
/// node. Results of operations on tensors that require gradients record a
/// node holding the backward rule; `backward()` on a scalar result walks the
/// recorded graph once in reverse topological order.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view of the values. Intended for leaves (parameters, inputs);
  /// writing into a recorded intermediate invalidates its graph.
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  /// Accumulated gradient; throws GradError when none is present.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Fresh leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;

  /// Handle onto the same values that never records graph nodes. Writes
  /// through either handle are visible to both.
  Tensor alias_without_grad() const;

  bool all_finite() const;

  /// Populates gradients of every requires_grad leaf reachable from this
  /// scalar. Leaf gradients accumulate across calls; interior nodes are
  /// released, so a second call on the same graph throws GradError.
  void backward() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend struct TensorAccess;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Backward rule of a recorded operation. `grad_out` is d(root)/d(output);
/// `grad_in[i]` points at input i's gradient buffer (accumulate into it) or
/// is null when that input does not need a gradient.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

/// Creates an operation result. A graph node is recorded only when at least
/// one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward);

}  // namespace melnet
