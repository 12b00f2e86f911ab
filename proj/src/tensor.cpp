#include "melnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace melnet {

namespace detail {

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty when absent
  std::shared_ptr<Node> grad_fn;
  // Set on aliases: values live in `base`, `data` stays empty.
  std::shared_ptr<TensorImpl> base;

  std::vector<double>& values() { return base ? base->values() : data; }
};

}  // namespace detail

struct TensorAccess {
  static const std::shared_ptr<detail::TensorImpl>& impl(const Tensor& t) { return t.impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl) { return Tensor(std::move(impl)); }
};

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : impl_(std::make_shared<detail::TensorImpl>()) { impl_->data.assign(1, 0.0); }

Tensor::Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(melnet::numel(shape), value);
  return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (melnet::numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + melnet::to_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) throw ShapeError("axis out of range for " + melnet::to_string(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->values().size(); }

std::span<const double> Tensor::data() const { return impl_->values(); }
std::span<double> Tensor::mutable_data() { return impl_->values(); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + melnet::to_string(shape()));
  return impl_->values()[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw GradError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw GradError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.size() != numel()) impl_->grad.assign(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from_data(impl_->shape, impl_->values(), false); }

Tensor Tensor::alias_without_grad() const {
  if (!impl_->requires_grad) return *this;
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->base = impl_->base ? impl_->base : impl_;
  return Tensor(std::move(impl));
}

bool Tensor::all_finite() const {
  const auto v = data();
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void Tensor::backward() const {
  using detail::TensorImpl;
  if (numel() != 1) {
    throw GradError("backward() requires a scalar root, got shape " + melnet::to_string(shape()));
  }
  if (!impl_->requires_grad) throw GradError("backward() on a tensor that does not require grad");
  if (impl_->grad_fn && impl_->grad_fn->consumed) throw GradError("graph already consumed by backward()");

  // Post-order DFS gives inputs before consumers; iterate it in reverse.
  // Holding owners keeps interior tensors alive while released nodes drop
  // their input references.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      const std::shared_ptr<TensorImpl>& child = fn->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        if (child->grad_fn && child->grad_fn->consumed) {
          throw GradError("graph already consumed by backward()");
        }
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  if (impl_->grad.size() != 1) impl_->grad.assign(1, 0.0);
  impl_->grad[0] += 1.0;

  std::vector<double*> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = it->get();
    if (!node->grad_fn) continue;
    auto& fn = *node->grad_fn;
    grad_in.clear();
    for (const auto& input : fn.inputs) {
      if (!input->requires_grad) {
        grad_in.push_back(nullptr);
        continue;
      }
      const std::size_t len = input->values().size();
      if (input->grad.size() != len) input->grad.assign(len, 0.0);
      grad_in.push_back(input->grad.data());
    }
    if (node->grad.size() != node->values().size()) node->grad.assign(node->values().size(), 0.0);
    fn.backward(node->grad, grad_in);
    fn.consumed = true;
    fn.backward = nullptr;
    fn.inputs.clear();
    if (node != impl_.get()) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return out;
  auto node = std::make_shared<detail::Node>();
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(TensorAccess::impl(t));
  node->backward = std::move(backward);
  const auto& impl = TensorAccess::impl(out);
  impl->requires_grad = true;
  impl->grad_fn = std::move(node);
  return out;
}

}  // namespace melnet
