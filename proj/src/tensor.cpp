#include "rvuda/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "rvuda/error.hpp"

namespace rvuda::ad {

namespace {
thread_local bool g_grad_enabled = true;
}

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error(Errc::shape_mismatch, "tensor dimensions must be positive, got " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream s;
  s << '(';
  for (size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << ')';
  return s.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : s_(std::make_shared<TensorStorage<T>>()) {
  const size_t n = shape_numel(shape);
  s_->shape = std::move(shape);
  s_->data.assign(n, fill);
  s_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) : s_(std::make_shared<TensorStorage<T>>()) {
  if (shape_numel(shape) != data.size())
    throw Error(Errc::shape_mismatch, "data length does not match shape " + shape_str(shape));
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  s_->requires_grad = requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw Error(Errc::shape_mismatch, "item() on tensor of shape " + shape_str(shape()));
  return s_->data[0];
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() const {
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T{0});
  return s_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(s_->shape, s_->data, false);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw Error(Errc::non_scalar_loss, "backward() needs a scalar loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Tensor<T>> order;
  std::unordered_set<const void*> visited;
  std::vector<std::pair<Tensor<T>, size_t>> stack;
  stack.emplace_back(loss, 0);
  visited.insert(loss.id());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& node = t.node();
    if (node && next < node->inputs.size()) {
      const Tensor<T>& in = node->inputs[next++];
      if (in.requires_grad() && visited.insert(in.id()).second) stack.emplace_back(in, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  Tensor<T> root = loss;
  root.mutable_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor<T>& t = *it;
    if (t.node() && t.has_grad()) t.node()->backward(t.grad());
  }
  // Release the graph; interior tensors drop their gradients, leaves keep them.
  for (Tensor<T>& t : order) {
    if (t.node()) {
      t.set_node(nullptr);
      t.clear_grad();
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace rvuda::ad
