#pragma once

// Dense row-major tensors with reverse-mode gradients.
//
// A Tensor is a shared handle: copies alias the same storage, matching how
// parameters are referenced from both the model and the optimizer. Each op
// that produces a gradient-carrying output attaches a GradNode holding its
// inputs and a backward closure; backward() walks those nodes from a scalar
// loss and releases them afterwards.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rvuda::ad {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor;

template <typename T>
struct GradNode {
  std::vector<Tensor<T>> inputs;
  // Receives the output gradient and accumulates into the inputs.
  std::function<void(std::span<const T>)> backward;
};

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> node;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}, bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor scalar(T value, bool requires_grad = false) { return Tensor(Shape{1}, value, requires_grad); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int dim(size_t i) const { return s_->shape.at(i); }
  size_t ndim() const { return s_->shape.size(); }
  size_t numel() const { return s_->data.size(); }

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T item() const;

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) { s_->requires_grad = on; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const T> grad() const { return s_->grad; }
  /// Gradient buffer, zero-allocated on first use.
  std::span<T> mutable_grad() const;
  /// Drops the gradient buffer; the tensor then reports has_grad() == false.
  void clear_grad() { std::vector<T>().swap(s_->grad); }

  const std::shared_ptr<GradNode<T>>& node() const { return s_->node; }
  void set_node(std::shared_ptr<GradNode<T>> node) { s_->node = std::move(node); }

  /// Deep copy without gradient or graph history.
  Tensor clone() const;
  /// Same data, fresh storage, no history.
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  const void* id() const { return s_.get(); }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

/// Whether ops record graph nodes on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad,
/// then frees the recorded graph. Throws Errc::non_scalar_loss unless
/// loss.numel() == 1.
template <typename T>
void backward(const Tensor<T>& loss);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(const Tensor<float>&);
extern template void backward<double>(const Tensor<double>&);

}  // namespace rvuda::ad
