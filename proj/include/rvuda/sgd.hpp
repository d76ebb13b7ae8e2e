#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rvuda/tensor.hpp"

namespace rvuda::ad {

struct SgdConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int64_t warmup_steps = 0;

  void validate() const;
};

/// A named parameter as seen by the optimizer. `decay` selects whether weight
/// decay applies.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T> tensor;
  bool decay = true;
};

/// SGD with momentum, coupled weight decay and a linear warmup:
///   lr(t) = lr0 * min(1, (t+1)/warmup) while t < warmup, lr0 afterwards
///   v <- momentum*v + grad + wd*param;  param <- param - lr*v
/// Parameters without a gradient buffer are skipped (their velocity is kept).
template <typename T>
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg = {});

  const SgdConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t step) { step_count_ = step; }

  double lr_at(int64_t step) const;
  double current_lr() const { return lr_at(step_count_); }

  /// Applies one update and clears every parameter's gradient.
  void step(std::span<ParamRef<T>> params);

 private:
  SgdConfig cfg_;
  int64_t step_count_ = 0;
  std::unordered_map<std::string, std::vector<T>> velocity_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace rvuda::ad
