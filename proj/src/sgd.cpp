#include "rvuda/sgd.hpp"

#include <algorithm>

#include "rvuda/error.hpp"

namespace rvuda::ad {

void SgdConfig::validate() const {
  if (!(lr0 > 0.0)) throw Error(Errc::invalid_argument, "lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(Errc::invalid_argument, "momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw Error(Errc::invalid_argument, "weight_decay must be >= 0");
  if (warmup_steps < 0) throw Error(Errc::invalid_argument, "warmup_steps must be >= 0");
}

template <typename T>
Sgd<T>::Sgd(SgdConfig cfg) : cfg_(cfg) {
  cfg_.validate();
}

template <typename T>
double Sgd<T>::lr_at(int64_t step) const {
  if (step < cfg_.warmup_steps) {
    return cfg_.lr0 * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(cfg_.warmup_steps));
  }
  return cfg_.lr0;
}

template <typename T>
void Sgd<T>::step(std::span<ParamRef<T>> params) {
  const T lr = static_cast<T>(current_lr());
  const T momentum = static_cast<T>(cfg_.momentum);
  for (ParamRef<T>& p : params) {
    if (!p.tensor.has_grad()) continue;
    const T wd = p.decay ? static_cast<T>(cfg_.weight_decay) : T{0};
    auto data = p.tensor.data();
    const auto grad = p.tensor.grad();
    auto& v = velocity_[p.name];
    if (v.size() != data.size()) v.assign(data.size(), T{0});
    for (size_t i = 0; i < data.size(); ++i) {
      v[i] = momentum * v[i] + grad[i] + wd * data[i];
      data[i] -= lr * v[i];
    }
  }
  for (ParamRef<T>& p : params) p.tensor.clear_grad();
  ++step_count_;
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace rvuda::ad
