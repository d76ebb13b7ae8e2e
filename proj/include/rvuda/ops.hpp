#pragma once

// Differentiable operations. Image tensors are NCHW.

#include <cstdint>
#include <span>

#include "rvuda/tensor.hpp"

namespace rvuda::ad {

/// Cross-correlation with zero padding. x: (N,C,H,W), weight: (O,C,k,k), bias: (O).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride = 1,
                 int padding = 0);

/// max(x, slope * x); the derivative at exactly 0 is `slope`.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.1));

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y);

/// Elementwise product of equal-shape tensors.
template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y);

/// gamma * t for a one-element gamma; differentiable in both.
template <typename T>
Tensor<T> scale(const Tensor<T>& gamma, const Tensor<T>& t);

/// c * t for a constant c.
template <typename T>
Tensor<T> mul_const(const Tensor<T>& t, T c);

/// 2x2 mean pooling over H and W; both must be even.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);

/// Nearest-neighbor upsampling by 2 in H and W.
template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x);

/// Weighted cross-entropy averaged over pixels with valid != 0 and
/// label != ignore_label. logits: (N,C,H,W); labels, valid: N*H*W values.
/// Returns a constant 0 when no pixel qualifies.
template <typename T>
Tensor<T> softmax_xent_masked(const Tensor<T>& logits, std::span<const int32_t> labels,
                              std::span<const uint8_t> valid, std::span<const T> class_weights,
                              int32_t ignore_label);

/// Squared error summed over valid pixels and all channels, divided by
/// (valid pixels * channels). pred, target: (N,C,H,W); valid: N*H*W values.
/// The target is treated as a constant.
template <typename T>
Tensor<T> mse_masked(const Tensor<T>& pred, const Tensor<T>& target, std::span<const uint8_t> valid);

#define RVUDA_DECLARE_OPS(T)                                                                                     \
  extern template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);          \
  extern template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                                  \
  extern template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  extern template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                          \
  extern template Tensor<T> scale<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  extern template Tensor<T> mul_const<T>(const Tensor<T>&, T);                                                   \
  extern template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                                      \
  extern template Tensor<T> upsample_nearest2<T>(const Tensor<T>&);                                              \
  extern template Tensor<T> softmax_xent_masked<T>(const Tensor<T>&, std::span<const int32_t>,                   \
                                                   std::span<const uint8_t>, std::span<const T>, int32_t);      \
  extern template Tensor<T> mse_masked<T>(const Tensor<T>&, const Tensor<T>&, std::span<const uint8_t>);

RVUDA_DECLARE_OPS(float)
RVUDA_DECLARE_OPS(double)
#undef RVUDA_DECLARE_OPS

}  // namespace rvuda::ad
