#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rvuda/ops.hpp"
#include "rvuda/sgd.hpp"
#include "rvuda/tensor.hpp"

namespace rvuda {

enum class ParamGroup { encoder, adapter, decoder, aux_decoder };

const char* group_name(ParamGroup group);

template <typename T>
struct ConvLayer {
  ad::Tensor<T> weight;  // (O, C, k, k)
  ad::Tensor<T> bias;    // (O)
  int padding = 0;

  ad::Tensor<T> operator()(const ad::Tensor<T>& x) const { return ad::conv2d(x, weight, bias, 1, padding); }
  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }
};

/// Residual gate around a 1x1 convolution: g(x) = x + gamma * alpha(x).
template <typename T>
struct GatedAdapter {
  ConvLayer<T> alpha;
  ad::Tensor<T> gamma;  // one element, starts at 0

  int channels() const { return alpha.out_channels(); }
};

template <typename T>
ad::Tensor<T> ga_forward(const GatedAdapter<T>& adapter, const ad::Tensor<T>& x);

struct ModelConfig {
  int classes = 4;
  std::vector<int> widths{16, 32, 64};  // one entry per encoder stage
  double leaky_slope = 0.1;
  uint64_t seed = 1;

  int stages() const { return static_cast<int>(widths.size()); }
  void validate() const;
};

inline constexpr int kInputChannels = 5;

template <typename T>
struct ModelParam {
  std::string name;
  ParamGroup group;
  ad::Tensor<T> tensor;
  bool decay;
};

/// Encoder with gated adapters, segmentation decoder and completion decoder.
///
/// Encoder stage i: conv3x3 -> GA -> leaky -> conv3x3 -> GA -> leaky -> pool.
/// Decoders: E x (upsample -> conv3x3 -> leaky) then a 1x1 head producing
/// `classes` (segmentation) or 5 (completion) channels. With GA disabled the
/// adapters are bypassed and never read.
///
/// Copies share parameter storage; use clone() for an independent model.
template <typename T>
class UdaModel {
 public:
  static UdaModel init(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  int stages() const { return cfg_.stages(); }
  int adapter_count() const { return static_cast<int>(adapters_.size()); }
  std::vector<GatedAdapter<T>>& adapters() { return adapters_; }
  const std::vector<GatedAdapter<T>>& adapters() const { return adapters_; }

  ad::Tensor<T> encode(const ad::Tensor<T>& image, bool ga_enabled) const;
  /// Logits (N, classes, H, W) for images (N, 5, H, W).
  ad::Tensor<T> forward_seg(const ad::Tensor<T>& image, bool ga_enabled) const;
  /// Completion (N, 5, H, W).
  ad::Tensor<T> forward_aux(const ad::Tensor<T>& image, bool ga_enabled = true) const;

  std::vector<ModelParam<T>> named_parameters() const;
  std::vector<ad::ParamRef<T>> optimizer_params() const;
  size_t parameter_count() const;

  UdaModel clone() const;

  /// Number of adapter evaluations since construction.
  uint64_t ga_invocations() const { return ga_calls_; }

 private:
  struct EncoderStage {
    ConvLayer<T> conv1;
    ConvLayer<T> conv2;
  };
  struct Decoder {
    std::vector<ConvLayer<T>> stages;
    ConvLayer<T> head;
  };

  ad::Tensor<T> decode(const Decoder& dec, const ad::Tensor<T>& features) const;
  void check_input(const ad::Tensor<T>& image) const;

  ModelConfig cfg_;
  std::vector<EncoderStage> encoder_;
  std::vector<GatedAdapter<T>> adapters_;
  Decoder seg_;
  Decoder aux_;
  mutable uint64_t ga_calls_ = 0;
};

/// Closed-form parameter count of UdaModel for the given configuration.
size_t expected_parameter_count(const ModelConfig& cfg);

/// Checkpoint layout (little endian): magic "RVUDACKP", u32 version, u64 step
/// count, u32 record count, then per parameter: u32 name length, name bytes,
/// u32 rank, u32 dims, float32 payload.
template <typename T>
void save_checkpoint(const UdaModel<T>& model, int64_t step_count, const std::filesystem::path& path);

/// Loads parameters by name into `model`; returns the stored step count.
/// Errc::corrupt_header on bad magic/version/truncation, Errc::shape_mismatch
/// on missing, extra or differently shaped parameters.
template <typename T>
int64_t load_checkpoint(UdaModel<T>& model, const std::filesystem::path& path);

extern template class UdaModel<float>;
extern template class UdaModel<double>;
extern template ad::Tensor<float> ga_forward<float>(const GatedAdapter<float>&, const ad::Tensor<float>&);
extern template ad::Tensor<double> ga_forward<double>(const GatedAdapter<double>&, const ad::Tensor<double>&);
extern template void save_checkpoint<float>(const UdaModel<float>&, int64_t, const std::filesystem::path&);
extern template void save_checkpoint<double>(const UdaModel<double>&, int64_t, const std::filesystem::path&);
extern template int64_t load_checkpoint<float>(UdaModel<float>&, const std::filesystem::path&);
extern template int64_t load_checkpoint<double>(UdaModel<double>&, const std::filesystem::path&);

}  // namespace rvuda
