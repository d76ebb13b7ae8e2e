#include "rvuda/adapter_net.hpp"

#include <cmath>
#include <random>

#include "rvuda/error.hpp"

namespace rvuda {

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::adapter: return "adapter";
    case ParamGroup::decoder: return "decoder";
    case ParamGroup::aux_decoder: return "aux_decoder";
  }
  return "unknown";
}

void ModelConfig::validate() const {
  if (classes < 1) throw Error(Errc::invalid_argument, "model needs at least one class");
  if (widths.empty()) throw Error(Errc::invalid_argument, "model needs at least one encoder stage");
  for (int w : widths) {
    if (w < 1) throw Error(Errc::invalid_argument, "encoder widths must be positive");
  }
  if (!(leaky_slope >= 0.0)) throw Error(Errc::invalid_argument, "leaky slope must be >= 0");
}

namespace {

// Output width of decoder stage j, mirroring the encoder widths.
int decoder_width(const std::vector<int>& widths, int j) {
  const int e = static_cast<int>(widths.size());
  return widths[std::max(0, e - 2 - j)];
}

template <typename T>
ConvLayer<T> make_conv(int in, int out, int k, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>((in + out) * k * k));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(static_cast<size_t>(out) * in * k * k);
  for (T& v : w) v = static_cast<T>(dist(rng));
  ConvLayer<T> layer;
  layer.weight = ad::Tensor<T>(ad::Shape{out, in, k, k}, std::move(w), true);
  layer.bias = ad::Tensor<T>(ad::Shape{out}, T{0}, true);
  layer.padding = k / 2;
  return layer;
}

template <typename T>
ConvLayer<T> clone_conv(const ConvLayer<T>& c) {
  ConvLayer<T> out{c.weight.clone(), c.bias.clone(), c.padding};
  out.weight.set_requires_grad(true);
  out.bias.set_requires_grad(true);
  return out;
}

size_t conv_params(int in, int out, int k) { return static_cast<size_t>(out) * in * k * k + out; }

}  // namespace

template <typename T>
ad::Tensor<T> ga_forward(const GatedAdapter<T>& adapter, const ad::Tensor<T>& x) {
  if (x.ndim() != 4 || x.dim(1) != adapter.channels()) {
    throw Error(Errc::channel_mismatch, "gated adapter expects " + std::to_string(adapter.channels()) +
                                            " channels, got " + ad::shape_str(x.shape()));
  }
  return ad::add(x, ad::scale(adapter.gamma, adapter.alpha(x)));
}

template <typename T>
UdaModel<T> UdaModel<T>::init(const ModelConfig& cfg) {
  cfg.validate();
  UdaModel model;
  model.cfg_ = cfg;
  std::mt19937_64 rng(cfg.seed);
  int in = kInputChannels;
  for (int width : cfg.widths) {
    EncoderStage stage{make_conv<T>(in, width, 3, rng), make_conv<T>(width, width, 3, rng)};
    model.encoder_.push_back(std::move(stage));
    for (int a = 0; a < 2; ++a) {
      GatedAdapter<T> ga{make_conv<T>(width, width, 1, rng), ad::Tensor<T>::scalar(T{0}, true)};
      model.adapters_.push_back(std::move(ga));
    }
    in = width;
  }
  for (Decoder* dec : {&model.seg_, &model.aux_}) {
    int cur = cfg.widths.back();
    for (int j = 0; j < cfg.stages(); ++j) {
      const int out = decoder_width(cfg.widths, j);
      dec->stages.push_back(make_conv<T>(cur, out, 3, rng));
      cur = out;
    }
    dec->head = make_conv<T>(cur, dec == &model.seg_ ? cfg.classes : kInputChannels, 1, rng);
  }
  return model;
}

template <typename T>
void UdaModel<T>::check_input(const ad::Tensor<T>& image) const {
  if (!image.defined() || image.ndim() != 4 || image.dim(1) != kInputChannels) {
    throw Error(Errc::shape_mismatch, "model input must be (N,5,H,W), got " +
                                          (image.defined() ? ad::shape_str(image.shape()) : std::string("undefined")));
  }
  const int factor = 1 << stages();
  if (image.dim(2) % factor != 0 || image.dim(3) % factor != 0) {
    throw Error(Errc::indivisible_dims, "input height and width must be divisible by " + std::to_string(factor) +
                                            ", got " + ad::shape_str(image.shape()));
  }
}

template <typename T>
ad::Tensor<T> UdaModel<T>::encode(const ad::Tensor<T>& image, bool ga_enabled) const {
  check_input(image);
  const T slope = static_cast<T>(cfg_.leaky_slope);
  ad::Tensor<T> x = image;
  size_t a = 0;
  for (const EncoderStage& stage : encoder_) {
    for (const ConvLayer<T>* conv : {&stage.conv1, &stage.conv2}) {
      x = (*conv)(x);
      if (ga_enabled) {
        x = ga_forward(adapters_[a], x);
        ++ga_calls_;
      }
      ++a;
      x = ad::leaky_relu(x, slope);
    }
    x = ad::avg_pool2(x);
  }
  return x;
}

template <typename T>
ad::Tensor<T> UdaModel<T>::decode(const Decoder& dec, const ad::Tensor<T>& features) const {
  const T slope = static_cast<T>(cfg_.leaky_slope);
  ad::Tensor<T> x = features;
  for (const ConvLayer<T>& conv : dec.stages) x = ad::leaky_relu(conv(ad::upsample_nearest2(x)), slope);
  return dec.head(x);
}

template <typename T>
ad::Tensor<T> UdaModel<T>::forward_seg(const ad::Tensor<T>& image, bool ga_enabled) const {
  return decode(seg_, encode(image, ga_enabled));
}

template <typename T>
ad::Tensor<T> UdaModel<T>::forward_aux(const ad::Tensor<T>& image, bool ga_enabled) const {
  return decode(aux_, encode(image, ga_enabled));
}

template <typename T>
std::vector<ModelParam<T>> UdaModel<T>::named_parameters() const {
  std::vector<ModelParam<T>> params;
  auto add_conv = [&](const std::string& prefix, ParamGroup group, const ConvLayer<T>& conv) {
    params.push_back({prefix + ".weight", group, conv.weight, true});
    params.push_back({prefix + ".bias", group, conv.bias, false});
  };
  for (size_t i = 0; i < encoder_.size(); ++i) {
    add_conv("enc." + std::to_string(i) + ".conv1", ParamGroup::encoder, encoder_[i].conv1);
    add_conv("enc." + std::to_string(i) + ".conv2", ParamGroup::encoder, encoder_[i].conv2);
  }
  for (size_t i = 0; i < adapters_.size(); ++i) {
    const std::string prefix = "ga." + std::to_string(i);
    add_conv(prefix + ".alpha", ParamGroup::adapter, adapters_[i].alpha);
    params.push_back({prefix + ".gamma", ParamGroup::adapter, adapters_[i].gamma, false});
  }
  for (const auto& [prefix, group, dec] : {std::tuple{std::string("dec"), ParamGroup::decoder, &seg_},
                                           std::tuple{std::string("aux"), ParamGroup::aux_decoder, &aux_}}) {
    for (size_t j = 0; j < dec->stages.size(); ++j) add_conv(prefix + "." + std::to_string(j), group, dec->stages[j]);
    add_conv(prefix + ".head", group, dec->head);
  }
  return params;
}

template <typename T>
std::vector<ad::ParamRef<T>> UdaModel<T>::optimizer_params() const {
  std::vector<ad::ParamRef<T>> refs;
  for (const auto& p : named_parameters()) refs.push_back({p.name, p.tensor, p.decay});
  return refs;
}

template <typename T>
size_t UdaModel<T>::parameter_count() const {
  size_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
UdaModel<T> UdaModel<T>::clone() const {
  UdaModel copy;
  copy.cfg_ = cfg_;
  for (const EncoderStage& s : encoder_) copy.encoder_.push_back({clone_conv(s.conv1), clone_conv(s.conv2)});
  for (const GatedAdapter<T>& ga : adapters_) {
    GatedAdapter<T> c{clone_conv(ga.alpha), ga.gamma.clone()};
    c.gamma.set_requires_grad(true);
    copy.adapters_.push_back(std::move(c));
  }
  for (auto [src, dst] : {std::pair{&seg_, &copy.seg_}, std::pair{&aux_, &copy.aux_}}) {
    for (const ConvLayer<T>& conv : src->stages) dst->stages.push_back(clone_conv(conv));
    dst->head = clone_conv(src->head);
  }
  return copy;
}

size_t expected_parameter_count(const ModelConfig& cfg) {
  size_t n = 0;
  int in = kInputChannels;
  for (int w : cfg.widths) {
    n += conv_params(in, w, 3) + conv_params(w, w, 3);
    n += 2 * (conv_params(w, w, 1) + 1);
    in = w;
  }
  for (int head_out : {cfg.classes, kInputChannels}) {
    int cur = cfg.widths.back();
    for (int j = 0; j < cfg.stages(); ++j) {
      const int out = decoder_width(cfg.widths, j);
      n += conv_params(cur, out, 3);
      cur = out;
    }
    n += conv_params(cur, head_out, 1);
  }
  return n;
}

template class UdaModel<float>;
template class UdaModel<double>;
template ad::Tensor<float> ga_forward<float>(const GatedAdapter<float>&, const ad::Tensor<float>&);
template ad::Tensor<double> ga_forward<double>(const GatedAdapter<double>&, const ad::Tensor<double>&);

}  // namespace rvuda
