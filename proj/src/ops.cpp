#include "rvuda/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "rvuda/error.hpp"

namespace rvuda::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Wraps freshly computed data into an output tensor, attaching a graph node
// when any input takes part in differentiation.
template <typename T, typename Backward>
Tensor<T> make_output(Shape shape, std::vector<T> data, std::vector<Tensor<T>> inputs, Backward&& bw) {
  bool track = false;
  if (grad_enabled()) {
    track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.requires_grad(); });
  }
  Tensor<T> out(std::move(shape), std::move(data), track);
  if (track) {
    auto node = std::make_shared<GradNode<T>>();
    node->inputs = std::move(inputs);
    node->backward = std::forward<Backward>(bw);
    out.set_node(std::move(node));
  }
  return out;
}

void require(bool ok, Errc code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  require(x.defined() && x.ndim() == 4, Errc::shape_mismatch, std::string(op) + " expects an NCHW tensor");
}

template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* col) {
  const size_t plane = static_cast<size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* xc = x + static_cast<size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          T* dst = row + static_cast<size_t>(oh) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src = xc + static_cast<size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < width) ? src[iw] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
                T* x) {
  const size_t plane = static_cast<size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* xc = x + static_cast<size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + (static_cast<size_t>(c) * k * k + ki * k + kj) * plane;
        for (int oh = 0; oh < out_h; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= height) continue;
          const T* src = row + static_cast<size_t>(oh) * out_w;
          T* dst = xc + static_cast<size_t>(ih) * width;
          for (int ow = 0; ow < out_w; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < width) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding) {
  require_rank4(x, "conv2d");
  require(weight.defined() && weight.ndim() == 4, Errc::shape_mismatch, "conv2d weight must be (O,C,k,k)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int o = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == c, Errc::shape_mismatch,
          "conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
  require(weight.dim(3) == k, Errc::shape_mismatch, "conv2d kernel must be square");
  require(bias.defined() && bias.numel() == static_cast<size_t>(o), Errc::shape_mismatch,
          "conv2d bias length must equal output channels");
  require(stride >= 1 && padding >= 0, Errc::invalid_argument, "conv2d needs stride >= 1, padding >= 0");
  require(h + 2 * padding >= k && w + 2 * padding >= k, Errc::shape_mismatch, "conv2d kernel larger than input");

  const int oh = (h + 2 * padding - k) / stride + 1;
  const int ow = (w + 2 * padding - k) / stride + 1;
  const int kk = c * k * k;
  const int p = oh * ow;
  const bool pointwise = (k == 1 && stride == 1 && padding == 0);
  const size_t in_plane = static_cast<size_t>(c) * h * w;
  const size_t out_plane = static_cast<size_t>(o) * p;

  std::vector<T> out(static_cast<size_t>(n) * out_plane);
  auto cols = std::make_shared<std::vector<T>>();
  if (!pointwise) cols->resize(static_cast<size_t>(n) * kk * p);

  ConstMatMap<T> wm(weight.data().data(), o, kk);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.data().data(), o);
  for (int b = 0; b < n; ++b) {
    const T* xb = x.data().data() + b * in_plane;
    const T* colp = xb;
    if (!pointwise) {
      T* dst = cols->data() + static_cast<size_t>(b) * kk * p;
      im2col(xb, c, h, w, k, stride, padding, oh, ow, dst);
      colp = dst;
    }
    MatMap<T> ym(out.data() + b * out_plane, o, p);
    ym.noalias() = wm * ConstMatMap<T>(colp, kk, p);
    ym.colwise() += bv;
  }

  return make_output<T>(
      Shape{n, o, oh, ow}, std::move(out), {x, weight, bias},
      [x, weight, bias, cols, n, c, h, w, o, k, stride, padding, oh, ow, kk, p, pointwise, in_plane,
       out_plane](std::span<const T> g) mutable {
        ConstMatMap<T> wm(weight.data().data(), o, kk);
        const bool gx = x.requires_grad(), gw = weight.requires_grad(), gb = bias.requires_grad();
        std::vector<T> gcol(gx && !pointwise ? static_cast<size_t>(kk) * p : 0);
        for (int b = 0; b < n; ++b) {
          ConstMatMap<T> gy(g.data() + b * out_plane, o, p);
          const T* colp =
              pointwise ? x.data().data() + b * in_plane : cols->data() + static_cast<size_t>(b) * kk * p;
          if (gw) {
            MatMap<T> gwm(weight.mutable_grad().data(), o, kk);
            gwm.noalias() += gy * ConstMatMap<T>(colp, kk, p).transpose();
          }
          if (gb) {
            // Fixed summation order, independent of buffer alignment.
            T* gbp = bias.mutable_grad().data();
            const T* gp = g.data() + b * out_plane;
            for (int oc = 0; oc < o; ++oc) {
              T acc = 0;
              for (int i = 0; i < p; ++i) acc += gp[static_cast<size_t>(oc) * p + i];
              gbp[oc] += acc;
            }
          }
          if (gx) {
            T* gxb = x.mutable_grad().data() + b * in_plane;
            if (pointwise) {
              MatMap<T>(gxb, kk, p).noalias() += wm.transpose() * gy;
            } else {
              MatMap<T>(gcol.data(), kk, p).noalias() = wm.transpose() * gy;
              col2im_add(gcol.data(), c, h, w, k, stride, padding, oh, ow, gxb);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T{0} ? xd[i] : slope * xd[i];
  return make_output<T>(x.shape(), std::move(out), {x}, [x, slope](std::span<const T> g) mutable {
    const auto xd = x.data();
    auto gx = x.mutable_grad();
    for (size_t i = 0; i < gx.size(); ++i) gx[i] += xd[i] > T{0} ? g[i] : slope * g[i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  require(x.shape() == y.shape(), Errc::shape_mismatch,
          "add shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  std::vector<T> out(x.numel());
  const auto xd = x.data(), yd = y.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + yd[i];
  return make_output<T>(x.shape(), std::move(out), {x, y}, [x, y](std::span<const T> g) mutable {
    for (const Tensor<T>* t : {&x, &y}) {
      if (!t->requires_grad()) continue;
      auto gt = t->mutable_grad();
      for (size_t i = 0; i < gt.size(); ++i) gt[i] += g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  require(x.shape() == y.shape(), Errc::shape_mismatch,
          "mul shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  std::vector<T> out(x.numel());
  const auto xd = x.data(), yd = y.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * yd[i];
  return make_output<T>(x.shape(), std::move(out), {x, y}, [x, y](std::span<const T> g) mutable {
    const auto xd = x.data(), yd = y.data();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * yd[i];
    }
    if (y.requires_grad()) {
      auto gy = y.mutable_grad();
      for (size_t i = 0; i < gy.size(); ++i) gy[i] += g[i] * xd[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& gamma, const Tensor<T>& t) {
  require(gamma.defined() && gamma.numel() == 1, Errc::shape_mismatch, "scale expects a one-element gamma");
  const T s = gamma.data()[0];
  std::vector<T> out(t.numel());
  const auto td = t.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = s * td[i];
  return make_output<T>(t.shape(), std::move(out), {gamma, t}, [gamma, t](std::span<const T> g) mutable {
    const auto td = t.data();
    if (gamma.requires_grad()) {
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(g[i]) * static_cast<double>(td[i]);
      gamma.mutable_grad()[0] += static_cast<T>(acc);
    }
    if (t.requires_grad()) {
      const T s = gamma.data()[0];
      auto gt = t.mutable_grad();
      for (size_t i = 0; i < gt.size(); ++i) gt[i] += s * g[i];
    }
  });
}

template <typename T>
Tensor<T> mul_const(const Tensor<T>& t, T c) {
  std::vector<T> out(t.numel());
  const auto td = t.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = c * td[i];
  return make_output<T>(t.shape(), std::move(out), {t}, [t, c](std::span<const T> g) mutable {
    auto gt = t.mutable_grad();
    for (size_t i = 0; i < gt.size(); ++i) gt[i] += c * g[i];
  });
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require_rank4(x, "avg_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0, Errc::odd_dims, "avg_pool2 needs even H and W, got " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  const size_t planes = static_cast<size_t>(n) * c;
  std::vector<T> out(planes * oh * ow);
  const auto xd = x.data();
  for (size_t pl = 0; pl < planes; ++pl) {
    const T* src = xd.data() + pl * h * w;
    T* dst = out.data() + pl * oh * ow;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        const T* a = src + static_cast<size_t>(2 * i) * w + 2 * j;
        dst[i * ow + j] = T(0.25) * (a[0] + a[1] + a[w] + a[w + 1]);
      }
    }
  }
  return make_output<T>(Shape{n, c, oh, ow}, std::move(out), {x}, [x, planes, h, w, oh, ow](std::span<const T> g) mutable {
    auto gx = x.mutable_grad();
    for (size_t pl = 0; pl < planes; ++pl) {
      T* dst = gx.data() + pl * h * w;
      const T* src = g.data() + pl * oh * ow;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) {
          const T v = T(0.25) * src[i * ow + j];
          T* a = dst + static_cast<size_t>(2 * i) * w + 2 * j;
          a[0] += v;
          a[1] += v;
          a[w] += v;
          a[w + 1] += v;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  require_rank4(x, "upsample_nearest2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  const size_t planes = static_cast<size_t>(n) * c;
  std::vector<T> out(planes * oh * ow);
  const auto xd = x.data();
  for (size_t pl = 0; pl < planes; ++pl) {
    const T* src = xd.data() + pl * h * w;
    T* dst = out.data() + pl * oh * ow;
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / 2) * w + j / 2];
    }
  }
  return make_output<T>(Shape{n, c, oh, ow}, std::move(out), {x}, [x, planes, h, w, oh, ow](std::span<const T> g) mutable {
    auto gx = x.mutable_grad();
    for (size_t pl = 0; pl < planes; ++pl) {
      T* dst = gx.data() + pl * h * w;
      const T* src = g.data() + pl * oh * ow;
      for (int i = 0; i < oh; ++i) {
        for (int j = 0; j < ow; ++j) dst[(i / 2) * w + j / 2] += src[i * ow + j];
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_xent_masked(const Tensor<T>& logits, std::span<const int32_t> labels,
                              std::span<const uint8_t> valid, std::span<const T> class_weights,
                              int32_t ignore_label) {
  require_rank4(logits, "softmax_xent_masked");
  const int n = logits.dim(0), c = logits.dim(1);
  const size_t hw = static_cast<size_t>(logits.dim(2)) * logits.dim(3);
  const size_t pixels = static_cast<size_t>(n) * hw;
  require(labels.size() == pixels && valid.size() == pixels, Errc::shape_mismatch,
          "softmax_xent_masked label/mask size does not match logits " + shape_str(logits.shape()));
  require(class_weights.size() == static_cast<size_t>(c), Errc::shape_mismatch,
          "softmax_xent_masked needs one weight per class");
  for (int32_t label : labels) {
    if (label != ignore_label && (label < 0 || label >= c))
      throw Error(Errc::label_out_of_range, "label " + std::to_string(label) + " outside [0," + std::to_string(c) + ")");
  }

  // Per-pixel softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(logits.numel(), T{0});
  const auto z = logits.data();
  double total = 0.0;
  size_t count = 0;
  std::vector<double> e(c);
  for (int b = 0; b < n; ++b) {
    for (size_t q = 0; q < hw; ++q) {
      const size_t pix = b * hw + q;
      if (!valid[pix] || labels[pix] == ignore_label) continue;
      const size_t base = static_cast<size_t>(b) * c * hw + q;
      double zmax = -std::numeric_limits<double>::infinity();
      for (int k = 0; k < c; ++k) zmax = std::max(zmax, static_cast<double>(z[base + k * hw]));
      double sum = 0.0;
      for (int k = 0; k < c; ++k) {
        e[k] = std::exp(static_cast<double>(z[base + k * hw]) - zmax);
        sum += e[k];
      }
      const int32_t y = labels[pix];
      total += static_cast<double>(class_weights[y]) * (std::log(sum) - (static_cast<double>(z[base + y * hw]) - zmax));
      for (int k = 0; k < c; ++k) (*probs)[base + k * hw] = static_cast<T>(e[k] / sum);
      ++count;
    }
  }
  if (count == 0) return Tensor<T>::scalar(T{0});

  std::vector<int32_t> lab(labels.begin(), labels.end());
  std::vector<uint8_t> val(valid.begin(), valid.end());
  std::vector<T> wts(class_weights.begin(), class_weights.end());
  return make_output<T>(
      Shape{1}, std::vector<T>{static_cast<T>(total / static_cast<double>(count))}, {logits},
      [logits, probs, lab = std::move(lab), val = std::move(val), wts = std::move(wts), n, c, hw, count,
       ignore_label](std::span<const T> g) mutable {
        auto gz = logits.mutable_grad();
        const T upstream = g[0] / static_cast<T>(count);
        for (int b = 0; b < n; ++b) {
          for (size_t q = 0; q < hw; ++q) {
            const size_t pix = b * hw + q;
            if (!val[pix] || lab[pix] == ignore_label) continue;
            const size_t base = static_cast<size_t>(b) * c * hw + q;
            const T scale_w = upstream * wts[lab[pix]];
            for (int k = 0; k < c; ++k) {
              const T target = (k == lab[pix]) ? T{1} : T{0};
              gz[base + k * hw] += scale_w * ((*probs)[base + k * hw] - target);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> mse_masked(const Tensor<T>& pred, const Tensor<T>& target, std::span<const uint8_t> valid) {
  require_rank4(pred, "mse_masked");
  require(target.defined() && pred.shape() == target.shape(), Errc::shape_mismatch,
          "mse_masked shape mismatch " + shape_str(pred.shape()) + " vs " +
              (target.defined() ? shape_str(target.shape()) : std::string("undefined")));
  const int n = pred.dim(0), c = pred.dim(1);
  const size_t hw = static_cast<size_t>(pred.dim(2)) * pred.dim(3);
  require(valid.size() == static_cast<size_t>(n) * hw, Errc::shape_mismatch, "mse_masked mask size mismatch");

  const auto pd = pred.data(), td = target.data();
  double total = 0.0;
  size_t count = 0;
  for (int b = 0; b < n; ++b) {
    for (size_t q = 0; q < hw; ++q) {
      if (!valid[b * hw + q]) continue;
      ++count;
      for (int k = 0; k < c; ++k) {
        const size_t i = (static_cast<size_t>(b) * c + k) * hw + q;
        const double d = static_cast<double>(pd[i]) - static_cast<double>(td[i]);
        total += d * d;
      }
    }
  }
  if (count == 0) return Tensor<T>::scalar(T{0});
  const double denom = static_cast<double>(count) * c;
  std::vector<uint8_t> val(valid.begin(), valid.end());
  return make_output<T>(Shape{1}, std::vector<T>{static_cast<T>(total / denom)}, {pred},
                        [pred, target, val = std::move(val), n, c, hw, denom](std::span<const T> g) mutable {
                          const auto pd = pred.data(), td = target.data();
                          auto gp = pred.mutable_grad();
                          const T factor = static_cast<T>(2.0 / denom) * g[0];
                          for (int b = 0; b < n; ++b) {
                            for (size_t q = 0; q < hw; ++q) {
                              if (!val[b * hw + q]) continue;
                              for (int k = 0; k < c; ++k) {
                                const size_t i = (static_cast<size_t>(b) * c + k) * hw + q;
                                gp[i] += factor * (pd[i] - td[i]);
                              }
                            }
                          }
                        });
}

#define RVUDA_INSTANTIATE_OPS(T)                                                                           \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);           \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> scale<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul_const<T>(const Tensor<T>&, T);                                                    \
  template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                                       \
  template Tensor<T> upsample_nearest2<T>(const Tensor<T>&);                                               \
  template Tensor<T> softmax_xent_masked<T>(const Tensor<T>&, std::span<const int32_t>,                    \
                                            std::span<const uint8_t>, std::span<const T>, int32_t);       \
  template Tensor<T> mse_masked<T>(const Tensor<T>&, const Tensor<T>&, std::span<const uint8_t>);

RVUDA_INSTANTIATE_OPS(float)
RVUDA_INSTANTIATE_OPS(double)

}  // namespace rvuda::ad
