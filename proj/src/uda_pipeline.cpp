#include "rvuda/uda_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "rvuda/error.hpp"

namespace rvuda {

namespace {

void check_plane(size_t size, int h, int w, const char* what) {
  if (size != static_cast<size_t>(h) * static_cast<size_t>(w))
    throw Error(Errc::shape_mismatch, std::string(what) + " does not match h x w");
}

void check_image(size_t size, int h, int w, const char* what) {
  if (size != static_cast<size_t>(kRangeChannels) * h * w)
    throw Error(Errc::shape_mismatch, std::string(what) + " does not match 5 x h x w");
}

}  // namespace

RvicSplit rvic_split(std::span<const float> image, std::span<const uint8_t> mask, int h, int w, Parity parity) {
  if (w < 2) throw Error(Errc::invalid_argument, "column split needs w >= 2");
  check_image(image.size(), h, w, "image");
  check_plane(mask.size(), h, w, "mask");
  const size_t hw = static_cast<size_t>(h) * w;
  RvicSplit out;
  out.h = h;
  out.w = w;
  out.parity = parity;
  out.image_in.assign(image.size(), 0.0f);
  out.image_target.assign(image.size(), 0.0f);
  out.mask_in.assign(hw, 0);
  out.mask_target.assign(hw, 0);
  const int kept = parity == Parity::even_kept ? 0 : 1;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const size_t pix = static_cast<size_t>(r) * w + c;
      const bool keep = (c % 2) == kept;
      (keep ? out.mask_in : out.mask_target)[pix] = mask[pix];
      auto& dst = keep ? out.image_in : out.image_target;
      for (int k = 0; k < kRangeChannels; ++k) dst[k * hw + pix] = image[k * hw + pix];
    }
  }
  return out;
}

RvicSplit rvic_split(std::span<const float> image, std::span<const uint8_t> mask, int h, int w, std::mt19937_64& rng) {
  const Parity parity = (rng() >> 63) ? Parity::odd_kept : Parity::even_kept;
  return rvic_split(image, mask, h, w, parity);
}

void InputNormalization::apply(std::span<float> image, std::span<const uint8_t> mask, int h, int w) const {
  if (!enabled) return;
  const size_t hw = static_cast<size_t>(h) * w;
  for (int k = 0; k < kRangeChannels; ++k) {
    for (size_t pix = 0; pix < hw; ++pix) {
      if (mask[pix]) image[k * hw + pix] = (image[k * hw + pix] - mean[k]) / stddev[k];
    }
  }
}

RvBatch make_batch(std::span<const RangeView* const> views, const InputNormalization& norm, int32_t ignore_label) {
  if (views.empty()) throw Error(Errc::empty_input, "batch needs at least one range view");
  RvBatch batch;
  batch.n = static_cast<int>(views.size());
  batch.h = views.front()->h;
  batch.w = views.front()->w;
  const size_t hw = batch.pixels();
  const bool labeled = std::all_of(views.begin(), views.end(), [](const RangeView* v) { return v->label_image.has_value(); });
  std::vector<float> data;
  data.reserve(views.size() * kRangeChannels * hw);
  for (const RangeView* v : views) {
    if (v->h != batch.h || v->w != batch.w) throw Error(Errc::shape_mismatch, "range views in a batch differ in size");
    const size_t offset = data.size();
    data.insert(data.end(), v->image.begin(), v->image.end());
    norm.apply(std::span(data).subspan(offset, kRangeChannels * hw), v->mask, batch.h, batch.w);
    batch.masks.insert(batch.masks.end(), v->mask.begin(), v->mask.end());
    if (labeled) {
      for (size_t pix = 0; pix < hw; ++pix) batch.labels.push_back(v->mask[pix] ? (*v->label_image)[pix] : ignore_label);
    }
  }
  batch.images = ad::Tensor<float>(ad::Shape{batch.n, kRangeChannels, batch.h, batch.w}, std::move(data));
  return batch;
}

std::vector<float> fill_holes(std::span<const float> image, std::span<const float> completion,
                              std::span<const uint8_t> mask, int h, int w) {
  check_image(image.size(), h, w, "image");
  check_image(completion.size(), h, w, "completion");
  check_plane(mask.size(), h, w, "mask");
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<float> out(image.begin(), image.end());
  for (int k = 0; k < kRangeChannels; ++k) {
    for (size_t pix = 0; pix < hw; ++pix) {
      if (!mask[pix]) out[k * hw + pix] = completion[k * hw + pix];
    }
  }
  return out;
}

ad::Tensor<float> densify_source(const UdaModel<float>& model, const ad::Tensor<float>& images,
                                 std::span<const uint8_t> masks, bool ga_enabled) {
  ad::NoGradGuard no_grad;
  const ad::Tensor<float> completion = model.forward_aux(images, ga_enabled);
  const int n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const size_t hw = static_cast<size_t>(h) * w;
  if (masks.size() != static_cast<size_t>(n) * hw) throw Error(Errc::shape_mismatch, "mask batch size mismatch");
  std::vector<float> dense;
  dense.reserve(images.numel());
  const size_t stride = kRangeChannels * hw;
  for (int i = 0; i < n; ++i) {
    auto filled = fill_holes(images.data().subspan(i * stride, stride), completion.data().subspan(i * stride, stride),
                             masks.subspan(i * hw, hw), h, w);
    dense.insert(dense.end(), filled.begin(), filled.end());
  }
  return ad::Tensor<float>(images.shape(), std::move(dense));
}

TransferredSource transfer_mask(std::span<const float> dense_image, std::span<const int32_t> labels,
                                std::span<const uint8_t> mask_s, std::span<const uint8_t> mask_t_full, int h, int w,
                                int32_t ignore_label) {
  check_image(dense_image.size(), h, w, "dense image");
  check_plane(labels.size(), h, w, "labels");
  check_plane(mask_s.size(), h, w, "source mask");
  check_plane(mask_t_full.size(), h, w, "target mask");
  const size_t hw = static_cast<size_t>(h) * w;
  TransferredSource out;
  out.image.assign(dense_image.size(), 0.0f);
  out.labels.assign(hw, ignore_label);
  out.mask.assign(hw, 0);
  for (size_t pix = 0; pix < hw; ++pix) {
    const uint8_t mt = mask_t_full[pix] ? 1 : 0;
    out.mask[pix] = static_cast<uint8_t>((mask_s[pix] ? 1 : 0) * mt);
    if (out.mask[pix]) out.labels[pix] = labels[pix];
    if (mt) {
      for (int k = 0; k < kRangeChannels; ++k) out.image[k * hw + pix] = dense_image[k * hw + pix];
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(lambda_aux >= 0.0)) throw Error(Errc::invalid_argument, "lambda_aux must be >= 0");
  if (steps < 0) throw Error(Errc::invalid_argument, "steps must be >= 0");
  if (batch_size < 1) throw Error(Errc::invalid_argument, "batch_size must be >= 1");
  optimizer.validate();
}

RunRng::RunRng(uint64_t seed) {
  auto stream = [seed](uint32_t id) {
    std::seed_seq seq{static_cast<uint32_t>(seed & 0xffffffffu), static_cast<uint32_t>(seed >> 32), id};
    return std::mt19937_64(seq);
  };
  source_sampling = stream(1);
  target_sampling = stream(2);
  parity = stream(3);
  pairing = stream(4);
}

StepResult train_step(UdaModel<float>& model, ad::Sgd<float>& optimizer, const RvBatch& source,
                      const RvBatch& target, std::span<const float> class_weights, const TrainConfig& cfg,
                      RunRng& rng, PipelineCounters& counters) {
  if (source.h != target.h || source.w != target.w)
    throw Error(Errc::shape_mismatch, "source and target batches differ in image size");
  if (source.labels.size() != static_cast<size_t>(source.n) * source.pixels())
    throw Error(Errc::shape_mismatch, "source batch carries no labels");
  const int h = source.h, w = source.w;
  const size_t hw = source.pixels();
  const size_t stride = kRangeChannels * hw;
  StepResult result;
  result.lr = optimizer.current_lr();

  // Target masks recombined after the split; equal to the projected masks.
  std::vector<uint8_t> target_masks = target.masks;

  // Step 1: completion of dropped target columns.
  if (cfg.enable_rvic) {
    std::vector<float> inputs, targets;
    std::vector<uint8_t> in_masks, target_valid;
    inputs.reserve(target.images.numel());
    targets.reserve(target.images.numel());
    for (int i = 0; i < target.n; ++i) {
      RvicSplit split = rvic_split(target.image(i), target.mask(i), h, w, rng.parity);
      ++counters.rvic_splits;
      inputs.insert(inputs.end(), split.image_in.begin(), split.image_in.end());
      targets.insert(targets.end(), split.image_target.begin(), split.image_target.end());
      in_masks.insert(in_masks.end(), split.mask_in.begin(), split.mask_in.end());
      target_valid.insert(target_valid.end(), split.mask_target.begin(), split.mask_target.end());
    }
    const ad::Shape shape{target.n, kRangeChannels, h, w};
    const ad::Tensor<float> completion = model.forward_aux(ad::Tensor<float>(shape, std::move(inputs)), cfg.enable_ga);
    const ad::Tensor<float> loss_t =
        ad::mse_masked(completion, ad::Tensor<float>(shape, std::move(targets)), target_valid);
    result.loss_t = loss_t.item();
    if (cfg.lambda_aux > 0.0) ad::backward(ad::mul_const(loss_t, static_cast<float>(cfg.lambda_aux)));
    for (size_t i = 0; i < target_masks.size(); ++i) target_masks[i] = in_masks[i] + target_valid[i];
  }

  // Step 2: densify the source and transfer randomly paired target masks.
  ad::Tensor<float> source_images = source.images;
  std::vector<uint8_t> source_masks = source.masks;
  std::vector<int32_t> source_labels = source.labels;
  if (cfg.enable_umt) {
    const ad::Tensor<float> dense = densify_source(model, source.images, source.masks, cfg.enable_ga);
    ++counters.densify_calls;
    std::uniform_int_distribution<int> pick(0, target.n - 1);
    std::vector<float> images;
    images.reserve(dense.numel());
    for (int i = 0; i < source.n; ++i) {
      const int j = pick(rng.pairing);
      TransferredSource t = transfer_mask(dense.data().subspan(i * stride, stride),
                                          std::span(source.labels).subspan(i * hw, hw), source.mask(i),
                                          std::span(target_masks).subspan(j * hw, hw), h, w, cfg.ignore_class);
      ++counters.mask_transfers;
      images.insert(images.end(), t.image.begin(), t.image.end());
      std::copy(t.mask.begin(), t.mask.end(), source_masks.begin() + i * hw);
      std::copy(t.labels.begin(), t.labels.end(), source_labels.begin() + i * hw);
    }
    source_images = ad::Tensor<float>(source.images.shape(), std::move(images));
  }

  // Step 3: supervised step with adapters bypassed.
  const ad::Tensor<float> logits = model.forward_seg(source_images, false);
  const ad::Tensor<float> loss_s =
      ad::softmax_xent_masked(logits, source_labels, source_masks, class_weights, cfg.ignore_class);
  result.loss_s = loss_s.item();
  if (loss_s.requires_grad()) {
    ad::backward(loss_s);
  } else {
    result.supervised_skipped = true;
    ++counters.skipped_supervised;
  }

  auto params = model.optimizer_params();
  optimizer.step(params);
  return result;
}

std::vector<double> class_weights_from(std::span<const PointCloud> clouds, int classes, int32_t ignore_label) {
  std::vector<uint64_t> counts(classes, 0);
  uint64_t total = 0;
  for (const PointCloud& cloud : clouds) {
    if (!cloud.labels) throw Error(Errc::invalid_argument, "class weights need labeled clouds");
    for (int32_t label : *cloud.labels) {
      if (label == ignore_label) continue;
      if (label < 0 || label >= classes) throw Error(Errc::label_out_of_range, "label " + std::to_string(label));
      ++counts[label];
      ++total;
    }
  }
  if (total == 0) throw Error(Errc::empty_input, "no labeled points to compute class weights");
  std::vector<double> weights(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    const double f = static_cast<double>(counts[c]) / static_cast<double>(total);
    weights[c] = std::sqrt(1.0 / f);
  }
  return weights;
}

Dataset make_dataset(std::vector<PointCloud> clouds, const ProjectionConfig& proj, int32_t ignore_label) {
  Dataset ds;
  ds.views.reserve(clouds.size());
  for (const PointCloud& cloud : clouds) ds.views.push_back(project(cloud, proj, ignore_label));
  ds.clouds = std::move(clouds);
  return ds;
}

namespace {

RvBatch sample_batch(const Dataset& ds, int batch_size, std::mt19937_64& rng, const TrainConfig& cfg) {
  std::uniform_int_distribution<size_t> pick(0, ds.views.size() - 1);
  std::vector<const RangeView*> views;
  for (int i = 0; i < batch_size; ++i) views.push_back(&ds.views[pick(rng)]);
  return make_batch(views, cfg.normalization, cfg.ignore_class);
}

}  // namespace

TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& source, const Dataset& target,
                  std::ostream* log) {
  cfg.validate();
  if (source.views.empty() || target.views.empty()) throw Error(Errc::empty_input, "training needs source and target data");
  TrainResult run{UdaModel<float>::init(model_cfg), ad::Sgd<float>(cfg.optimizer), {}, {}};
  const auto weights_d = class_weights_from(source.clouds, model_cfg.classes, cfg.ignore_class);
  const std::vector<float> weights(weights_d.begin(), weights_d.end());
  RunRng rng(cfg.seed);
  for (int step = 0; step < cfg.steps; ++step) {
    const RvBatch src = sample_batch(source, cfg.batch_size, rng.source_sampling, cfg);
    const RvBatch tgt = sample_batch(target, cfg.batch_size, rng.target_sampling, cfg);
    const StepResult r = train_step(run.model, run.optimizer, src, tgt, weights, cfg, rng, run.counters);
    run.history.push_back(r);
    if (log) {
      *log << "step " << step << " loss_t " << std::setprecision(8) << r.loss_t << " loss_s " << r.loss_s << " lr "
           << r.lr << '\n';
    }
  }
  return run;
}

std::vector<int32_t> argmax_labels(const ad::Tensor<float>& logits, int index) {
  const int c = logits.dim(1);
  const size_t hw = static_cast<size_t>(logits.dim(2)) * logits.dim(3);
  const float* base = logits.data().data() + static_cast<size_t>(index) * c * hw;
  std::vector<int32_t> out(hw, 0);
  for (size_t q = 0; q < hw; ++q) {
    float best = base[q];
    for (int k = 1; k < c; ++k) {
      if (base[k * hw + q] > best) {
        best = base[k * hw + q];
        out[q] = k;
      }
    }
  }
  return out;
}

namespace {

std::vector<int32_t> points_from_pixels(const PointCloud& cloud, const RangeView& rv, std::span<const int32_t> pixels,
                                        const EvalConfig& cfg) {
  return cfg.knn ? knn_postprocess(cloud, rv, pixels, cfg.knn_cfg) : back_project(pixels, cloud, rv);
}

}  // namespace

std::vector<int32_t> predict_points(const UdaModel<float>& model, const PointCloud& cloud, const RangeView& rv,
                                    const EvalConfig& cfg) {
  ad::NoGradGuard no_grad;
  const RangeView* views[] = {&rv};
  const RvBatch batch = make_batch(views, cfg.normalization, cfg.ignore_class);
  const auto logits = model.forward_seg(batch.images, cfg.ga_enabled);
  return points_from_pixels(cloud, rv, argmax_labels(logits, 0), cfg);
}

ConfusionMatrix evaluate_target(const UdaModel<float>& model, const Dataset& target, const EvalConfig& cfg) {
  if (target.clouds.empty()) throw Error(Errc::empty_input, "evaluation set is empty");
  ConfusionMatrix cm(model.config().classes, cfg.ignore_class);
  ad::NoGradGuard no_grad;
  const size_t chunk = static_cast<size_t>(std::max(1, cfg.batch_size));
  for (size_t start = 0; start < target.views.size(); start += chunk) {
    const size_t end = std::min(target.views.size(), start + chunk);
    std::vector<const RangeView*> views;
    for (size_t i = start; i < end; ++i) {
      if (!target.clouds[i].labels) throw Error(Errc::invalid_argument, "evaluation needs labeled target clouds");
      views.push_back(&target.views[i]);
    }
    const RvBatch batch = make_batch(views, cfg.normalization, cfg.ignore_class);
    const auto logits = model.forward_seg(batch.images, cfg.ga_enabled);
    for (size_t i = start; i < end; ++i) {
      const auto pixels = argmax_labels(logits, static_cast<int>(i - start));
      const auto pred = points_from_pixels(target.clouds[i], target.views[i], pixels, cfg);
      cm.accumulate(pred, *target.clouds[i].labels);
    }
  }
  return cm;
}

}  // namespace rvuda
