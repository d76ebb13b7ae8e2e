#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "rvuda/adapter_net.hpp"
#include "rvuda/cloud_io.hpp"
#include "rvuda/range_view.hpp"
#include "rvuda/seg_metrics.hpp"

namespace rvuda {

// ---------------------------------------------------------------------------
// Range-view image completion (column split)

enum class Parity { even_kept, odd_kept };

/// Alternate-column split of one 5 x h x w image. Kept columns go to
/// image_in/mask_in, dropped columns to image_target/mask_target.
struct RvicSplit {
  int h = 0;
  int w = 0;
  Parity parity = Parity::even_kept;
  std::vector<float> image_in;
  std::vector<float> image_target;
  std::vector<uint8_t> mask_in;
  std::vector<uint8_t> mask_target;
};

RvicSplit rvic_split(std::span<const float> image, std::span<const uint8_t> mask, int h, int w, Parity parity);
/// Parity drawn from `rng` with a fair coin.
RvicSplit rvic_split(std::span<const float> image, std::span<const uint8_t> mask, int h, int w, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Batches

/// Optional per-channel standardization of valid pixels; empty pixels stay 0.
struct InputNormalization {
  bool enabled = false;
  std::array<float, kRangeChannels> mean{};
  std::array<float, kRangeChannels> stddev{1.f, 1.f, 1.f, 1.f, 1.f};

  void apply(std::span<float> image, std::span<const uint8_t> mask, int h, int w) const;
};

struct RvBatch {
  int n = 0;
  int h = 0;
  int w = 0;
  ad::Tensor<float> images;      // (n, 5, h, w)
  std::vector<uint8_t> masks;    // n * h * w
  std::vector<int32_t> labels;   // n * h * w, ignore where mask = 0 (empty when unlabeled)

  size_t pixels() const { return static_cast<size_t>(h) * static_cast<size_t>(w); }
  std::span<const float> image(int i) const {
    return images.data().subspan(static_cast<size_t>(i) * kRangeChannels * pixels(), kRangeChannels * pixels());
  }
  std::span<const uint8_t> mask(int i) const { return std::span(masks).subspan(i * pixels(), pixels()); }
};

RvBatch make_batch(std::span<const RangeView* const> views, const InputNormalization& norm, int32_t ignore_label);

// ---------------------------------------------------------------------------
// Source densification and unpaired mask transfer

/// image where mask = 1, completion elsewhere (per channel).
std::vector<float> fill_holes(std::span<const float> image, std::span<const float> completion,
                              std::span<const uint8_t> mask, int h, int w);

/// Runs the completion branch without recording gradients and fills the
/// source holes with its output. images: (N,5,H,W); masks: N*H*W.
ad::Tensor<float> densify_source(const UdaModel<float>& model, const ad::Tensor<float>& images,
                                 std::span<const uint8_t> masks, bool ga_enabled = true);

struct TransferredSource {
  std::vector<float> image;     // 5 x h x w
  std::vector<int32_t> labels;  // h x w
  std::vector<uint8_t> mask;    // h x w
};

/// mask' = mask_s * mask_t; image' = dense * mask_t; labels' = labels where
/// mask' = 1 and ignore_label elsewhere.
TransferredSource transfer_mask(std::span<const float> dense_image, std::span<const int32_t> labels,
                                std::span<const uint8_t> mask_s, std::span<const uint8_t> mask_t_full, int h, int w,
                                int32_t ignore_label);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double lambda_aux = 1e-6;
  int steps = 500;
  int batch_size = 4;
  ad::SgdConfig optimizer{0.01, 0.9, 0.0001, 50};
  uint64_t seed = 1;
  int32_t ignore_class = synth_class::kIgnore;
  bool enable_rvic = true;
  bool enable_umt = true;
  bool enable_ga = true;
  InputNormalization normalization;

  void validate() const;
};

/// Independent PRNG streams of one run, all derived from the run seed.
struct RunRng {
  explicit RunRng(uint64_t seed);

  std::mt19937_64 source_sampling;
  std::mt19937_64 target_sampling;
  std::mt19937_64 parity;
  std::mt19937_64 pairing;
};

struct PipelineCounters {
  uint64_t rvic_splits = 0;
  uint64_t densify_calls = 0;
  uint64_t mask_transfers = 0;
  uint64_t skipped_supervised = 0;
};

struct StepResult {
  double loss_t = 0.0;  // auxiliary loss before lambda scaling
  double loss_s = 0.0;
  double lr = 0.0;
  bool supervised_skipped = false;
};

/// One training iteration: completion step on the target batch, source
/// densification plus mask transfer, then the supervised step on the
/// transferred source batch, followed by one optimizer update.
StepResult train_step(UdaModel<float>& model, ad::Sgd<float>& optimizer, const RvBatch& source,
                      const RvBatch& target, std::span<const float> class_weights, const TrainConfig& cfg,
                      RunRng& rng, PipelineCounters& counters);

/// sqrt(1 / f_c) with f_c the point frequency of class c among non-ignored
/// labels; absent classes (and the ignore class) get weight 0.
std::vector<double> class_weights_from(std::span<const PointCloud> clouds, int classes, int32_t ignore_label);

struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<RangeView> views;
};

Dataset make_dataset(std::vector<PointCloud> clouds, const ProjectionConfig& proj, int32_t ignore_label);

struct TrainResult {
  UdaModel<float> model;
  ad::Sgd<float> optimizer;
  std::vector<StepResult> history;
  PipelineCounters counters;
};

/// Full training loop; a pure function of its arguments. Writes one
/// `step <n> loss_t <v> loss_s <v> lr <v>` line per step to `log` if given.
TrainResult train_model(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& source,
                  const Dataset& target, std::ostream* log = nullptr);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalConfig {
  bool knn = true;
  KnnConfig knn_cfg;
  bool ga_enabled = true;
  int32_t ignore_class = synth_class::kIgnore;
  AbsentClassPolicy absent_policy = AbsentClassPolicy::exclude;
  InputNormalization normalization;
  int batch_size = 8;
};

/// Per-pixel argmax of (N, C, H, W) logits for sample `index`.
std::vector<int32_t> argmax_labels(const ad::Tensor<float>& logits, int index);

/// Predicts range-view labels for every view, maps them back to points
/// (kNN or direct) and accumulates against point labels.
ConfusionMatrix evaluate_target(const UdaModel<float>& model, const Dataset& target, const EvalConfig& cfg);

/// Point predictions for one cloud.
std::vector<int32_t> predict_points(const UdaModel<float>& model, const PointCloud& cloud, const RangeView& rv,
                                    const EvalConfig& cfg);

}  // namespace rvuda
