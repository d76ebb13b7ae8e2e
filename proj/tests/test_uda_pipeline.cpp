#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "rvuda/uda_pipeline.hpp"
#include "test_util.hpp"

using namespace rvuda;

namespace {

std::vector<float> random_image(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-5.f, 5.f);
  std::vector<float> img(static_cast<size_t>(kRangeChannels) * h * w);
  for (auto& v : img) v = u(rng);
  return img;
}

std::vector<uint8_t> random_mask(size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.6);
  std::vector<uint8_t> m(n);
  for (auto& v : m) v = b(rng) ? 1 : 0;
  return m;
}

ProjectionConfig small_proj() {
  ProjectionConfig p;
  p.h = 16;
  p.w = 64;
  return p;
}

Dataset synthetic_dataset(int scenes, uint64_t seed, int beams, double ground_z = -1.73) {
  std::vector<PointCloud> clouds;
  for (int i = 0; i < scenes; ++i) {
    SceneSpec spec;
    spec.beam_count = beams;
    spec.azimuth_steps = 256;
    spec.seed = seed + i;
    LayoutOptions opts;
    opts.ground_z_min = ground_z - 0.1;
    opts.ground_z_max = ground_z + 0.1;
    spec.layout = random_layout(seed * 100 + i, opts);
    clouds.push_back(synth_scene(spec));
  }
  return make_dataset(std::move(clouds), small_proj(), synth_class::kIgnore);
}

ModelConfig tiny_model(uint64_t seed = 3) {
  ModelConfig cfg;
  cfg.widths = {4, 8};
  cfg.seed = seed;
  return cfg;
}

TrainConfig short_train(int steps = 3) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 2;
  cfg.optimizer.warmup_steps = 0;
  return cfg;
}

RvBatch batch_of(const Dataset& ds, int first, int n) {
  std::vector<const RangeView*> views;
  for (int i = 0; i < n; ++i) views.push_back(&ds.views[first + i]);
  return make_batch(views, {}, synth_class::kIgnore);
}

std::vector<std::vector<float>> snapshot(const UdaModel<float>& model, ParamGroup group) {
  std::vector<std::vector<float>> out;
  for (const auto& p : model.named_parameters())
    if (p.group == group) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::vector<float> flat_weights(const std::vector<double>& w) { return {w.begin(), w.end()}; }

}  // namespace

TEST_CASE("rvic_split examples") {
  const int h = 1, w = 2;
  std::vector<float> img(kRangeChannels * 2);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i + 1);
  const auto s = rvic_split(img, std::vector<uint8_t>{1, 1}, h, w, Parity::even_kept);
  for (int k = 0; k < kRangeChannels; ++k) {
    CHECK(s.image_in[k * 2 + 0] == img[k * 2 + 0]);
    CHECK(s.image_in[k * 2 + 1] == 0.f);
    CHECK(s.image_target[k * 2 + 0] == 0.f);
    CHECK(s.image_target[k * 2 + 1] == img[k * 2 + 1]);
  }

  const auto row = rvic_split(std::vector<float>(kRangeChannels * 4, 1.f), std::vector<uint8_t>{1, 1, 0, 1}, 1, 4,
                              Parity::even_kept);
  CHECK(row.mask_in == std::vector<uint8_t>{1, 0, 0, 0});
  CHECK(row.mask_target == std::vector<uint8_t>{0, 1, 0, 1});
  const auto odd = rvic_split(std::vector<float>(kRangeChannels * 4, 1.f), std::vector<uint8_t>{1, 1, 0, 1}, 1, 4,
                              Parity::odd_kept);
  CHECK(odd.mask_in == std::vector<uint8_t>{0, 1, 0, 1});
  CHECK(odd.mask_target == std::vector<uint8_t>{1, 0, 0, 0});

  CHECK(test::thrown_code([] {
          rvic_split(std::vector<float>(kRangeChannels), std::vector<uint8_t>{1}, 1, 1, Parity::even_kept);
        }) == Errc::invalid_argument);
  CHECK(test::thrown_code([] {
          rvic_split(std::vector<float>(kRangeChannels * 3), std::vector<uint8_t>{1, 1}, 1, 2, Parity::even_kept);
        }) == Errc::shape_mismatch);
}

TEST_CASE("rvic_split partitions every image") {
  std::mt19937_64 rng(31), parity_rng(7);
  int odd = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = std::uniform_int_distribution<int>(1, 6)(rng);
    const int w = std::uniform_int_distribution<int>(2, 9)(rng);
    const auto img = random_image(h, w, rng);
    const auto mask = random_mask(static_cast<size_t>(h) * w, rng);
    const auto s = rvic_split(img, mask, h, w, parity_rng);
    odd += s.parity == Parity::odd_kept;
    const size_t hw = static_cast<size_t>(h) * w;
    const int dropped = s.parity == Parity::even_kept ? 1 : 0;
    for (size_t pix = 0; pix < hw; ++pix) {
      CHECK(s.mask_in[pix] * s.mask_target[pix] == 0);
      CHECK(s.mask_in[pix] + s.mask_target[pix] == mask[pix]);
      const int col = static_cast<int>(pix % w);
      for (int k = 0; k < kRangeChannels; ++k) {
        CHECK(s.image_in[k * hw + pix] + s.image_target[k * hw + pix] == img[k * hw + pix]);
        if (col % 2 == dropped) CHECK(s.image_in[k * hw + pix] == 0.f);
      }
    }
  }
  CHECK(odd > 60);
  CHECK(odd < 140);
}

TEST_CASE("transfer_mask examples") {
  const int h = 1, w = 4;
  std::vector<float> img(kRangeChannels * 4);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i + 1);
  const std::vector<int32_t> labels{1, 2, 3, 2};
  const std::vector<uint8_t> mask_s{1, 1, 0, 1};

  const auto t = transfer_mask(img, labels, mask_s, std::vector<uint8_t>{1, 0, 1, 1}, h, w, 0);
  CHECK(t.mask == std::vector<uint8_t>{1, 0, 0, 1});
  CHECK(t.labels == std::vector<int32_t>{1, 0, 0, 2});
  for (int k = 0; k < kRangeChannels; ++k) {
    CHECK(t.image[k * 4 + 0] == img[k * 4 + 0]);
    CHECK(t.image[k * 4 + 1] == 0.f);
    CHECK(t.image[k * 4 + 2] == img[k * 4 + 2]);
    CHECK(t.image[k * 4 + 3] == img[k * 4 + 3]);
  }

  const auto all = transfer_mask(img, labels, mask_s, std::vector<uint8_t>(4, 1), h, w, 0);
  CHECK(all.image == img);
  CHECK(all.mask == mask_s);

  const auto none = transfer_mask(img, labels, mask_s, std::vector<uint8_t>(4, 0), h, w, 0);
  CHECK(none.mask == std::vector<uint8_t>(4, 0));
  CHECK(none.image == std::vector<float>(img.size(), 0.f));
  CHECK(none.labels == std::vector<int32_t>(4, 0));

  CHECK(test::thrown_code([&] { transfer_mask(img, labels, mask_s, std::vector<uint8_t>(3, 1), h, w, 0); }) ==
        Errc::shape_mismatch);
}

TEST_CASE("transfer_mask properties") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 3, w = 7;
    const size_t hw = h * w;
    const auto img = random_image(h, w, rng);
    const auto ms = random_mask(hw, rng);
    const auto mt = random_mask(hw, rng);
    std::vector<int32_t> labels(hw);
    for (auto& l : labels) l = std::uniform_int_distribution<int32_t>(1, 3)(rng);
    const auto t = transfer_mask(img, labels, ms, mt, h, w, 0);
    for (size_t pix = 0; pix < hw; ++pix) {
      CHECK(t.mask[pix] <= mt[pix]);
      CHECK(t.mask[pix] <= ms[pix]);
      CHECK(t.labels[pix] == (t.mask[pix] ? labels[pix] : 0));
      for (int k = 0; k < kRangeChannels; ++k)
        if (!mt[pix]) CHECK(t.image[k * hw + pix] == 0.f);
    }
  }
}

TEST_CASE("densify_source keeps valid pixels and fills holes") {
  const auto model = UdaModel<float>::init(tiny_model());
  std::mt19937_64 rng(13);
  const int h = 8, w = 16;
  const size_t hw = h * w;
  const auto x = test::random_tensor<float>({2, kRangeChannels, h, w}, rng);
  const ad::Tensor<float> completion = model.forward_aux(x, true);

  const auto full = densify_source(model, x, std::vector<uint8_t>(2 * hw, 1));
  CHECK(std::equal(full.data().begin(), full.data().end(), x.data().begin()));

  const auto empty = densify_source(model, x, std::vector<uint8_t>(2 * hw, 0));
  CHECK(std::equal(empty.data().begin(), empty.data().end(), completion.data().begin()));

  const auto mask = random_mask(2 * hw, rng);
  const auto mixed = densify_source(model, x, mask);
  for (int n = 0; n < 2; ++n)
    for (int k = 0; k < kRangeChannels; ++k)
      for (size_t pix = 0; pix < hw; ++pix) {
        const size_t i = (static_cast<size_t>(n) * kRangeChannels + k) * hw + pix;
        CHECK(mixed.data()[i] == (mask[n * hw + pix] ? x.data()[i] : completion.data()[i]));
      }

  CHECK(test::thrown_code([&] { densify_source(model, x, std::vector<uint8_t>(hw, 1)); }) == Errc::shape_mismatch);
}

TEST_CASE("class weights are sqrt of inverse frequency") {
  auto cloud_with = [](std::vector<int32_t> labels) {
    PointCloud c;
    c.points.assign(labels.size(), Point3f{1, 0, 0});
    c.intensity.assign(labels.size(), 0.f);
    c.labels = std::move(labels);
    return c;
  };
  std::vector<int32_t> skewed(10, 0);
  skewed[3] = 1;
  std::vector<PointCloud> a{cloud_with(skewed)};
  const auto w = class_weights_from(a, 2, -1);
  CHECK(w[0] == doctest::Approx(1.0541).epsilon(1e-4));
  CHECK(w[1] == doctest::Approx(3.1623).epsilon(1e-4));

  std::vector<PointCloud> uniform{cloud_with({0, 1, 2, 3, 3, 2}), cloud_with({1, 0})};
  for (double v : class_weights_from(uniform, 4, -1)) CHECK(v == doctest::Approx(2.0));

  std::vector<PointCloud> single{cloud_with({2, 2, 2, 0, 0})};
  CHECK(class_weights_from(single, 4, 0) == std::vector<double>{0.0, 0.0, 1.0, 0.0});

  std::vector<PointCloud> only_ignored{cloud_with({0, 0})};
  CHECK(test::thrown_code([&] { class_weights_from(only_ignored, 4, 0); }) == Errc::empty_input);
  std::vector<PointCloud> unlabeled{PointCloud{}};
  CHECK(test::thrown_code([&] { class_weights_from(unlabeled, 4, 0); }) == Errc::invalid_argument);
}

TEST_CASE("default training constants") {
  const TrainConfig cfg;
  CHECK(cfg.lambda_aux == 1e-6);
  CHECK(cfg.optimizer.lr0 == 0.01);
  CHECK(cfg.optimizer.momentum == 0.9);
  CHECK(cfg.optimizer.weight_decay == 0.0001);
  TrainConfig bad;
  bad.lambda_aux = -1.0;
  CHECK(test::thrown_code([&] { bad.validate(); }) == Errc::invalid_argument);
}

TEST_CASE("lambda zero leaves adapters and completion decoder untouched") {
  const Dataset src = synthetic_dataset(2, 1, 16);
  const Dataset tgt = synthetic_dataset(2, 50, 8);
  auto model = UdaModel<float>::init(tiny_model());
  ad::Sgd<float> opt({0.01, 0.9, 0.0001, 0});
  TrainConfig cfg = short_train();
  cfg.lambda_aux = 0.0;
  const auto w = flat_weights(class_weights_from(src.clouds, 4, 0));
  const auto ga0 = snapshot(model, ParamGroup::adapter);
  const auto aux0 = snapshot(model, ParamGroup::aux_decoder);
  const auto dec0 = snapshot(model, ParamGroup::decoder);
  const auto enc0 = snapshot(model, ParamGroup::encoder);
  RunRng rng(1);
  PipelineCounters counters;
  for (int i = 0; i < 3; ++i) train_step(model, opt, batch_of(src, 0, 2), batch_of(tgt, 0, 2), w, cfg, rng, counters);
  CHECK(snapshot(model, ParamGroup::adapter) == ga0);
  CHECK(snapshot(model, ParamGroup::aux_decoder) == aux0);
  CHECK(snapshot(model, ParamGroup::decoder) != dec0);
  CHECK(snapshot(model, ParamGroup::encoder) != enc0);
}

TEST_CASE("completion step alone updates encoder, adapters and completion decoder only") {
  const Dataset src = synthetic_dataset(2, 1, 16);
  const Dataset tgt = synthetic_dataset(2, 50, 8);
  auto model = UdaModel<float>::init(tiny_model());
  ad::Sgd<float> opt({0.01, 0.9, 0.0001, 0});
  TrainConfig cfg = short_train();
  cfg.lambda_aux = 1.0;
  RvBatch source = batch_of(src, 0, 2);
  std::fill(source.masks.begin(), source.masks.end(), 0);
  std::fill(source.labels.begin(), source.labels.end(), 0);
  const auto w = flat_weights(class_weights_from(src.clouds, 4, 0));
  const auto ga0 = snapshot(model, ParamGroup::adapter);
  const auto aux0 = snapshot(model, ParamGroup::aux_decoder);
  const auto dec0 = snapshot(model, ParamGroup::decoder);
  const auto enc0 = snapshot(model, ParamGroup::encoder);
  RunRng rng(1);
  PipelineCounters counters;
  const StepResult r = train_step(model, opt, source, batch_of(tgt, 0, 2), w, cfg, rng, counters);
  CHECK(r.supervised_skipped);
  CHECK(counters.skipped_supervised == 1);
  CHECK(r.loss_t > 0.0);
  CHECK(snapshot(model, ParamGroup::decoder) == dec0);
  CHECK(snapshot(model, ParamGroup::aux_decoder) != aux0);
  CHECK(snapshot(model, ParamGroup::adapter) != ga0);
  CHECK(snapshot(model, ParamGroup::encoder) != enc0);
  CHECK(model.adapters()[0].gamma.item() != 0.f);
}

TEST_CASE("supervised loss is computed before any update") {
  const Dataset src = synthetic_dataset(2, 1, 16);
  const Dataset tgt = synthetic_dataset(2, 50, 8);
  const auto w = flat_weights(class_weights_from(src.clouds, 4, 0));
  auto run = [&](bool rvic) {
    auto model = UdaModel<float>::init(tiny_model());
    ad::Sgd<float> opt;
    TrainConfig cfg = short_train();
    cfg.lambda_aux = 1.0;
    cfg.enable_rvic = rvic;
    RunRng rng(4);
    PipelineCounters counters;
    return train_step(model, opt, batch_of(src, 0, 2), batch_of(tgt, 0, 2), w, cfg, rng, counters).loss_s;
  };
  CHECK(run(true) == run(false));
}

TEST_CASE("disabled modules never execute") {
  const Dataset src = synthetic_dataset(2, 1, 16);
  const Dataset tgt = synthetic_dataset(2, 50, 8);
  TrainConfig cfg = short_train(2);
  cfg.enable_umt = false;
  cfg.enable_ga = false;
  const TrainResult off = train_model(tiny_model(), cfg, src, tgt);
  CHECK(off.counters.rvic_splits == 4);
  CHECK(off.counters.densify_calls == 0);
  CHECK(off.counters.mask_transfers == 0);
  CHECK(off.model.ga_invocations() == 0);

  cfg.enable_rvic = false;
  const TrainResult naive = train_model(tiny_model(), cfg, src, tgt);
  CHECK(naive.counters.rvic_splits == 0);
  CHECK(naive.model.ga_invocations() == 0);

  const TrainResult on = train_model(tiny_model(), short_train(2), src, tgt);
  CHECK(on.counters.rvic_splits == 4);
  CHECK(on.counters.densify_calls == 2);
  CHECK(on.counters.mask_transfers == 4);
  CHECK(on.model.ga_invocations() > 0);
}

TEST_CASE("training is a pure function of its configuration") {
  const Dataset src = synthetic_dataset(3, 1, 16);
  const Dataset tgt = synthetic_dataset(3, 50, 8);
  std::ostringstream log_a, log_b;
  const TrainResult a = train_model(tiny_model(), short_train(4), src, tgt, &log_a);
  const TrainResult b = train_model(tiny_model(), short_train(4), src, tgt, &log_b);
  CHECK(log_a.str() == log_b.str());
  for (auto group : {ParamGroup::encoder, ParamGroup::adapter, ParamGroup::decoder, ParamGroup::aux_decoder})
    CHECK(snapshot(a.model, group) == snapshot(b.model, group));
  const std::string text = log_a.str();
  CHECK(text.starts_with("step 0 loss_t "));
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);

  TrainConfig other = short_train(4);
  other.seed = 2;
  const TrainResult c = train_model(tiny_model(), other, src, tgt);
  CHECK(snapshot(c.model, ParamGroup::decoder) != snapshot(a.model, ParamGroup::decoder));
}

TEST_CASE("train_step rejects mismatched batches") {
  const Dataset src = synthetic_dataset(1, 1, 16);
  auto model = UdaModel<float>::init(tiny_model());
  ad::Sgd<float> opt;
  RunRng rng(1);
  PipelineCounters counters;
  const std::vector<float> w(4, 1.f);
  RvBatch unlabeled = batch_of(src, 0, 1);
  unlabeled.labels.clear();
  CHECK(test::thrown_code([&] {
          train_step(model, opt, unlabeled, batch_of(src, 0, 1), w, short_train(), rng, counters);
        }) == Errc::shape_mismatch);
  std::vector<PointCloud> clouds{src.clouds[0]};
  ProjectionConfig wide = small_proj();
  wide.w = 128;
  const Dataset other = make_dataset(clouds, wide, 0);
  CHECK(test::thrown_code([&] {
          train_step(model, opt, batch_of(src, 0, 1), batch_of(other, 0, 1), w, short_train(), rng, counters);
        }) == Errc::shape_mismatch);
}

TEST_CASE("an oracle model scores 100 percent") {
  // Ground-only scenes; a model whose logits are constant in favor of ground
  // predicts every point correctly.
  std::vector<PointCloud> clouds;
  for (int i = 0; i < 3; ++i) {
    SceneSpec spec;
    spec.beam_count = 16;
    spec.azimuth_steps = 256;
    spec.seed = i;
    clouds.push_back(synth_scene(spec));
  }
  const Dataset ds = make_dataset(std::move(clouds), small_proj(), 0);
  auto model = UdaModel<float>::init(tiny_model());
  for (auto& p : model.named_parameters()) {
    if (p.group != ParamGroup::decoder) continue;
    for (auto& v : p.tensor.data()) v = 0.f;
    if (p.name == "dec.head.bias") p.tensor.data()[synth_class::kGround] = 1.f;
  }
  const ConfusionMatrix cm = evaluate_target(model, ds, EvalConfig{});
  CHECK(cm.total() > 1000);
  CHECK(cm.miou() == 100.0);
}

TEST_CASE("evaluation without kNN matches 1-NN in a 1x1 window on collision-free scans") {
  const ProjectionConfig proj = small_proj();
  std::vector<PointCloud> clouds;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    SceneSpec spec;
    spec.beam_count = proj.h;
    spec.azimuth_steps = proj.w;
    spec.fov_up_deg = proj.fov_up_deg;
    spec.fov_down_deg = proj.fov_down_deg;
    spec.seed = seed;
    spec.layout = random_layout(seed);
    clouds.push_back(synth_scene(spec));
  }
  const Dataset ds = make_dataset(std::move(clouds), proj, 0);
  for (const auto& rv : ds.views)
    REQUIRE(std::count(rv.mask.begin(), rv.mask.end(), uint8_t{1}) == static_cast<long>(rv.point_pixels.size()));
  const auto model = UdaModel<float>::init(tiny_model(9));
  EvalConfig direct;
  direct.knn = false;
  EvalConfig nn;
  nn.knn_cfg = {1, 1, 1.0};
  CHECK(evaluate_target(model, ds, direct) == evaluate_target(model, ds, nn));
  for (size_t i = 0; i < ds.clouds.size(); ++i)
    CHECK(predict_points(model, ds.clouds[i], ds.views[i], direct) ==
          predict_points(model, ds.clouds[i], ds.views[i], nn));
}

TEST_CASE("evaluation errors") {
  const auto model = UdaModel<float>::init(tiny_model());
  CHECK(test::thrown_code([&] { evaluate_target(model, Dataset{}, EvalConfig{}); }) == Errc::empty_input);
  Dataset ds = synthetic_dataset(1, 1, 16);
  ds.clouds[0].labels.reset();
  CHECK(test::thrown_code([&] { evaluate_target(model, ds, EvalConfig{}); }) == Errc::invalid_argument);
}

TEST_CASE("input normalization standardizes valid pixels only") {
  InputNormalization norm;
  norm.enabled = true;
  norm.mean = {1, 2, 3, 4, 5};
  norm.stddev = {2, 2, 2, 2, 2};
  std::vector<float> img(kRangeChannels * 2, 7.f);
  norm.apply(img, std::vector<uint8_t>{1, 0}, 1, 2);
  for (int k = 0; k < kRangeChannels; ++k) {
    CHECK(img[k * 2] == (7.f - norm.mean[k]) / 2.f);
    CHECK(img[k * 2 + 1] == 7.f);
  }
}
