#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "lumbarseg/autodiff/ops.hpp"
#include "lumbarseg/errors.hpp"
#include "lumbarseg/segnet/segmenter.hpp"

using namespace lumbarseg;
using namespace lumbarseg::seg;
using data::LabelVolume;
using data::Vec3;
using data::Volume;

namespace {

Tensor<float> random_patch(const ad::Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0, 1);
  ad::Array<float> v(ad::element_count(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  return Tensor<float>::from(shape, std::move(v));
}

LabelVolume random_labels(std::mt19937_64& rng, const Extents& e) {
  LabelVolume v(e, 0);
  std::uniform_int_distribution<int> count(1, 6), label(1, 5);
  const int n = count(rng);
  for (int k = 0; k < n; ++k) {
    Extents lo, hi;
    for (int a = 0; a < 3; ++a) {
      std::uniform_int_distribution<Index> c(0, e[a] - 1);
      const Index p = c(rng), q = c(rng);
      lo[a] = std::min(p, q);
      hi[a] = std::max(p, q);
    }
    const auto l = static_cast<std::uint8_t>(label(rng));
    for (Index z = lo[0]; z <= hi[0]; ++z)
      for (Index y = lo[1]; y <= hi[1]; ++y)
        for (Index x = lo[2]; x <= hi[2]; ++x) v(z, y, x) = l;
  }
  std::bernoulli_distribution flip(0.05);
  for (auto& x : v.values) {
    if (flip(rng)) x = static_cast<std::uint8_t>(label(rng));
  }
  return v;
}

data::Phantom small_phantom(std::uint64_t seed) {
  data::PhantomSpec spec;
  spec.seed = seed;
  spec.extents = {64, 48, 48};
  spec.vertebra_count = 3;
  spec.distractor_count = 1;
  spec.fov_top_min = 8.0;
  spec.fov_top_max = 12.0;
  return data::gen_phantom(spec);
}

SegmenterConfig tiny_config() {
  SegmenterConfig c;
  c.arch.depth = 2;
  c.arch.base_width = 2;
  c.patch = {16, 16, 16};
  c.patches_per_volume = 1;
  c.batch_size = 2;
  c.binary_epochs = 2;
  c.multiclass_epochs = 2;
  return c;
}

}  // namespace

TEST_CASE("segmentation net keeps spatial extents at depths 2 to 4") {
  std::mt19937_64 rng(1);
  for (int depth = 2; depth <= 4; ++depth) {
    const Index unit = Index{1} << depth;
    const SegmentationNet<float> net({depth, 2, 6}, 7);
    for (const ad::Shape& spatial : {ad::Shape{unit, unit, unit}, ad::Shape{2 * unit, unit, 3 * unit}}) {
      const auto out = net.forward(random_patch({1, spatial[0], spatial[1], spatial[2]}, rng), Mode::eval);
      CHECK(out.shape() == ad::Shape{6, spatial[0], spatial[1], spatial[2]});
    }
    CHECK_THROWS_AS(net.forward(random_patch({1, unit + 1, unit, unit}, rng), Mode::eval), ShapeError);
  }
  const SegmentationNet<float> paper_like({3, 2, 2}, 1);
  CHECK(paper_like.forward(random_patch({1, 48, 32, 32}, rng), Mode::eval).shape() == ad::Shape{2, 48, 32, 32});
}

TEST_CASE("ablating a shortcut changes the output") {
  std::mt19937_64 rng(2);
  const SegmentationNet<float> net({2, 2, 2}, 3);
  const auto x = random_patch({1, 8, 8, 8}, rng);
  const auto full = net.forward(x, Mode::eval);
  for (int level = 0; level < 2; ++level) {
    const auto ablated = net.forward(x, Mode::eval, {level});
    CHECK((full.value() - ablated.value()).abs().maxCoeff() > 1e-6f);
  }
}

TEST_CASE("zero final layer gives a uniform softmax") {
  std::mt19937_64 rng(3);
  SegmentationNet<float> net({2, 2, 6}, 4);
  for (const auto& name : SegmentationNet<float>::final_layer_tensors()) net.parameters().at(name).value().setZero();
  const auto p = ad::softmax_channels(net.forward(random_patch({1, 8, 8, 8}, rng), Mode::eval));
  CHECK(((p.value() - 1.0f / 6.0f).abs() < 1e-7f).all());
}

TEST_CASE("class weights") {
  LabelVolume even({2, 2, 2}, 0);
  for (std::size_t i = 0; i < 4; ++i) even.values[i] = 1;
  auto w = compute_class_weights(std::vector<LabelVolume>{even}, 2);
  CHECK(w.weights[0] == w.weights[1]);
  CHECK(w.absent.empty());

  LabelVolume skewed({10, 1, 1}, 0);
  skewed.values[0] = 1;
  w = compute_class_weights(std::vector<LabelVolume>{skewed}, 2);
  CHECK(w.weights[0] < w.weights[1]);
  CHECK(w.weights[1] == doctest::Approx(5.0));

  // Same proportions, ten times the voxels.
  LabelVolume bigger({100, 1, 1}, 0);
  for (std::size_t i = 0; i < 10; ++i) bigger.values[i] = 1;
  CHECK(compute_class_weights(std::vector<LabelVolume>{bigger}, 2).weights == w.weights);

  // Clipping, background cap and absent classes.
  LabelVolume sparse({1000, 1, 1}, 0);
  sparse.values[0] = 1;
  for (std::size_t i = 1; i < 400; ++i) sparse.values[i] = 2;
  w = compute_class_weights(std::vector<LabelVolume>{sparse}, 6);
  CHECK(w.weights[1] == 10.0);
  CHECK(w.weights[0] <= *std::min_element(w.weights.begin() + 1, w.weights.begin() + 3));
  CHECK(w.absent == std::vector<int>{3, 4, 5});
  CHECK(w.weights[3] == 1.0);
  for (double x : w.weights) CHECK(x > 0.0);
  CHECK_THROWS_AS(compute_class_weights(std::vector<LabelVolume>{sparse}, 2), DataError);
}

TEST_CASE("tile starts cover every voxel") {
  CHECK(tile_starts(32, 32, 0.5) == std::vector<Index>{0});
  CHECK(tile_starts(20, 32, 0.5) == std::vector<Index>{-6});
  CHECK(tile_starts(70, 32, 0.5) == std::vector<Index>{0, 16, 32, 38});
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<Index> extent(1, 90);
  for (int t = 0; t < 200; ++t) {
    const Index e = extent(rng);
    const auto starts = tile_starts(e, 16, 0.5);
    std::vector<int> cover(static_cast<std::size_t>(e), 0);
    for (Index s : starts)
      for (Index i = std::max<Index>(s, 0); i < std::min(e, s + 16); ++i) ++cover[static_cast<std::size_t>(i)];
    CHECK(std::all_of(cover.begin(), cover.end(), [](int c) { return c >= 1; }));
  }
}

TEST_CASE("sliding window averaging") {
  std::mt19937_64 rng(6);
  const Extents patch{8, 8, 8};
  // Constant stub: output is that constant whatever the overlap.
  auto constant = [](const Tensor<float>& x) {
    ad::Array<float> p(3 * x.voxels());
    p.segment(0, x.voxels()).setConstant(0.2f);
    p.segment(x.voxels(), x.voxels()).setConstant(0.3f);
    p.segment(2 * x.voxels(), x.voxels()).setConstant(0.5f);
    return p;
  };
  Volume v({13, 9, 21}, 0.0f);
  for (auto& x : v.values) x = std::normal_distribution<float>(0, 1)(rng);
  const auto avg = sliding_window_average(v, patch, 0.5, 3, constant);
  const Index voxels = data::voxel_count(v.extents);
  for (Index i = 0; i < voxels; ++i) {
    CHECK(avg.at(0, i) == doctest::Approx(0.2f));
    CHECK(avg.at(2, i) == doctest::Approx(0.5f));
    CHECK(std::abs(avg.at(0, i) + avg.at(1, i) + avg.at(2, i) - 1.0f) < 1e-6f);
  }
  const auto threaded = sliding_window_average(v, patch, 0.5, 3, constant, 3);
  CHECK(threaded.values == avg.values);

  // One patch exactly: identical to a single forward pass.
  const SegmentationNet<float> net({2, 2, 6}, 8);
  SegmenterConfig config;
  config.patch = {8, 8, 8};
  Volume one({8, 8, 8}, 0.0f);
  for (auto& x : one.values) x = std::normal_distribution<float>(0, 1)(rng);
  const auto probs = sliding_window_infer(one, net, config);
  ad::Array<float> in = Eigen::Map<const ad::Array<float>>(one.values.data(), one.size());
  const auto direct = ad::softmax_channels(net.forward(Tensor<float>::from({1, 8, 8, 8}, in), Mode::eval));
  for (Index i = 0; i < direct.size(); ++i) CHECK(probs.values[static_cast<std::size_t>(i)] == direct.value()[i]);
  for (Index i = 0; i < 512; ++i) {
    float sum = 0.0f;
    for (int c = 0; c < 6; ++c) sum += probs.at(c, i);
    CHECK(std::abs(sum - 1.0f) < 1e-6f);
  }
}

TEST_CASE("argmax breaks ties toward the lowest class") {
  ProbabilityMap p;
  p.extents = {1, 1, 2};
  p.class_count = 3;
  p.values = {0.4f, 0.2f, 0.4f, 0.4f, 0.2f, 0.4f};
  const auto l = argmax_labels(p, Volume({1, 1, 2}, 0.0f));
  CHECK(l.values == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("postprocess: identity, island removal and cavity filling") {
  LabelVolume solid({10, 10, 10}, 0);
  for (Index z = 2; z < 8; ++z)
    for (Index y = 2; y < 8; ++y)
      for (Index x = 2; x < 8; ++x) solid(z, y, x) = 3;
  CHECK(postprocess(solid).values == solid.values);

  LabelVolume island = solid;
  island(0, 0, 0) = island(0, 0, 1) = island(0, 1, 1) = 2;
  const auto cleaned = postprocess(island, Index{10});
  CHECK(cleaned.values == solid.values);

  LabelVolume cavity = solid;
  cavity(4, 4, 4) = 0;
  CHECK(postprocess(cavity).values == solid.values);

  // A cavity touching two labels is left alone.
  LabelVolume split = solid;
  for (Index z = 5; z < 8; ++z)
    for (Index y = 2; y < 8; ++y)
      for (Index x = 2; x < 8; ++x) split(z, y, x) = 4;
  split(5, 4, 4) = 0;
  CHECK(postprocess(split)(5, 4, 4) == 0);
}

TEST_CASE("postprocess is idempotent") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<Index> extent(4, 14);
  for (int t = 0; t < 50; ++t) {
    const auto v = random_labels(rng, {extent(rng), extent(rng), extent(rng)});
    const auto once = postprocess(v);
    CHECK(postprocess(once).values == once.values);
  }
}

TEST_CASE("standardize") {
  Volume v({2, 2, 2}, 0.0f);
  for (std::size_t i = 0; i < 8; ++i) v.values[i] = static_cast<float>(i);
  const auto s = standardize(v);
  double mean = 0, var = 0;
  for (float x : s.values) mean += x;
  mean /= 8;
  for (float x : s.values) var += (x - mean) * (x - mean);
  CHECK(std::abs(mean) < 1e-6);
  CHECK(var / 8 == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(standardize(Volume({2, 2, 2}, 4.0f)).values == std::vector<float>(8, 0.0f));
}

TEST_CASE("two-step training: handoff, checkpoints and determinism") {
  std::vector<data::Phantom> cases{small_phantom(41), small_phantom(42)};
  const auto config = tiny_config();
  const auto binary = train_binary(cases, config, 5);
  CHECK(binary.log.loss.size() == 2);
  CHECK(binary.net.architecture().class_count == 2);
  const auto ckpt = binary.checkpoint();
  CHECK(ad::Checkpoint<float>::from_bytes(ckpt.to_bytes()).to_bytes() == ckpt.to_bytes());
  const auto reloaded = segmenter_from_checkpoint(ad::Checkpoint<float>::from_bytes(ckpt.to_bytes()));
  CHECK(ad::tensor_hashes(reloaded.parameters()) == ad::tensor_hashes(binary.net.parameters()));

  const auto step0 = multiclass_from_binary(ckpt, config, 5);
  CHECK(step0.architecture().class_count == 6);
  const auto finals = SegmentationNet<float>::final_layer_tensors();
  for (const auto& [name, hash] : ad::tensor_hashes(step0.parameters())) {
    if (std::find(finals.begin(), finals.end(), name) != finals.end()) {
      CHECK(step0.parameters().at(name).dim(0) == 6);
      continue;
    }
    CHECK(hash == ckpt.hash_of(name));
  }

  const auto multi = train_multiclass(cases, ckpt, config, 5);
  CHECK(multi.log.initial_hashes == multi.log.source_hashes);
  CHECK(!multi.log.initial_hashes.empty());
  CHECK(multi.checkpoint().metadata.at("binary_handoff_verified") == "1");
  const auto again = train_multiclass(cases, ckpt, config, 5);
  CHECK(again.checkpoint().to_bytes() == multi.checkpoint().to_bytes());

  SegmenterConfig wider = config;
  wider.arch.base_width = 4;
  CHECK_THROWS_AS(multiclass_from_binary(ckpt, wider, 5), CheckpointError);

  std::vector<data::Phantom> empty_labels{cases[0]};
  std::fill(empty_labels[0].labels.values.begin(), empty_labels[0].labels.values.end(), 0);
  CHECK_THROWS_AS(train_binary(empty_labels, config, 5), TrainingError);
}

TEST_CASE("binary training loss trends down") {
  std::vector<data::Phantom> cases{small_phantom(51), small_phantom(52), small_phantom(53)};
  auto config = tiny_config();
  config.arch.base_width = 4;
  config.binary_epochs = 8;
  config.patches_per_volume = 2;
  const auto t = train_binary(cases, config, 9);
  const auto& l = t.log.loss;
  CHECK((l[5] + l[6] + l[7]) < (l[0] + l[1] + l[2]));
}
