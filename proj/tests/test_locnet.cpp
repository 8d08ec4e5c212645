#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "lumbarseg/autodiff/losses.hpp"
#include "lumbarseg/errors.hpp"
#include "lumbarseg/locnet/canny.hpp"
#include "lumbarseg/locnet/kde.hpp"
#include "lumbarseg/locnet/localizer.hpp"
#include "lumbarseg/selfcheck.hpp"

using namespace lumbarseg;
using namespace lumbarseg::loc;
using data::Vec3;

namespace {

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

LocalizerConfig tiny_config() {
  LocalizerConfig c;
  c.arch.widths = {2, 2, 4};
  c.arch.reduction_features = 8;
  c.arch.hidden_features = 8;
  c.train_refs_per_volume = 6;
  c.infer_refs = 16;
  c.batch_size = 4;
  c.round1_epochs = 3;
  c.round2_epochs = 2;
  return c;
}

std::set<Extents> as_set(const ReferenceVoxelSet& s) { return {s.positions.begin(), s.positions.end()}; }

}  // namespace

TEST_CASE("canny: constant volume has no edges") {
  const data::Volume v({8, 8, 8}, 3.0f);
  const auto r = canny3d(v, {});
  CHECK(r.positions.empty());
  CHECK(r.constant_volume);
}

TEST_CASE("canny: a sharp step gives a plane one voxel thick") {
  data::Volume v({16, 16, 16}, 0.0f);
  for (Index z = 0; z < 16; ++z)
    for (Index y = 0; y < 16; ++y)
      for (Index x = 8; x < 16; ++x) v(z, y, x) = 1.0f;
  const auto r = canny3d(v, {});
  CHECK(r.positions.size() == 16 * 16);
  for (const auto& p : r.positions) CHECK(p[2] == 7);
  CHECK_FALSE(r.constant_volume);
}

TEST_CASE("canny: raising the low threshold never adds edges") {
  const auto ph = small_phantom(4);
  std::set<Extents> previous = as_set(canny3d(ph.image, {1.0, 0.02, 0.15}));
  for (double low : {0.05, 0.08, 0.12}) {
    const auto current = as_set(canny3d(ph.image, {1.0, low, 0.15}));
    CHECK(std::includes(previous.begin(), previous.end(), current.begin(), current.end()));
    previous = current;
  }
}

TEST_CASE("canny: adding a constant leaves the edges unchanged") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> level(0, 24);
  data::Volume v({12, 12, 12}, 0.0f);
  for (auto& x : v.values) x = static_cast<float>(level(rng)) / 8.0f;  // dyadic, exact under +2
  data::Volume shifted = v;
  for (auto& x : shifted.values) x += 2.0f;
  const CannyOptions opts{1.0, 0.01, 0.04};
  CHECK(canny3d(v, opts).positions == canny3d(shifted, opts).positions);
  CHECK_FALSE(canny3d(v, opts).positions.empty());
}

TEST_CASE("canny: invalid thresholds") {
  const data::Volume v({4, 4, 4}, 0.0f);
  CHECK_THROWS_AS(canny3d(v, {1.0, 0.2, 0.1}), ConfigError);
  CHECK_THROWS_AS(canny3d(v, {-1.0, 0.05, 0.1}), ConfigError);
}

TEST_CASE("localization net shape contract") {
  const LocalizationNet<float> net({{4, 4, 8}, 16, 16}, 3);
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0, 1);
  for (int t = 0; t < 3; ++t) {
    ad::Array<float> v(32 * 32 * 32);
    for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
    ad::Shape pre;
    const auto out = net.forward(Tensor<float>::from({1, 32, 32, 32}, v), Mode::eval, &pre);
    CHECK(out.size() == 6);
    CHECK(out.value().isFinite().all());
    CHECK(pre == ad::Shape{8, 4, 4, 4});
  }
  CHECK_THROWS_AS(net.forward(Tensor<float>::zeros({1, 16, 32, 32}), Mode::eval), ShapeError);
}

TEST_CASE("localization net with a zero final layer outputs zeros") {
  LocalizationNet<float> net({{2, 2, 2}, 8, 8}, 5);
  net.parameters().at("head.out.weight").value().setZero();
  std::mt19937_64 rng(2);
  std::normal_distribution<float> n(0, 1);
  ad::Array<float> v(32 * 32 * 32);
  for (Index i = 0; i < v.size(); ++i) v[i] = n(rng);
  const auto out = net.forward(Tensor<float>::from({1, 32, 32, 32}, v), Mode::eval);
  CHECK((out.value() == 0.0f).all());
}

TEST_CASE("displacements reconstruct the ground-truth box exactly") {
  const auto ph = small_phantom(5);
  const auto edges = canny3d(ph.image, {});
  REQUIRE(!edges.positions.empty());
  for (std::size_t i = 0; i < edges.positions.size(); i += 97) {
    const auto& r = edges.positions[i];
    const auto box = box_from_displacement(displacement_target(ph.box, r), r);
    CHECK(box.low == ph.box.low);
    CHECK(box.high == ph.box.high);
  }
}

TEST_CASE("coarse and fine coordinates map both ways") {
  const data::Volume v({9, 6, 5}, 1.5f, Vec3(2, 1, 0.5), Vec3(10, 20, 30));
  const Extents f{2, 2, 3};
  const auto coarse = data::block_mean(v, f);
  CHECK(coarse.extents == Extents{5, 3, 2});
  for (float x : coarse.values) CHECK(x == 1.5f);
  const Vec3 p(3.25, -0.5, 7.0);
  CHECK((data::to_fine(data::to_coarse(p, f), f) - p).norm() < 1e-12);
  // Physical positions agree through either grid.
  const Vec3 j(1, 2, 1);
  CHECK((coarse.physical(j) - v.physical(data::to_fine(j, f))).norm() < 1e-12);
}

TEST_CASE("iou loss grows as the overlap shrinks") {
  using V6 = Eigen::Matrix<double, 6, 1>;
  V6 target;
  target << 0, 0, 0, 4, 3, 2;
  const Eigen::Vector3d ref(1, 1, 1);
  double previous = -1.0;
  for (int step = 0; step <= 10; ++step) {
    V6 pred = target;
    const double shift = 3.5 * step / 10.0;
    pred[0] += shift;
    pred[3] += shift;
    const auto r = ad::iou_loss_3d(Tensor<double>::from({6}, ad::Array<double>(pred.array())), target, ref);
    CHECK(r.loss.value()[0] >= -1e-6);  // -ln(1 + eps) at full overlap
    CHECK(r.loss.value()[0] > previous);
    previous = r.loss.value()[0];
  }
}

TEST_CASE("kde: identical votes, cluster sizes and order invariance") {
  const std::vector<Vec3> same(30, Vec3(4, 5, 6));
  CHECK(density_mode(same, {}) == Vec3(4, 5, 6));

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1.0);
  std::vector<Vec3> votes;
  for (int i = 0; i < 400; ++i) votes.emplace_back(10 + n(rng), 10 + n(rng), 10 + n(rng));
  for (int i = 0; i < 100; ++i) votes.emplace_back(40 + n(rng), 40 + n(rng), 40 + n(rng));
  const Vec3 mode = density_mode(votes, {});
  CHECK((mode - Vec3(10, 10, 10)).cwiseAbs().maxCoeff() < 1.0);

  std::vector<Vec3> shuffled = votes;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(density_mode(shuffled, {}) == mode);

  KdeOptions vote_only;
  vote_only.mean_shift_iterations = 0;
  const Vec3 best_vote = density_mode(votes, vote_only);
  CHECK(std::find(votes.begin(), votes.end(), best_vote) != votes.end());
}

TEST_CASE("kde: bandwidth rule") {
  std::vector<Vec3> votes;
  for (int i = 0; i < 128; ++i) votes.emplace_back(i % 2 ? 10.0 : -10.0, 0.0, i % 2 ? 0.1 : -0.1);
  const Vec3 h = scott_bandwidth(votes, {});
  const double sd = 10.0 * std::sqrt(128.0 / 127.0);
  CHECK(h[0] == doctest::Approx(sd * std::pow(128.0, -1.0 / 7.0)));
  CHECK(h[1] == 1.0);
  CHECK(h[2] == 1.0);
  KdeOptions fixed;
  fixed.fixed_bandwidth = 2.5;
  CHECK(scott_bandwidth(votes, fixed) == Vec3::Constant(2.5));
}

TEST_CASE("kde_aggregate: degenerate votes give a positive-volume box") {
  CornerVotes v;
  v.low.assign(5, Vec3(3, 3, 3));
  v.high.assign(5, Vec3(3, 8, 1));
  const auto box = kde_aggregate(v, {});
  CHECK(box.valid());
  CHECK(box.volume() > 0.0);
  CHECK(box.low == Vec3(2.5, 3, 1));
  CHECK(box.high == Vec3(3.5, 8, 3));
  CHECK_THROWS_AS(kde_aggregate(CornerVotes{}, {}), LocalizationError);
}

TEST_CASE("kde recovers noisy corners") {
  const auto r = check::kde_recovery_suite(20, 500, 2.0, 0);
  CHECK(r.trials == 20);
  CHECK(r.recovered >= 19);
}

TEST_CASE("localizer training: handoff, determinism and prediction") {
  std::vector<data::Phantom> cases{small_phantom(11), small_phantom(12)};
  const auto config = tiny_config();
  const auto a = train_localizer(cases, config, 21);
  CHECK(a.log.round1_loss.size() == 3);
  CHECK(a.log.round2_loss.size() == 2);
  CHECK(a.log.round1_final_hashes == a.log.round2_initial_hashes);
  CHECK(a.checkpoint().metadata.at("round_handoff_verified") == "1");
  const auto b = train_localizer(cases, config, 21);
  CHECK(a.checkpoint().to_bytes() == b.checkpoint().to_bytes());

  const auto net = localizer_from_checkpoint(a.checkpoint());
  CHECK(target_scale_from_checkpoint(a.checkpoint()) == config.target_scale);
  const auto ph = small_phantom(13);
  const auto p1 = predict_roi(ph.image, net, config, 4);
  const auto p2 = predict_roi(ph.image, net, config, 4);
  CHECK(p1.box.low == p2.box.low);
  CHECK(p1.box.high == p2.box.high);
  CHECK(p1.box.volume() > 0.0);
  CHECK(p1.references.size() == 16);

  LocalizerConfig threaded = config;
  threaded.threads = 3;
  const auto p3 = predict_roi(ph.image, net, threaded, 4);
  CHECK(p3.box.low == p1.box.low);
  CHECK(p3.box.high == p1.box.high);

  CHECK_THROWS_AS(predict_roi(data::Volume({40, 40, 40}, 1.0f), net, config, 4), LocalizationError);
  CHECK_THROWS_AS(train_localizer({}, config, 1), TrainingError);
}

TEST_CASE("localizer round-1 loss decreases") {
  std::vector<data::Phantom> cases{small_phantom(31), small_phantom(32), small_phantom(33)};
  auto config = tiny_config();
  config.arch.widths = {4, 4, 8};
  config.arch.reduction_features = 32;
  config.arch.hidden_features = 32;
  config.round1_epochs = 6;
  config.round2_epochs = 0;
  config.train_refs_per_volume = 8;
  const auto t = train_localizer(cases, config, 3);
  const auto& loss = t.log.round1_loss;
  CHECK(loss.back() < loss.front());
  CHECK((loss[3] + loss[4] + loss[5]) < (loss[0] + loss[1] + loss[2]));
}
