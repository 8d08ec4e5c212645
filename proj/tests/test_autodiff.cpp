#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "doctest.h"
#include "lumbarseg/autodiff/adam.hpp"
#include "lumbarseg/autodiff/checkpoint.hpp"
#include "lumbarseg/autodiff/gradcheck.hpp"
#include "lumbarseg/autodiff/losses.hpp"
#include "lumbarseg/autodiff/ops.hpp"
#include "lumbarseg/autodiff/parameters.hpp"
#include "lumbarseg/selfcheck.hpp"

using namespace lumbarseg;
using namespace lumbarseg::ad;

namespace {

template <typename Scalar = double>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, bool grad = true,
                             double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Array<Scalar> v(element_count(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(u(rng));
  return Tensor<Scalar>::from(std::move(shape), std::move(v), grad);
}

Tensor<double> no_bias() { return {}; }

}  // namespace

TEST_CASE("conv3d zero input and zero bias gives zero output") {
  std::mt19937_64 rng(1);
  auto x = Tensor<double>::zeros({1, 4, 4, 4});
  auto k = random_tensor({3, 1, 3, 3, 3}, rng);
  auto b = Tensor<double>::zeros({3});
  auto y = conv3d(x, k, b);
  CHECK(y.shape() == Shape{3, 4, 4, 4});
  CHECK((y.value() == 0.0).all());
}

TEST_CASE("conv3d same padding keeps spatial extents") {
  std::mt19937_64 rng(2);
  auto y = conv3d(random_tensor({2, 8, 8, 8}, rng), random_tensor({5, 2, 3, 3, 3}, rng), no_bias());
  CHECK(y.shape() == Shape{5, 8, 8, 8});
  for (Index d : {1, 2, 3, 5}) {
    auto z = conv3d(random_tensor({1, d, 3, 2}, rng), random_tensor({2, 1, 3, 3, 3}, rng), no_bias());
    CHECK(z.shape() == Shape{2, d, 3, 2});
  }
}

TEST_CASE("conv3d of ones with a ones kernel sums the 27-neighbourhood") {
  auto x = Tensor<double>::constant({1, 4, 4, 4}, 1.0);
  auto k = Tensor<double>::constant({1, 1, 3, 3, 3}, 1.0);
  auto y = conv3d(x, k, Tensor<double>::zeros({1}));
  // direct summation: interior voxel (1,1,1) sees all 27 neighbours; a corner sees 8
  CHECK(y.value()[(1 * 4 + 1) * 4 + 1] == doctest::Approx(27.0));
  CHECK(y.value()[0] == doctest::Approx(8.0));
}

TEST_CASE("conv3d valid padding with a 4^3 kernel reduces 4^3 to 1^3") {
  std::mt19937_64 rng(3);
  auto y = conv3d(random_tensor({3, 4, 4, 4}, rng), random_tensor({7, 3, 4, 4, 4}, rng), no_bias(),
                  Padding::valid);
  CHECK(y.shape() == Shape{7, 1, 1, 1});
}

TEST_CASE("conv3d rejects channel mismatch and non-finite input") {
  std::mt19937_64 rng(4);
  auto k = random_tensor({2, 3, 3, 3, 3}, rng);
  CHECK_THROWS_AS(conv3d(random_tensor({2, 4, 4, 4}, rng), k, no_bias()), ShapeError);
  auto x = random_tensor({3, 4, 4, 4}, rng);
  x.value()[5] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(conv3d(x, k, no_bias()), NumericError);
}

TEST_CASE("maxpool3d halves extents and keeps constants") {
  auto y = maxpool3d(Tensor<double>::constant({2, 32, 32, 32}, 3.5));
  CHECK(y.shape() == Shape{2, 16, 16, 16});
  CHECK((y.value() == 3.5).all());
  CHECK_THROWS_AS(maxpool3d(Tensor<double>::zeros({1, 3, 4, 4})), ShapeError);
}

TEST_CASE("maxpool3d routes the gradient to the single maximum of a block") {
  // exhaustive over the 8 positions of a 2x2x2 block
  for (Index pos = 0; pos < 8; ++pos) {
    auto x = Tensor<double>::zeros({1, 2, 2, 2}, true);
    x.value()[pos] = 5.0;
    auto y = maxpool3d(x);
    CHECK(y.value()[0] == 5.0);
    sum(y).backward();
    for (Index i = 0; i < 8; ++i) CHECK(x.grad()[i] == (i == pos ? 1.0 : 0.0));
  }
}

TEST_CASE("transposed_conv3d doubles extents and stamps the kernel") {
  std::mt19937_64 rng(5);
  auto y = transposed_conv3d(random_tensor({3, 4, 4, 4}, rng), random_tensor({3, 2, 2, 2, 2}, rng),
                             no_bias());
  CHECK(y.shape() == Shape{2, 8, 8, 8});

  auto zero = transposed_conv3d(Tensor<double>::zeros({3, 4, 4, 4}),
                                random_tensor({3, 2, 2, 2, 2}, rng), no_bias());
  CHECK((zero.value() == 0.0).all());

  // unit impulse at (1, 0, 1) of a 1-channel 2^3 input stamps the 2^3 kernel
  // into output block z in {2,3}, y in {0,1}, x in {2,3}
  auto x = Tensor<double>::zeros({1, 2, 2, 2});
  x.value()[(1 * 2 + 0) * 2 + 1] = 1.0;
  Array<double> kv(8);
  for (Index i = 0; i < 8; ++i) kv[i] = static_cast<double>(i + 1);
  auto k = Tensor<double>::from({1, 1, 2, 2, 2}, kv);
  auto out = transposed_conv3d(x, k, no_bias());
  for (Index z = 0; z < 4; ++z) {
    for (Index yy = 0; yy < 4; ++yy) {
      for (Index xx = 0; xx < 4; ++xx) {
        const double v = out.value()[(z * 4 + yy) * 4 + xx];
        const bool inside = z >= 2 && yy < 2 && xx >= 2;
        const double expected = inside ? kv[((z - 2) * 2 + yy) * 2 + (xx - 2)] : 0.0;
        CHECK(v == expected);
      }
    }
  }
}

TEST_CASE("maxpool then transposed conv restores even extents") {
  std::mt19937_64 rng(6);
  for (Shape s : {Shape{1, 2, 4, 6}, Shape{2, 8, 8, 8}, Shape{1, 6, 10, 4}}) {
    auto pooled = maxpool3d(random_tensor(s, rng));
    auto up = transposed_conv3d(pooled, random_tensor({s[0], 3, 2, 2, 2}, rng), no_bias());
    CHECK(up.dim(1) == s[1]);
    CHECK(up.dim(2) == s[2]);
    CHECK(up.dim(3) == s[3]);
  }
}

TEST_CASE("batch_norm3d train mode standardizes each channel") {
  std::mt19937_64 rng(7);
  auto x = random_tensor({3, 4, 5, 6}, rng, false, -3.0, 7.0);
  auto scale = Tensor<double>::constant({3}, 1.0);
  auto shift = Tensor<double>::zeros({3});
  auto rm = Tensor<double>::zeros({3});
  auto rv = Tensor<double>::constant({3}, 1.0);
  auto y = batch_norm3d(x, scale, shift, rm, rv, Mode::train);
  const Index n = 4 * 5 * 6;
  for (Index c = 0; c < 3; ++c) {
    auto seg = y.value().segment(c * n, n);
    CHECK(std::abs(seg.mean()) < 1e-5);
    CHECK(std::abs((seg - seg.mean()).square().mean() - 1.0) < 1e-5);
  }
  // running statistics moved toward the batch statistics
  CHECK((rm.value() != 0.0).all());
  CHECK((rv.value() > 0.0).all());
}

TEST_CASE("batch_norm3d eval mode with unit statistics is the identity") {
  std::mt19937_64 rng(8);
  auto x = random_tensor({2, 3, 3, 3}, rng, false);
  auto scale = Tensor<double>::constant({2}, 1.0);
  auto shift = Tensor<double>::zeros({2});
  auto rm = Tensor<double>::zeros({2});
  auto rv = Tensor<double>::constant({2}, 1.0);
  auto y = batch_norm3d(x, scale, shift, rm, rv, Mode::eval);
  // x / sqrt(1 + 1e-5)
  CHECK(((y.value() - x.value()).abs() < 1e-5).all());
}

TEST_CASE("batch_norm3d constant channel normalizes to zero without blowing up") {
  auto x = Tensor<double>::constant({1, 4, 4, 4}, 42.0);
  auto scale = Tensor<double>::constant({1}, 1.0);
  auto shift = Tensor<double>::zeros({1});
  auto rm = Tensor<double>::zeros({1});
  auto rv = Tensor<double>::constant({1}, 1.0);
  auto y = batch_norm3d(x, scale, shift, rm, rv, Mode::train);
  CHECK(y.value().allFinite());
  CHECK((y.value() == 0.0).all());
  CHECK(rv.value()[0] > 0.0);
}

TEST_CASE("relu forward, zero case and gradient") {
  auto x = Tensor<double>::from({3}, (Array<double>(3) << -1.0, 0.0, 2.0).finished(), true);
  auto y = relu(x);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == 0.0);
  CHECK(y.value()[2] == 2.0);

  auto neg = Tensor<double>::constant({4}, -2.0, true);
  auto yn = relu(neg);
  CHECK((yn.value() == 0.0).all());
  sum(yn).backward();
  CHECK((neg.grad() == 0.0).all());

  // central difference at x = 3
  auto at3 = Tensor<double>::constant({1}, 3.0, true);
  sum(relu(at3)).backward();
  const double h = 1e-4;
  const double fd = ((3.0 + h) - (3.0 - h)) / (2 * h);
  CHECK(at3.grad()[0] == doctest::Approx(fd));
  CHECK(at3.grad()[0] == 1.0);
}

TEST_CASE("softmax_channels examples") {
  auto eq = softmax_channels(Tensor<double>::from({2, 1, 1, 1}, Array<double>::Constant(2, 0.7)));
  CHECK(eq.value()[0] == doctest::Approx(0.5));
  CHECK(eq.value()[1] == doctest::Approx(0.5));

  auto big = softmax_channels(
      Tensor<double>::from({2, 1, 1, 1}, (Array<double>(2) << 1000.0, 0.0).finished()));
  CHECK(big.value().allFinite());
  CHECK(big.value()[0] == doctest::Approx(1.0));
  CHECK(big.value()[1] < 1e-300);

  auto three = softmax_channels(
      Tensor<double>::from({3, 1, 1, 1}, (Array<double>(3) << 1.0, 2.0, 3.0).finished()));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(three.value()[0] == doctest::Approx(std::exp(1.0) / z));
  CHECK(three.value()[1] == doctest::Approx(std::exp(2.0) / z));
  CHECK(three.value()[2] == doctest::Approx(std::exp(3.0) / z));
}

TEST_CASE("softmax_channels sums to one at every voxel") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = softmax_channels(random_tensor({6, 3, 4, 5}, rng, false, -20.0, 20.0));
    const Index n = 60;
    for (Index v = 0; v < n; ++v) {
      double s = 0.0;
      for (Index c = 0; c < 6; ++c) {
        const double pv = p.value()[c * n + v];
        CHECK(pv >= 0.0);
        CHECK(pv <= 1.0);
        s += pv;
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("adam with zero gradient leaves fresh parameters unchanged") {
  std::mt19937_64 rng(10);
  auto p = random_tensor({5}, rng);
  const Array<double> before = p.value();
  p.grad().setZero();
  AdamState<double> state;
  std::vector<Tensor<double>> params{p};
  adam_step<double>(params, state);
  CHECK((p.value() == before).all());
  CHECK(state.step_count == 1);
  CHECK((state.first_moment[0] == 0.0).all());
  CHECK((state.second_moment[0] >= 0.0).all());
}

TEST_CASE("adam first step moves by learning rate against the gradient sign") {
  for (double g : {0.3, -7.0, 1e-3}) {
    auto p = Tensor<double>::constant({1}, 2.0, true);
    p.grad()[0] = g;
    AdamState<double> state;
    state.learning_rate = 0.01;
    std::vector<Tensor<double>> params{p};
    adam_step<double>(params, state);
    // m_hat = g, v_hat = g^2  =>  step = lr * g / (|g| + eps)
    const double expected = 2.0 - 0.01 * g / (std::abs(g) + 1e-8);
    CHECK(p.value()[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::abs((p.value()[0] - 2.0) + 0.01 * (g > 0 ? 1 : -1)) < 1e-6);
  }
}

TEST_CASE("adam is deterministic and rejects non-finite gradients untouched") {
  auto run = [] {
    auto p = Tensor<double>::constant({3}, 1.0, true);
    AdamState<double> state;
    std::vector<Tensor<double>> params{p};
    for (int i = 0; i < 2; ++i) {
      p.grad() << 0.1, -0.2, 0.3;
      adam_step<double>(params, state);
    }
    return Array<double>(p.value());
  };
  CHECK((run() == run()).all());

  auto p = Tensor<double>::constant({2}, 1.0, true);
  p.grad() << 1.0, std::numeric_limits<double>::infinity();
  AdamState<double> state;
  std::vector<Tensor<double>> params{p};
  CHECK_THROWS_AS(adam_step<double>(params, state), NumericError);
  CHECK((p.value() == 1.0).all());
  CHECK(state.step_count == 0);
}

TEST_CASE("gradient check: linear layer") {
  std::mt19937_64 rng(11);
  auto x = random_tensor({4, 1, 1, 1}, rng);
  auto w = random_tensor({3, 4, 1, 1, 1}, rng);
  auto b = random_tensor({3}, rng);
  auto report = finite_difference_check(
      [](const std::vector<Tensor<double>>& in) { return sum(conv3d(in[0], in[1], in[2])); },
      {x, w, b});
  CHECK(report.passed);
  CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("gradient check: conv3d + relu + mean on a 6^3 input") {
  std::mt19937_64 rng(12);
  auto x = random_tensor({2, 6, 6, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto report = finite_difference_check(
      [](const std::vector<Tensor<double>>& in) {
        return mean(relu(conv3d(in[0], in[1], in[2])));
      },
      {x, w, b}, {.step = 1e-3, .tolerance = 1e-4});
  CHECK_FALSE(report.excluded);
  CHECK(report.passed);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("gradient check flags a maxpool tie as excluded") {
  auto x = Tensor<double>::constant({1, 2, 2, 2}, 1.0, true);
  auto report = finite_difference_check(
      [](const std::vector<Tensor<double>>& in) { return sum(maxpool3d(in[0])); }, {x});
  CHECK(report.excluded);
  CHECK(report.compared == 0);
}

TEST_CASE("gradient check detects a corrupted conv gradient") {
  std::mt19937_64 rng(13);
  auto x = random_tensor({1, 4, 4, 4}, rng);
  auto w = random_tensor({2, 1, 3, 3, 3}, rng, false);
  testing::set_gradient_corruption(0.05);
  auto report = finite_difference_check(
      [&](const std::vector<Tensor<double>>& in) { return mean(conv3d(in[0], w, no_bias())); }, {x});
  testing::set_gradient_corruption(0.0);
  CHECK_FALSE(report.passed);
}

TEST_CASE("mse_loss examples") {
  auto a = Tensor<double>::from({6}, (Array<double>(6) << 1, 2, 3, 4, 5, 6).finished());
  CHECK(mse_loss(a, a).value()[0] == 0.0);
  CHECK(mse_loss(Tensor<double>::zeros({6}), Tensor<double>::constant({6}, 1.0)).value()[0] ==
        doctest::Approx(1.0));
  std::mt19937_64 rng(14);
  auto p = random_tensor({6}, rng), q = random_tensor({6}, rng);
  CHECK(mse_loss(p, q).value()[0] == mse_loss(q, p).value()[0]);
}

TEST_CASE("iou_loss_3d examples") {
  using V6 = Eigen::Matrix<double, 6, 1>;
  const Eigen::Vector3d ref(10.0, -4.0, 2.5);
  V6 unit;
  unit << 0, 0, 0, 1, 1, 1;
  auto same = iou_loss_3d(Tensor<double>::from({6}, unit.array()), unit, ref);
  CHECK(same.loss.value()[0] < 1e-5);
  CHECK(same.iou == doctest::Approx(1.0));

  V6 shifted;
  shifted << 0.5, 0, 0, 1.5, 1, 1;
  auto half = iou_loss_3d(Tensor<double>::from({6}, shifted.array()), unit, ref);
  CHECK(half.iou == doctest::Approx(1.0 / 3.0));
  CHECK(std::abs(half.loss.value()[0] - std::log(3.0)) < 1e-6);

  V6 far;
  far << 5, 5, 5, 6, 6, 6;
  auto disjoint = iou_loss_3d(Tensor<double>::from({6}, far.array(), true), unit, ref);
  CHECK(disjoint.disjoint);
  CHECK(disjoint.loss.value()[0] == doctest::Approx(-std::log(1e-7)));

  // swapped corners still describe the same box
  V6 swapped;
  swapped << 1, 1, 1, 0, 0, 0;
  CHECK(iou_loss_3d(Tensor<double>::from({6}, swapped.array()), unit, ref).iou ==
        doctest::Approx(1.0));
}

TEST_CASE("weighted_cross_entropy examples") {
  const std::vector<std::uint8_t> labels{0, 1, 1, 0};
  const std::vector<double> unit{1.0, 1.0};
  auto uniform = Tensor<double>::zeros({2, 1, 2, 2});
  CHECK(weighted_cross_entropy(uniform, labels, unit).value()[0] == doctest::Approx(std::log(2.0)));

  Array<double> confident(8);
  for (Index v = 0; v < 4; ++v) {
    confident[v] = labels[static_cast<std::size_t>(v)] == 0 ? 50.0 : -50.0;
    confident[4 + v] = -confident[v];
  }
  CHECK(weighted_cross_entropy(Tensor<double>::from({2, 1, 2, 2}, confident), labels, unit)
            .value()[0] < 1e-12);

  std::mt19937_64 rng(15);
  auto logits = random_tensor({2, 1, 2, 2}, rng);
  const std::vector<double> w{0.3, 2.0}, w2{0.6, 4.0};
  auto l1 = weighted_cross_entropy(logits, labels, w);
  l1.backward();
  const Array<double> g1 = logits.grad();
  logits.zero_grad();
  auto l2 = weighted_cross_entropy(logits, labels, w2);
  l2.backward();
  CHECK(l2.value()[0] == doctest::Approx(2.0 * l1.value()[0]));
  CHECK(((logits.grad() - 2.0 * g1).abs() < 1e-12).all());

  const std::vector<std::uint8_t> bad{0, 2, 1, 0};
  CHECK_THROWS_AS(weighted_cross_entropy(logits, bad, unit), DataError);
}

TEST_CASE("forward and backward are bit-identical across runs") {
  auto run = [] {
    std::mt19937_64 rng(16);
    auto x = random_tensor<float>({2, 6, 6, 6}, rng);
    auto w = random_tensor<float>({4, 2, 3, 3, 3}, rng);
    auto y = mean(relu(conv3d(x, w, Tensor<float>{})));
    y.backward();
    return std::pair<Array<float>, Array<float>>(y.value(), w.grad());
  };
  const auto a = run(), b = run();
  CHECK((a.first == b.first).all());
  CHECK((a.second == b.second).all());
}

TEST_CASE("checkpoint round trip is byte exact") {
  std::mt19937_64 rng(17);
  ParameterSet<float> params;
  add_conv_bn_relu(params, "enc0", 1, 4, rng);
  AdamState<float> adam;
  adam.learning_rate = 3e-4;
  auto trainable = params.trainable();
  for (auto& t : trainable) t.grad().setConstant(0.25f);
  adam_step<float>(trainable, adam);

  auto ck = Checkpoint<float>::capture(params, adam, {{"kind", "test"}, {"epoch", "3"}});
  const auto path = std::filesystem::temp_directory_path() / "lumbarseg_ck_test.bin";
  ck.save(path);
  auto loaded = Checkpoint<float>::load(path);
  CHECK(loaded.to_bytes() == ck.to_bytes());
  CHECK(loaded.metadata.at("kind") == "test");
  CHECK(loaded.adam.step_count == 1);

  ParameterSet<float> other;
  std::mt19937_64 rng2(99);
  add_conv_bn_relu(other, "enc0", 1, 4, rng2);
  loaded.restore_into(other);
  for (const auto& e : params.entries()) {
    CHECK(tensor_hash(e.tensor.shape(), e.tensor.value()) == loaded.hash_of(e.name));
  }

  auto bytes = ck.to_bytes();
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(Checkpoint<float>::from_bytes(bytes), CheckpointError);
  CHECK_THROWS_AS(Checkpoint<double>::from_bytes(ck.to_bytes()), CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("gradient suite covers every family and passes") {
  const auto results = check::gradient_suite(3, 11);
  CHECK(results.size() == 7);
  for (const auto& r : results) {
    CAPTURE(r.name);
    CHECK(r.trials == 3);
    CHECK(r.passed == r.trials);
    CHECK(r.max_relative_error < 1e-4);
  }
}
