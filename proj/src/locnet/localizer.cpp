#include "lumbarseg/locnet/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "lumbarseg/autodiff/losses.hpp"
#include "lumbarseg/dataset/patches.hpp"
#include "lumbarseg/kv_text.hpp"
#include "lumbarseg/seeding.hpp"

namespace lumbarseg::loc {

namespace {

constexpr Index kHalf = LocalizationNet<float>::kPatchExtent / 2;

struct Sample {
  std::size_t case_index;
  Extents reference;
};

Eigen::Vector3d as_vec(const Extents& p) {
  return {static_cast<double>(p[0]), static_cast<double>(p[1]), static_cast<double>(p[2])};
}

std::vector<Extents> draw_references(const std::vector<Extents>& pool, int count, std::mt19937_64& rng) {
  std::vector<Extents> out;
  if (pool.empty() || count <= 0) return out;
  if (static_cast<std::size_t>(count) >= pool.size()) return pool;
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates: first `count` entries are a uniform sample.
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    std::uniform_int_distribution<std::size_t> u(i, idx.size() - 1);
    std::swap(idx[i], idx[u(rng)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

std::map<std::string, std::string> architecture_metadata(const LocNetArchitecture& arch, double scale,
                                                         const Extents& downsample) {
  return {{"kind", "localizer"},
          {"arch.widths", std::to_string(arch.widths[0]) + " " + std::to_string(arch.widths[1]) + " " +
                              std::to_string(arch.widths[2])},
          {"arch.reduction_features", std::to_string(arch.reduction_features)},
          {"arch.hidden_features", std::to_string(arch.hidden_features)},
          {"target_scale", format_double(scale)},
          {"downsample", std::to_string(downsample[0]) + " " + std::to_string(downsample[1]) + " " +
                             std::to_string(downsample[2])}};
}

void check_finite(double loss, const char* stage, int epoch) {
  if (!std::isfinite(loss)) {
    throw NumericError(std::string("localizer ") + stage + " diverged at epoch " + std::to_string(epoch) +
                       " (non-finite loss)");
  }
}

}  // namespace

Tensor<float> reference_patch(const data::Volume& volume, const Extents& reference) {
  constexpr Index n = LocalizationNet<float>::kPatchExtent;
  const Extents start{reference[0] - kHalf, reference[1] - kHalf, reference[2] - kHalf};
  const data::Volume patch = data::extract_patch(volume, start, {n, n, n}, {0, 0, 0});
  ad::Array<float> v = Eigen::Map<const ad::Array<float>>(patch.values.data(), patch.size());
  const double mean = v.cast<double>().mean();
  const double var = (v.cast<double>() - mean).square().mean();
  const double inv_std = 1.0 / std::max(std::sqrt(var), 1e-6);
  v = ((v.cast<double>() - mean) * inv_std).cast<float>();
  return Tensor<float>::from({1, n, n, n}, std::move(v));
}

Displacement displacement_target(const data::BoundingBox3D& box, const Extents& reference) {
  const Eigen::Vector3d r = as_vec(reference);
  Displacement d;
  d << box.low - r, box.high - r;
  return d;
}

data::BoundingBox3D box_from_displacement(const Displacement& d, const Extents& reference) {
  const Eigen::Vector3d r = as_vec(reference);
  return {r + d.head<3>(), r + d.tail<3>()};
}

ad::Checkpoint<float> TrainedLocalizer::checkpoint() const {
  auto meta = architecture_metadata(net.architecture(), target_scale, downsample);
  meta["round_handoff_verified"] = log.round1_final_hashes == log.round2_initial_hashes ? "1" : "0";
  return ad::Checkpoint<float>::capture(net.parameters(), adam, std::move(meta));
}

LocalizationNet<float> localizer_from_checkpoint(const ad::Checkpoint<float>& checkpoint) {
  const auto it = checkpoint.metadata.find("kind");
  if (it == checkpoint.metadata.end() || it->second != "localizer") {
    throw CheckpointError("checkpoint does not hold a localizer");
  }
  KvDocument doc;
  for (const auto& [k, v] : checkpoint.metadata) doc.set(k, v);
  LocNetArchitecture arch;
  const auto widths = doc.get_ints("arch.widths");
  if (widths.size() != 3) throw CheckpointError("localizer checkpoint: arch.widths needs 3 values");
  for (int i = 0; i < 3; ++i) arch.widths[static_cast<std::size_t>(i)] = widths[static_cast<std::size_t>(i)];
  arch.reduction_features = doc.get_int("arch.reduction_features");
  arch.hidden_features = doc.get_int("arch.hidden_features");
  LocalizationNet<float> net(arch, 0);
  checkpoint.restore_into(net.parameters());
  return net;
}

double target_scale_from_checkpoint(const ad::Checkpoint<float>& checkpoint) {
  const auto it = checkpoint.metadata.find("target_scale");
  if (it == checkpoint.metadata.end()) throw CheckpointError("localizer checkpoint lacks target_scale");
  return parse_double(it->second);
}

LocalizerConfig localizer_config_from_checkpoint(const ad::Checkpoint<float>& checkpoint, LocalizerConfig base) {
  const auto it = checkpoint.metadata.find("downsample");
  if (it == checkpoint.metadata.end()) throw CheckpointError("localizer checkpoint lacks downsample");
  KvDocument doc;
  doc.set("downsample", it->second);
  const auto f = doc.get_ints("downsample");
  if (f.size() != 3 || *std::min_element(f.begin(), f.end()) < 1) {
    throw CheckpointError("localizer checkpoint: downsample needs 3 positive values");
  }
  base.downsample = {f[0], f[1], f[2]};
  base.target_scale = target_scale_from_checkpoint(checkpoint);
  base.arch = localizer_from_checkpoint(checkpoint).architecture();
  return base;
}

TrainedLocalizer train_localizer(std::span<const data::Phantom> cases, const LocalizerConfig& config,
                                 std::uint64_t seed, const ProgressFn& progress) {
  if (cases.empty()) throw TrainingError("train_localizer: empty training set");
  if (config.batch_size < 1) throw ConfigError("train_localizer: batch_size must be >= 1");
  // Coarse images and boxes; everything below works in coarse voxels.
  std::vector<data::Volume> images;
  std::vector<data::BoundingBox3D> boxes;
  std::vector<std::vector<Extents>> edges;
  std::size_t usable = 0;
  for (const auto& c : cases) {
    images.push_back(data::block_mean(c.image, config.downsample));
    boxes.push_back({data::to_coarse(c.box.low, config.downsample), data::to_coarse(c.box.high, config.downsample)});
    edges.push_back(canny3d(images.back(), config.canny).positions);
    if (!edges.back().empty()) ++usable;
  }
  if (usable == 0) throw TrainingError("train_localizer: no training volume has edge voxels");

  const float scale = static_cast<float>(config.target_scale);
  std::mt19937_64 rng(derive_seed(seed, 1));
  LocalizationNet<float> net(config.arch, derive_seed(seed, 0));
  TrainedLocalizer result{net, {}, {}, config.target_scale, config.downsample};

  auto epoch_samples = [&]() {
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      for (const auto& r : draw_references(edges[i], config.train_refs_per_volume, rng)) samples.push_back({i, r});
    }
    std::shuffle(samples.begin(), samples.end(), rng);
    return samples;
  };

  // Runs one epoch; `loss_of` returns the per-sample loss tensor or an
  // undefined tensor to skip the sample.
  auto run_epoch = [&](LocalizationNet<float>& model, ad::AdamState<float>& adam, auto&& loss_of,
                       int& skipped) {
    auto trainable = model.parameters().trainable();
    const auto samples = epoch_samples();
    double total = 0.0;
    std::size_t counted = 0;
    skipped = 0;
    for (std::size_t b = 0; b < samples.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(samples.size(), b + static_cast<std::size_t>(config.batch_size));
      model.parameters().zero_grad();
      // Gradients of the batch mean accumulate across per-sample graphs.
      const float weight = 1.0f / static_cast<float>(e - b);
      std::size_t used = 0;
      for (std::size_t s = b; s < e; ++s) {
        const auto& sample = samples[s];
        const Tensor<float> pred =
            model.forward(reference_patch(images[sample.case_index], sample.reference), Mode::train);
        Tensor<float> loss = loss_of(pred, boxes[sample.case_index], sample.reference);
        if (!loss.defined()) {
          ++skipped;
          continue;
        }
        const double value = loss.value()[0];
        if (!std::isfinite(value)) return std::numeric_limits<double>::quiet_NaN();
        total += value;
        ++counted;
        ++used;
        ad::scale(loss, weight).backward();
      }
      if (used == 0) continue;
      ad::adam_step<float>(trainable, adam);
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
  };

  // Round 1: L2 on displacements / target_scale.
  result.adam.learning_rate = config.round1_learning_rate;
  auto mse = [&](const Tensor<float>& pred, const data::BoundingBox3D& box, const Extents& ref) {
    const Displacement t = displacement_target(box, ref) / config.target_scale;
    ad::Array<float> tv = t.cast<float>().array();
    return ad::mse_loss(pred, Tensor<float>::from(pred.shape(), std::move(tv)));
  };
  for (int epoch = 0; epoch < config.round1_epochs; ++epoch) {
    int skipped = 0;
    const double loss = run_epoch(result.net, result.adam, mse, skipped);
    check_finite(loss, "round 1", epoch);
    result.log.round1_loss.push_back(loss);
    if (progress) progress("round=1 epoch=" + std::to_string(epoch + 1) + " loss=" + format_double(loss));
  }
  const auto round1 = ad::Checkpoint<float>::capture(result.net.parameters(), result.adam);
  result.log.round1_final_hashes = ad::tensor_hashes(result.net.parameters());

  // Round 2 starts from the round-1 checkpoint with a fresh optimizer.
  LocalizationNet<float> net2(config.arch, derive_seed(seed, 2));
  round1.restore_into(net2.parameters());
  result.log.round2_initial_hashes = ad::tensor_hashes(net2.parameters());
  if (result.log.round2_initial_hashes != result.log.round1_final_hashes) {
    throw TrainingError("train_localizer: round-2 initialization differs from the round-1 result");
  }
  result.net = net2;
  result.adam = {};
  result.adam.learning_rate = config.round2_learning_rate;
  auto iou = [&](const Tensor<float>& pred, const data::BoundingBox3D& box, const Extents& ref) {
    const Eigen::Matrix<float, 6, 1> target = displacement_target(box, ref).cast<float>();
    const Eigen::Vector3f reference = as_vec(ref).cast<float>();
    auto r = ad::iou_loss_3d(ad::scale(pred, scale), target, reference);
    return r.disjoint ? Tensor<float>{} : r.loss;
  };
  for (int epoch = 0; epoch < config.round2_epochs; ++epoch) {
    int skipped = 0;
    const double loss = run_epoch(result.net, result.adam, iou, skipped);
    check_finite(loss, "round 2", epoch);
    result.log.round2_loss.push_back(loss);
    result.log.round2_skipped.push_back(skipped);
    if (progress) {
      progress("round=2 epoch=" + std::to_string(epoch + 1) + " loss=" + format_double(loss) +
               " skipped=" + std::to_string(skipped));
    }
  }
  return result;
}

RoiPrediction predict_roi(const data::Volume& volume, const LocalizationNet<float>& net,
                          const LocalizerConfig& config, std::uint64_t seed) {
  const data::Volume coarse = data::block_mean(volume, config.downsample);
  const ReferenceVoxelSet edges = canny3d(coarse, config.canny);
  if (edges.positions.empty()) {
    throw LocalizationError(edges.constant_volume ? "localization failed: constant volume has no edges"
                                                  : "localization failed: no edge voxels above threshold");
  }
  std::mt19937_64 rng(derive_seed(seed, 3));
  RoiPrediction out;
  out.references = draw_references(edges.positions, config.infer_refs, rng);
  const std::size_t n = out.references.size();
  out.votes.low.resize(n);
  out.votes.high.resize(n);

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Tensor<float> pred = net.forward(reference_patch(coarse, out.references[i]), Mode::eval);
      Displacement d = pred.value().cast<double>() * config.target_scale;
      const auto box = box_from_displacement(d, out.references[i]);
      out.votes.low[i] = box.low;
      out.votes.high[i] = box.high;
    }
  };
  const std::size_t threads = static_cast<std::size_t>(std::max(1, config.threads));
  if (threads == 1 || n < 2) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(n, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }
  const data::BoundingBox3D box = kde_aggregate(out.votes, config.kde);
  out.box = {data::to_fine(box.low, config.downsample), data::to_fine(box.high, config.downsample)};
  return out;
}

}  // namespace lumbarseg::loc
