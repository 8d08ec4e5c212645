#include "lumbarseg/segnet/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <random>
#include <thread>

#include "lumbarseg/autodiff/losses.hpp"
#include "lumbarseg/dataset/patches.hpp"
#include "lumbarseg/kv_text.hpp"
#include "lumbarseg/seeding.hpp"

namespace lumbarseg::seg {

namespace {

struct Sample {
  data::Volume image;
  data::LabelVolume labels;
};

std::map<std::string, std::string> architecture_metadata(const SegNetArchitecture& arch) {
  return {{"kind", "segmenter"},
          {"arch.depth", std::to_string(arch.depth)},
          {"arch.base_width", std::to_string(arch.base_width)},
          {"arch.class_count", std::to_string(arch.class_count)}};
}

// ROI crop of one case, augmented when enabled. Labels collapse to {0, 1}
// for the binary step.
Sample prepare_case(const data::Phantom& c, const SegmenterConfig& config, bool binary, std::uint64_t seed) {
  data::BoundingBox3D box = c.box;
  if (config.augment) box = data::roi_augment(box, config.roi_jitter, derive_seed(seed, 0));
  const auto region = data::crop_region(c.image.extents, box, config.crop_margin);
  Sample s{standardize(data::crop(c.image, region)), data::crop(c.labels, region)};
  if (binary) s.labels = data::binarize(s.labels);
  if (config.augment) {
    s.image = data::gray_value_augment(s.image, config.gray, derive_seed(seed, 1));
    auto [img, lab] = data::elastic_deform(s.image, s.labels, config.elastic, derive_seed(seed, 2));
    s.image = std::move(img);
    s.labels = std::move(lab);
  }
  return s;
}

Tensor<float> image_tensor(const data::Volume& v) {
  ad::Array<float> values = Eigen::Map<const ad::Array<float>>(v.values.data(), v.size());
  return Tensor<float>::from({1, v.extents[0], v.extents[1], v.extents[2]}, std::move(values));
}

void train_epochs(SegmentationNet<float>& net, ad::AdamState<float>& adam, std::span<const data::Phantom> cases,
                  const SegmenterConfig& config, bool binary, int epochs, const std::vector<double>& weights,
                  std::uint64_t seed, const char* step, std::vector<double>& log, const ProgressFn& progress) {
  auto trainable = net.parameters().trainable();
  std::mt19937_64 rng(derive_seed(seed, 7));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<data::PatchPair> samples;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const std::uint64_t case_seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch) * cases.size() + i);
      const Sample s = prepare_case(cases[i], config, binary, case_seed);
      auto patches = data::sample_training_patches(s.image, s.labels, config.patch, config.patches_per_volume,
                                                   derive_seed(case_seed, 3));
      for (auto& p : patches) samples.push_back(std::move(p));
    }
    std::shuffle(samples.begin(), samples.end(), rng);

    double total = 0.0;
    const std::size_t batch = static_cast<std::size_t>(std::max(1, config.batch_size));
    for (std::size_t b = 0; b < samples.size(); b += batch) {
      const std::size_t e = std::min(samples.size(), b + batch);
      net.parameters().zero_grad();
      const float weight = 1.0f / static_cast<float>(e - b);
      for (std::size_t k = b; k < e; ++k) {
        const Tensor<float> logits = net.forward(image_tensor(samples[k].image), Mode::train);
        const Tensor<float> loss = ad::weighted_cross_entropy(logits, samples[k].labels.values, weights);
        const double value = loss.value()[0];
        if (!std::isfinite(value)) {
          throw NumericError(std::string("segmenter ") + step + " diverged at epoch " + std::to_string(epoch + 1) +
                             " (non-finite loss)");
        }
        total += value;
        ad::scale(loss, weight).backward();
      }
      ad::adam_step<float>(trainable, adam);
    }
    const double mean = samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
    log.push_back(mean);
    if (progress) {
      progress(std::string("step=") + step + " epoch=" + std::to_string(epoch + 1) + " loss=" + format_double(mean));
    }
  }
}

std::vector<double> resolve_weights(std::span<const data::Phantom> cases, const SegmenterConfig& config,
                                    bool binary, int class_count) {
  if (!config.class_weights.empty()) {
    if (static_cast<int>(config.class_weights.size()) != class_count) {
      throw ConfigError("class_weights lists " + std::to_string(config.class_weights.size()) +
                        " values, the network has " + std::to_string(class_count) + " classes");
    }
    for (double w : config.class_weights) {
      if (!(w > 0.0)) throw ConfigError("class weights must be positive");
    }
    return config.class_weights;
  }
  std::vector<data::LabelVolume> crops;
  for (const auto& c : cases) {
    auto l = data::crop(c.labels, c.box, config.crop_margin);
    crops.push_back(binary ? data::binarize(l) : std::move(l));
  }
  const ClassWeights w = compute_class_weights(crops, class_count);
  for (int c : w.absent) {
    std::cerr << "warning: class " << c << " absent from the training labels; using weight 1\n";
  }
  return w.weights;
}

void require_foreground(std::span<const data::Phantom> cases) {
  if (cases.empty()) throw TrainingError("segmenter: empty training set");
  for (const auto& c : cases) {
    if (std::any_of(c.labels.values.begin(), c.labels.values.end(), [](std::uint8_t v) { return v != 0; })) return;
  }
  throw TrainingError("segmenter: every training label volume is background only");
}

}  // namespace

data::Volume standardize(const data::Volume& volume) {
  double mean = 0.0;
  for (float v : volume.values) mean += v;
  mean /= static_cast<double>(volume.values.size());
  double var = 0.0;
  for (float v : volume.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(volume.values.size());
  const double inv = 1.0 / std::max(std::sqrt(var), 1e-6);
  data::Volume out = volume;
  for (auto& v : out.values) v = static_cast<float>((v - mean) * inv);
  return out;
}

ClassWeights compute_class_weights(std::span<const data::LabelVolume> labels, int class_count) {
  if (class_count < 2) throw ConfigError("class weights need at least 2 classes");
  std::vector<double> counts(static_cast<std::size_t>(class_count), 0.0);
  double total = 0.0;
  for (const auto& l : labels) {
    for (std::uint8_t v : l.values) {
      if (v >= class_count) {
        throw DataError("label " + std::to_string(v) + " exceeds class count " + std::to_string(class_count));
      }
      counts[v] += 1.0;
    }
    total += static_cast<double>(l.values.size());
  }
  ClassWeights out;
  out.weights.assign(static_cast<std::size_t>(class_count), 1.0);
  for (int c = 0; c < class_count; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0.0) {
      out.absent.push_back(c);
      continue;
    }
    const double f = counts[static_cast<std::size_t>(c)] / total;
    out.weights[static_cast<std::size_t>(c)] = std::clamp(1.0 / (class_count * f), 0.1, 10.0);
  }
  double smallest_fg = std::numeric_limits<double>::infinity();
  for (int c = 1; c < class_count; ++c) smallest_fg = std::min(smallest_fg, out.weights[static_cast<std::size_t>(c)]);
  out.weights[0] = std::min(out.weights[0], smallest_fg);
  return out;
}

ad::Checkpoint<float> TrainedSegmenter::checkpoint() const {
  auto meta = architecture_metadata(net.architecture());
  meta["class_weights"] = format_doubles(log.class_weights.data(), log.class_weights.size());
  if (!log.source_hashes.empty()) {
    meta["binary_handoff_verified"] = "1";
  }
  return ad::Checkpoint<float>::capture(net.parameters(), adam, std::move(meta));
}

SegmentationNet<float> segmenter_from_checkpoint(const ad::Checkpoint<float>& checkpoint) {
  const auto it = checkpoint.metadata.find("kind");
  if (it == checkpoint.metadata.end() || it->second != "segmenter") {
    throw CheckpointError("checkpoint does not hold a segmenter");
  }
  KvDocument doc;
  for (const auto& [k, v] : checkpoint.metadata) doc.set(k, v);
  SegNetArchitecture arch;
  arch.depth = static_cast<int>(doc.get_int("arch.depth"));
  arch.base_width = doc.get_int("arch.base_width");
  arch.class_count = doc.get_int("arch.class_count");
  SegmentationNet<float> net(arch, 0);
  checkpoint.restore_into(net.parameters());
  return net;
}

TrainedSegmenter train_binary(std::span<const data::Phantom> cases, const SegmenterConfig& config,
                              std::uint64_t seed, const ProgressFn& progress) {
  require_foreground(cases);
  SegNetArchitecture arch = config.arch;
  arch.class_count = 2;
  check_patch_extents({config.patch[0], config.patch[1], config.patch[2]}, arch.depth);
  TrainedSegmenter result{SegmentationNet<float>(arch, derive_seed(seed, 10)), {}, {}};
  result.adam.learning_rate = config.learning_rate;
  result.log.class_weights = resolve_weights(cases, config, true, 2);
  train_epochs(result.net, result.adam, cases, config, true, config.binary_epochs, result.log.class_weights,
               derive_seed(seed, 11), "binary", result.log.loss, progress);
  return result;
}

SegmentationNet<float> multiclass_from_binary(const ad::Checkpoint<float>& binary, const SegmenterConfig& config,
                                              std::uint64_t seed) {
  const auto source = segmenter_from_checkpoint(binary);
  SegNetArchitecture arch = config.arch;
  arch.class_count = data::kMaxLabel + 1;
  if (source.architecture().depth != arch.depth || source.architecture().base_width != arch.base_width) {
    throw CheckpointError("binary checkpoint has depth " + std::to_string(source.architecture().depth) +
                          ", base width " + std::to_string(source.architecture().base_width) +
                          "; multi-class configuration expects depth " + std::to_string(arch.depth) +
                          ", base width " + std::to_string(arch.base_width));
  }
  SegmentationNet<float> net(arch, derive_seed(seed, 20));
  binary.restore_into(net.parameters(), SegmentationNet<float>::final_layer_tensors());
  return net;
}

TrainedSegmenter train_multiclass(std::span<const data::Phantom> cases, const ad::Checkpoint<float>& binary,
                                  const SegmenterConfig& config, std::uint64_t seed, const ProgressFn& progress) {
  require_foreground(cases);
  TrainedSegmenter result{multiclass_from_binary(binary, config, seed), {}, {}};
  check_patch_extents({config.patch[0], config.patch[1], config.patch[2]}, config.arch.depth);
  const auto final_layer = SegmentationNet<float>::final_layer_tensors();
  for (const auto& [name, hash] : ad::tensor_hashes(result.net.parameters())) {
    if (std::find(final_layer.begin(), final_layer.end(), name) != final_layer.end()) continue;
    result.log.initial_hashes[name] = hash;
    result.log.source_hashes[name] = binary.hash_of(name);
  }
  if (result.log.initial_hashes != result.log.source_hashes) {
    throw TrainingError("multi-class initialization differs from the binary checkpoint");
  }
  if (progress) {
    progress("handoff binary->multiclass tensors=" + std::to_string(result.log.initial_hashes.size()) +
             " hashes_equal=1");
  }
  result.adam.learning_rate = config.learning_rate;
  result.log.class_weights = resolve_weights(cases, config, false, data::kMaxLabel + 1);
  train_epochs(result.net, result.adam, cases, config, false, config.multiclass_epochs, result.log.class_weights,
               derive_seed(seed, 21), "multiclass", result.log.loss, progress);
  return result;
}

std::vector<Index> tile_starts(Index extent, Index patch, double stride_fraction) {
  if (extent <= patch) return {-((patch - extent) / 2)};
  const Index stride = std::max<Index>(1, static_cast<Index>(std::floor(static_cast<double>(patch) * stride_fraction)));
  std::vector<Index> starts;
  for (Index s = 0; s + patch < extent; s += stride) starts.push_back(s);
  starts.push_back(extent - patch);
  return starts;
}

ProbabilityMap sliding_window_average(const data::Volume& volume, const Extents& patch, double stride_fraction,
                                      int class_count, const PatchPredictor& predict, int threads) {
  std::vector<Extents> tiles;
  const auto sz = tile_starts(volume.extents[0], patch[0], stride_fraction);
  const auto sy = tile_starts(volume.extents[1], patch[1], stride_fraction);
  const auto sx = tile_starts(volume.extents[2], patch[2], stride_fraction);
  for (Index z : sz)
    for (Index y : sy)
      for (Index x : sx) tiles.push_back({z, y, x});

  std::vector<ad::Array<float>> results(tiles.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t) {
      const auto p = data::extract_patch(volume, tiles[t], patch, {0, 0, 0});
      results[t] = predict(image_tensor(p));
    }
  };
  const std::size_t n_threads = static_cast<std::size_t>(std::max(1, threads));
  if (n_threads == 1 || tiles.size() < 2) {
    work(0, tiles.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (tiles.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(tiles.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  const Extents& e = volume.extents;
  const Index voxels = data::voxel_count(e);
  const Index pvox = data::voxel_count(patch);
  std::vector<double> sum(static_cast<std::size_t>(class_count * voxels), 0.0);
  std::vector<int> cover(static_cast<std::size_t>(voxels), 0);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto& r = results[t];
    if (r.size() != class_count * pvox) throw ShapeError("sliding window: predictor returned wrong size");
    for (Index z = 0; z < patch[0]; ++z) {
      const Index vz = tiles[t][0] + z;
      if (vz < 0 || vz >= e[0]) continue;
      for (Index y = 0; y < patch[1]; ++y) {
        const Index vy = tiles[t][1] + y;
        if (vy < 0 || vy >= e[1]) continue;
        for (Index x = 0; x < patch[2]; ++x) {
          const Index vx = tiles[t][2] + x;
          if (vx < 0 || vx >= e[2]) continue;
          const Index vi = volume.index(vz, vy, vx);
          const Index pi = (z * patch[1] + y) * patch[2] + x;
          ++cover[static_cast<std::size_t>(vi)];
          for (int c = 0; c < class_count; ++c) sum[static_cast<std::size_t>(c * voxels + vi)] += r[c * pvox + pi];
        }
      }
    }
  }
  ProbabilityMap out;
  out.extents = e;
  out.class_count = class_count;
  out.values.resize(sum.size());
  for (int c = 0; c < class_count; ++c) {
    for (Index i = 0; i < voxels; ++i) {
      const std::size_t k = static_cast<std::size_t>(c * voxels + i);
      out.values[k] = static_cast<float>(sum[k] / cover[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

ProbabilityMap sliding_window_infer(const data::Volume& volume, const SegmentationNet<float>& net,
                                    const SegmenterConfig& config) {
  auto predict = [&net](const Tensor<float>& patch) {
    return ad::Array<float>(ad::softmax_channels(net.forward(patch, Mode::eval)).value());
  };
  return sliding_window_average(volume, config.patch, config.stride_fraction,
                                static_cast<int>(net.architecture().class_count), predict, config.threads);
}

data::LabelVolume argmax_labels(const ProbabilityMap& probs, const data::Volume& geometry) {
  if (probs.extents != geometry.extents) throw GeometryError("argmax: probability map geometry differs");
  data::LabelVolume out = geometry.like<std::uint8_t>();
  const Index voxels = data::voxel_count(probs.extents);
  for (Index i = 0; i < voxels; ++i) {
    int best = 0;
    float best_p = probs.at(0, i);
    for (int c = 1; c < probs.class_count; ++c) {
      if (probs.at(c, i) > best_p) {
        best_p = probs.at(c, i);
        best = c;
      }
    }
    out.values[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Segmentation segment_volume(const data::Volume& volume, const loc::LocalizationNet<float>& localizer,
                            const loc::LocalizerConfig& loc_config, const SegmentationNet<float>& segmenter,
                            const SegmenterConfig& seg_config, std::uint64_t seed) {
  Segmentation out;
  try {
    out.roi = loc::predict_roi(volume, localizer, loc_config, seed).box;
  } catch (const LocalizationError& e) {
    throw LocalizationError(std::string("segment_volume: ") + e.what());
  }
  out.labels = volume.like<std::uint8_t>();
  data::CropRegion region;
  try {
    region = data::crop_region(volume.extents, out.roi, seg_config.crop_margin);
  } catch (const GeometryError& e) {
    throw LocalizationError(std::string("segment_volume: predicted ROI outside the volume: ") + e.what());
  }
  const data::Volume roi = standardize(data::crop(volume, region));
  const ProbabilityMap probs = sliding_window_infer(roi, segmenter, seg_config);
  const data::LabelVolume labels = postprocess(argmax_labels(probs, roi), std::nullopt,
                                               seg_config.min_component_fraction);
  data::paste(out.labels, labels, region);
  return out;
}

}  // namespace lumbarseg::seg
