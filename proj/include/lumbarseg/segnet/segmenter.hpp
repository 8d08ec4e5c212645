#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lumbarseg/autodiff/checkpoint.hpp"
#include "lumbarseg/dataset/augment.hpp"
#include "lumbarseg/dataset/phantom.hpp"
#include "lumbarseg/locnet/localizer.hpp"
#include "lumbarseg/segnet/network.hpp"

namespace lumbarseg::seg {

using data::Extents;

struct SegmenterConfig {
  SegNetArchitecture arch;            // class_count is set per training step
  Extents patch{48, 32, 32};          // depth, height, width
  double stride_fraction = 0.5;       // sliding-window stride / patch extent
  Index crop_margin = 4;              // voxels added around the ROI
  double roi_jitter = 0.05;           // training-time ROI augmentation
  bool augment = true;
  data::GrayAugmentOptions gray;
  data::ElasticOptions elastic;
  std::vector<double> class_weights;  // empty: inverse-frequency weights
  int patches_per_volume = 2;         // per epoch
  int batch_size = 2;
  int binary_epochs = 10;
  int multiclass_epochs = 10;
  double learning_rate = 1e-3;
  double min_component_fraction = 0.01;  // of the largest foreground component
  int threads = 1;
};

struct ClassWeights {
  std::vector<double> weights;
  std::vector<int> absent;  // classes with no voxels (given weight 1)
};

// w_c = 1 / (C * f_c), i.e. normalized so that sum_c f_c w_c = 1, clipped to
// [0.1, 10]; background (class 0) is capped at the smallest vertebra weight.
ClassWeights compute_class_weights(std::span<const data::LabelVolume> labels, int class_count);

// Zero mean, unit variance over the whole grid.
data::Volume standardize(const data::Volume& volume);

struct SegTrainingLog {
  std::vector<double> loss;               // mean weighted cross-entropy per epoch
  std::vector<double> class_weights;
  std::map<std::string, std::uint64_t> source_hashes;  // binary checkpoint, non-final tensors
  std::map<std::string, std::uint64_t> initial_hashes; // multi-class net before its first update
};

struct TrainedSegmenter {
  SegmentationNet<float> net;
  ad::AdamState<float> adam;
  SegTrainingLog log;
  ad::Checkpoint<float> checkpoint() const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Binary step: all vertebra labels collapsed to 1. Throws TrainingError on an
// empty or all-background training set.
TrainedSegmenter train_binary(std::span<const data::Phantom> cases, const SegmenterConfig& config,
                              std::uint64_t seed, const ProgressFn& progress = {});

// Multi-class step: every tensor except the final 1x1x1 conv is copied from
// the binary checkpoint; the final layer is freshly initialized for 6
// classes. Throws CheckpointError when the architectures differ elsewhere.
TrainedSegmenter train_multiclass(std::span<const data::Phantom> cases,
                                  const ad::Checkpoint<float>& binary, const SegmenterConfig& config,
                                  std::uint64_t seed, const ProgressFn& progress = {});

// Multi-class network initialized from a binary checkpoint, before training.
SegmentationNet<float> multiclass_from_binary(const ad::Checkpoint<float>& binary,
                                              const SegmenterConfig& config, std::uint64_t seed);

SegmentationNet<float> segmenter_from_checkpoint(const ad::Checkpoint<float>& checkpoint);

struct ProbabilityMap {
  Extents extents{0, 0, 0};
  int class_count = 0;
  std::vector<float> values;  // class-major: values[c * voxels + i]

  float at(int c, Index i) const {
    return values[static_cast<std::size_t>(c * data::voxel_count(extents) + i)];
  }
};

// Tile starts along one axis: stride = max(1, floor(patch * fraction)); the
// last tile is aligned to the end. A single start (possibly negative, i.e.
// symmetric zero padding) when the extent does not exceed the patch.
std::vector<Index> tile_starts(Index extent, Index patch, double stride_fraction);

// Patch callback: standardized image patch (1, pd, ph, pw) -> class
// probabilities (C, pd, ph, pw).
using PatchPredictor = std::function<ad::Array<float>(const Tensor<float>&)>;

// Mean of the per-tile probabilities over all covering tiles, accumulated in
// tile enumeration order.
ProbabilityMap sliding_window_average(const data::Volume& volume, const Extents& patch,
                                      double stride_fraction, int class_count,
                                      const PatchPredictor& predict, int threads = 1);

ProbabilityMap sliding_window_infer(const data::Volume& volume, const SegmentationNet<float>& net,
                                    const SegmenterConfig& config);

// Per-voxel argmax; ties go to the lowest class index.
data::LabelVolume argmax_labels(const ProbabilityMap& probs, const data::Volume& geometry);

// Removes 26-connected components smaller than the threshold (default:
// fraction of the largest foreground component) and fills 6-connected
// background cavities enclosed by a single label, repeated until nothing
// changes.
data::LabelVolume postprocess(const data::LabelVolume& labels,
                              std::optional<Index> min_component_voxels = std::nullopt,
                              double min_component_fraction = 0.01);

struct Segmentation {
  data::LabelVolume labels;  // full input geometry
  data::BoundingBox3D roi;
};

Segmentation segment_volume(const data::Volume& volume, const loc::LocalizationNet<float>& localizer,
                            const loc::LocalizerConfig& loc_config, const SegmentationNet<float>& segmenter,
                            const SegmenterConfig& seg_config, std::uint64_t seed);

}  // namespace lumbarseg::seg
