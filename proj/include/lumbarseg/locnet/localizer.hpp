#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lumbarseg/autodiff/checkpoint.hpp"
#include "lumbarseg/dataset/phantom.hpp"
#include "lumbarseg/locnet/canny.hpp"
#include "lumbarseg/locnet/kde.hpp"
#include "lumbarseg/locnet/network.hpp"

namespace lumbarseg::loc {

struct LocalizerConfig {
  LocNetArchitecture arch;
  CannyOptions canny;
  KdeOptions kde;
  // Localization runs on a block-mean downsampled copy so that one 32^3
  // patch sees most of the spine; boxes are mapped back to full resolution.
  Extents downsample{2, 2, 2};
  double target_scale = 64.0;  // displacements are regressed divided by this
  int train_refs_per_volume = 200;
  int infer_refs = 2000;
  int batch_size = 8;
  int round1_epochs = 10;
  int round2_epochs = 5;
  double round1_learning_rate = 1e-3;
  double round2_learning_rate = 1e-4;
  int threads = 1;
};

using Displacement = Eigen::Matrix<double, 6, 1>;  // (d_low, d_high)

// Standardized (zero mean, unit variance) 32^3 patch whose voxel (16,16,16)
// is the reference; voxels outside the volume are zero before standardizing.
Tensor<float> reference_patch(const data::Volume& volume, const Extents& reference);

// Corner displacements from `reference`, in voxels.
Displacement displacement_target(const data::BoundingBox3D& box, const Extents& reference);
data::BoundingBox3D box_from_displacement(const Displacement& d, const Extents& reference);

struct LocalizerTrainingLog {
  std::vector<double> round1_loss;  // mean loss per epoch
  std::vector<double> round2_loss;
  std::vector<int> round2_skipped;  // disjoint-box samples per epoch
  // Per-tensor hashes of the round-1 result and of the round-2 network
  // before its first update.
  std::map<std::string, std::uint64_t> round1_final_hashes;
  std::map<std::string, std::uint64_t> round2_initial_hashes;
};

struct TrainedLocalizer {
  LocalizationNet<float> net;
  ad::AdamState<float> adam;
  LocalizerTrainingLog log;
  double target_scale = 64.0;
  Extents downsample{1, 1, 1};
  ad::Checkpoint<float> checkpoint() const;
};

using ProgressFn = std::function<void(const std::string&)>;

// Round 1: mean squared error on scaled displacements. Round 2: restarts from
// the round-1 checkpoint with a fresh optimizer and minimizes the IoU loss,
// skipping samples whose predicted box misses the target. Throws
// TrainingError when no training volume yields reference voxels and
// NumericError when a loss becomes non-finite.
TrainedLocalizer train_localizer(std::span<const data::Phantom> cases, const LocalizerConfig& config,
                                 std::uint64_t seed, const ProgressFn& progress = {});

LocalizationNet<float> localizer_from_checkpoint(const ad::Checkpoint<float>& checkpoint);
double target_scale_from_checkpoint(const ad::Checkpoint<float>& checkpoint);

// `base` with the training-time settings recorded in the checkpoint
// (architecture, target_scale, downsample) filled in.
LocalizerConfig localizer_config_from_checkpoint(const ad::Checkpoint<float>& checkpoint, LocalizerConfig base);

struct RoiPrediction {
  data::BoundingBox3D box;
  CornerVotes votes;
  std::vector<Extents> references;
};

// Downsample, Canny, subsample up to config.infer_refs references, one
// forward pass per reference, KDE over the corner votes (coarse voxels), box
// mapped back to the input grid. `votes` and `references` stay coarse. Throws LocalizationError when the
// volume has no edge voxels.
RoiPrediction predict_roi(const data::Volume& volume, const LocalizationNet<float>& net,
                          const LocalizerConfig& config, std::uint64_t seed);

}  // namespace lumbarseg::loc
