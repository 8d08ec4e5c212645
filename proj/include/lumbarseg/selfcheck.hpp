#pragma once

// Verification suites shared by the `selfcheck` subcommand and the acceptance
// tests. Every suite is deterministic for a given seed.

#include <cstdint>
#include <string>
#include <vector>

#include "lumbarseg/dataset/volume.hpp"
#include "lumbarseg/metrics/metrics.hpp"

namespace lumbarseg::check {

struct GradientFamilyResult {
  std::string name;
  int trials = 0;              // compared (non-excluded) random inputs
  int passed = 0;
  int excluded = 0;            // draws that sat exactly on a kink and were redrawn
  double max_relative_error = 0.0;
};

// Central finite differences against reverse mode, in double precision, for
// conv3d, transposed_conv3d, batch_norm3d (train), relu composites,
// softmax + weighted cross-entropy, mse_loss and iou_loss_3d.
std::vector<GradientFamilyResult> gradient_suite(int trials_per_family, std::uint64_t seed,
                                                 double tolerance = 1e-4);

// Independent O(n^2) oracles for the metric module.
struct BruteForceMetrics {
  double dc = 0.0, jc = 0.0, hd = 0.0, assd = 0.0;
  bool defined = false;  // both surfaces nonempty
};
BruteForceMetrics brute_force_metrics(const data::LabelVolume& a, const data::LabelVolume& b,
                                      std::uint8_t label);

struct MetricOracleResult {
  int pairs = 0;
  int overlap_mismatches = 0;   // DC/JC not bit-equal to the oracle
  double max_distance_error = 0.0;
  int distance_pairs = 0;       // pairs where HD/ASSD were compared
};

// Random label-volume pairs with extents <= 10^3 and anisotropic spacing.
MetricOracleResult metric_oracle_suite(int pairs, std::uint64_t seed);

struct KdeRecoveryResult {
  int trials = 0;
  int recovered = 0;
  double worst_error = 0.0;  // max over trials and axes of |estimate - truth|
};

// Each trial: a random box, `votes` Gaussian votes per corner with the given
// sigma; recovered when both corners are within 1 voxel on every axis.
KdeRecoveryResult kde_recovery_suite(int trials, int votes, double sigma, std::uint64_t first_seed);

}  // namespace lumbarseg::check
