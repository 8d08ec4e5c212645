#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lumbarseg/dataset/phantom.hpp"
#include "lumbarseg/kv_text.hpp"
#include "lumbarseg/metrics/metrics.hpp"

namespace lumbarseg::metrics {

inline constexpr int kVertebraCount = data::kMaxLabel;

// One row of a per-case evaluation. A row is absent when the label does not
// occur in the ground truth; hd/assd are also absent when the prediction
// misses the label entirely (dc = jc = 0 then).
struct MetricValues {
  bool present = false;
  double dc = 0.0;
  double jc = 0.0;
  std::optional<double> hd_mm;
  std::optional<double> assd_mm;
};

struct CaseMetrics {
  std::array<MetricValues, kVertebraCount> labels;  // L1..L5
  MetricValues lumbar;                              // unweighted mean over present rows
  std::optional<double> roi_iou;                    // set by the pipeline when a ROI was predicted
};

// Throws EvaluationError unless the two volumes share extents and spacing.
CaseMetrics evaluate(const LabelVolume& predicted, const LabelVolume& truth);

struct Statistic {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single value
  int count = 0;    // 0 means absent everywhere
};

Statistic summarize(std::span<const double> values);

struct MetricRow {
  Statistic dc, jc, hd_mm, assd_mm;
};

// Table layout: rows L1..L5 and Lumbar, columns DC (%), JC (%), HD (mm) and
// ASSD (mm), each mean +- sd over the evaluated cases.
struct MetricReport {
  std::array<MetricRow, kVertebraCount> labels;
  MetricRow lumbar;
  Statistic roi_iou;
  int case_count = 0;
};

MetricReport aggregate(std::span<const CaseMetrics> cases);

std::string format_table(const MetricReport& report);
KvDocument to_document(const MetricReport& report);

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Cases are shuffled with `seed` and cut into consecutive held-out chunks; a
// fresh permutation starts when the remaining cases cannot fill a chunk.
// Throws ConfigError when held_out is 0 or leaves no training case.
std::vector<FoldSplit> make_folds(std::size_t case_count, int fold_count, int held_out, std::uint64_t seed);

struct CasePrediction {
  LabelVolume labels;
  std::optional<data::BoundingBox3D> roi;
};

// Trains on `train` and predicts every case of `test`, in order.
using FoldRunner = std::function<std::vector<CasePrediction>(
    std::span<const data::Phantom> train, std::span<const data::Phantom> test, int fold, std::uint64_t seed)>;

struct FoldResult {
  FoldSplit split;
  std::vector<CaseMetrics> cases;
  MetricReport report;
};

struct CrossValidationResult {
  std::vector<FoldResult> folds;
  MetricReport aggregate;  // over every held-out case of every fold
};

CrossValidationResult cross_validate(std::span<const data::Phantom> cases, int fold_count, int held_out,
                                     std::uint64_t seed, const FoldRunner& runner);

}  // namespace lumbarseg::metrics
