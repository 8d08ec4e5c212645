#pragma once

// The full cascade (localizer then segmenter) as one configurable unit, shared
// by the command-line tool and the acceptance tests.

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "lumbarseg/dataset/phantom.hpp"
#include "lumbarseg/kv_text.hpp"
#include "lumbarseg/locnet/localizer.hpp"
#include "lumbarseg/metrics/evaluation.hpp"
#include "lumbarseg/segnet/segmenter.hpp"

namespace lumbarseg {

struct PipelineConfig {
  std::string preset = "desk";
  loc::LocalizerConfig localizer;
  seg::SegmenterConfig segmenter;
  int folds = 5;
  int held_out = 3;
  int threads = 1;  // copied into both stage configs by set_threads
};

// "desk" (CPU-trainable in minutes) or "paper" (the published patch sizes and
// widths; recorded, not meant to run on a laptop). ConfigError otherwise.
PipelineConfig make_preset(const std::string& name);

// Keys are "<section>.<name>" with sections localizer, segmenter, crossval.
// Unknown keys and malformed values throw ConfigError naming the key and the
// byte offset of its line. A "preset" key, if present, must match.
void apply_config(PipelineConfig& config, const KvDocument& document);
KvDocument to_document(const PipelineConfig& config);

void set_threads(PipelineConfig& config, int threads);

using ProgressFn = std::function<void(const std::string&)>;

struct TrainedPipeline {
  loc::TrainedLocalizer localizer;
  seg::TrainedSegmenter binary;
  seg::TrainedSegmenter multiclass;
};

// Seeds: localizer derive_seed(seed, 1), segmenter derive_seed(seed, 2).
TrainedPipeline train_pipeline(std::span<const data::Phantom> cases, const PipelineConfig& config,
                               std::uint64_t seed, const ProgressFn& progress = {});

// Cross-validation over `cases` with config.folds folds of config.held_out
// test cases. A held-out case whose localization fails is scored as an empty
// prediction with ROI IoU 0.
metrics::CrossValidationResult run_crossval(std::span<const data::Phantom> cases, const PipelineConfig& config,
                                            std::uint64_t seed, const ProgressFn& progress = {});

}  // namespace lumbarseg
