#include "lumbarseg/pipeline.hpp"

#include <vector>

#include "lumbarseg/errors.hpp"
#include "lumbarseg/seeding.hpp"

namespace lumbarseg {
namespace {

using data::Index;

// One config key bound to a field: print and parse are exact inverses.
struct Field {
  std::string key;
  std::function<std::string(const PipelineConfig&)> print;
  std::function<void(PipelineConfig&, const KvDocument&, const std::string&)> parse;
};

[[noreturn]] void bad_value(const KvDocument& d, const std::string& key, const std::string& why) {
  throw ConfigError("config: key '" + key + "' at byte offset " + std::to_string(d.offset_of(key)) + ": " + why);
}

std::vector<double> doubles_of(const KvDocument& d, const std::string& key, std::size_t count) {
  std::vector<double> v;
  try {
    v = d.get_doubles(key);
  } catch (const Error& e) {
    bad_value(d, key, e.what());
  }
  if (count != 0 && v.size() != count) bad_value(d, key, "expected " + std::to_string(count) + " numbers");
  return v;
}

std::vector<long long> ints_of(const KvDocument& d, const std::string& key, std::size_t count, long long min) {
  std::vector<long long> v;
  try {
    v = d.get_ints(key);
  } catch (const Error& e) {
    bad_value(d, key, e.what());
  }
  if (v.size() != count) bad_value(d, key, "expected " + std::to_string(count) + " integers");
  for (long long x : v) {
    if (x < min) bad_value(d, key, "values must be >= " + std::to_string(min));
  }
  return v;
}

template <typename T>
Field int_field(const std::string& key, T& (*ref)(PipelineConfig&), long long min) {
  return {key, [ref](const PipelineConfig& c) { return std::to_string(ref(const_cast<PipelineConfig&>(c))); },
          [ref, min](PipelineConfig& c, const KvDocument& d, const std::string& k) {
            ref(c) = static_cast<T>(ints_of(d, k, 1, min)[0]);
          }};
}

Field double_field(const std::string& key, double& (*ref)(PipelineConfig&), double min) {
  return {key, [ref](const PipelineConfig& c) { return format_double(ref(const_cast<PipelineConfig&>(c))); },
          [ref, min](PipelineConfig& c, const KvDocument& d, const std::string& k) {
            const double v = doubles_of(d, k, 1)[0];
            if (!(v >= min)) bad_value(d, k, "value must be >= " + format_double(min));
            ref(c) = v;
          }};
}

template <std::size_t N, typename T>
Field int_array_field(const std::string& key, std::array<T, N>& (*ref)(PipelineConfig&), long long min) {
  return {key,
          [ref](const PipelineConfig& c) {
            const auto& a = ref(const_cast<PipelineConfig&>(c));
            std::string s;
            for (std::size_t i = 0; i < N; ++i) s += (i ? " " : "") + std::to_string(a[i]);
            return s;
          },
          [ref, min](PipelineConfig& c, const KvDocument& d, const std::string& k) {
            const auto v = ints_of(d, k, N, min);
            for (std::size_t i = 0; i < N; ++i) ref(c)[i] = static_cast<T>(v[i]);
          }};
}

Field range_field(const std::string& key, double& (*lo)(PipelineConfig&), double& (*hi)(PipelineConfig&)) {
  return {key,
          [lo, hi](const PipelineConfig& c) {
            auto& m = const_cast<PipelineConfig&>(c);
            return format_double(lo(m)) + " " + format_double(hi(m));
          },
          [lo, hi](PipelineConfig& c, const KvDocument& d, const std::string& k) {
            const auto v = doubles_of(d, k, 2);
            if (!(v[0] <= v[1])) bad_value(d, k, "range must satisfy min <= max");
            lo(c) = v[0];
            hi(c) = v[1];
          }};
}

#define REF(expr) +[](PipelineConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(int_array_field<3>("localizer.widths", REF(localizer.arch.widths), 1));
    f.push_back(int_field<Index>("localizer.reduction_features", REF(localizer.arch.reduction_features), 1));
    f.push_back(int_field<Index>("localizer.hidden_features", REF(localizer.arch.hidden_features), 1));
    f.push_back(int_array_field<3>("localizer.downsample", REF(localizer.downsample), 1));
    f.push_back(double_field("localizer.canny_sigma", REF(localizer.canny.sigma), 0.0));
    f.push_back(double_field("localizer.canny_low", REF(localizer.canny.low_threshold), 0.0));
    f.push_back(double_field("localizer.canny_high", REF(localizer.canny.high_threshold), 0.0));
    f.push_back(double_field("localizer.kde_min_bandwidth", REF(localizer.kde.min_bandwidth), 0.0));
    f.push_back(double_field("localizer.kde_fixed_bandwidth", REF(localizer.kde.fixed_bandwidth), 0.0));
    f.push_back(int_field<int>("localizer.kde_mean_shift_iterations", REF(localizer.kde.mean_shift_iterations), 0));
    f.push_back(double_field("localizer.target_scale", REF(localizer.target_scale), 1e-9));
    f.push_back(int_field<int>("localizer.train_refs_per_volume", REF(localizer.train_refs_per_volume), 1));
    f.push_back(int_field<int>("localizer.infer_refs", REF(localizer.infer_refs), 1));
    f.push_back(int_field<int>("localizer.batch_size", REF(localizer.batch_size), 1));
    f.push_back(int_field<int>("localizer.round1_epochs", REF(localizer.round1_epochs), 0));
    f.push_back(int_field<int>("localizer.round2_epochs", REF(localizer.round2_epochs), 0));
    f.push_back(double_field("localizer.round1_learning_rate", REF(localizer.round1_learning_rate), 0.0));
    f.push_back(double_field("localizer.round2_learning_rate", REF(localizer.round2_learning_rate), 0.0));

    f.push_back(int_field<int>("segmenter.depth", REF(segmenter.arch.depth), 1));
    f.push_back(int_field<Index>("segmenter.base_width", REF(segmenter.arch.base_width), 1));
    f.push_back(int_array_field<3>("segmenter.patch", REF(segmenter.patch), 1));
    f.push_back(double_field("segmenter.stride_fraction", REF(segmenter.stride_fraction), 1e-9));
    f.push_back(int_field<Index>("segmenter.crop_margin", REF(segmenter.crop_margin), 0));
    f.push_back(double_field("segmenter.roi_jitter", REF(segmenter.roi_jitter), 0.0));
    f.push_back(int_field<bool>("segmenter.augment", REF(segmenter.augment), 0));
    f.push_back(range_field("segmenter.gray_scale", REF(segmenter.gray.scale_min), REF(segmenter.gray.scale_max)));
    f.push_back(range_field("segmenter.gray_shift", REF(segmenter.gray.shift_min), REF(segmenter.gray.shift_max)));
    f.push_back(int_field<Index>("segmenter.elastic_grid_spacing", REF(segmenter.elastic.grid_spacing), 1));
    f.push_back(double_field("segmenter.elastic_amplitude", REF(segmenter.elastic.amplitude), 0.0));
    f.push_back({"segmenter.class_weights",
                 [](const PipelineConfig& c) {
                   const auto& w = c.segmenter.class_weights;
                   return w.empty() ? std::string("auto") : format_doubles(w.data(), w.size());
                 },
                 [](PipelineConfig& c, const KvDocument& d, const std::string& k) {
                   if (d.get(k) == "auto") {
                     c.segmenter.class_weights.clear();
                     return;
                   }
                   c.segmenter.class_weights = doubles_of(d, k, 0);
                 }});
    f.push_back(int_field<int>("segmenter.patches_per_volume", REF(segmenter.patches_per_volume), 1));
    f.push_back(int_field<int>("segmenter.batch_size", REF(segmenter.batch_size), 1));
    f.push_back(int_field<int>("segmenter.binary_epochs", REF(segmenter.binary_epochs), 0));
    f.push_back(int_field<int>("segmenter.multiclass_epochs", REF(segmenter.multiclass_epochs), 0));
    f.push_back(double_field("segmenter.learning_rate", REF(segmenter.learning_rate), 0.0));
    f.push_back(double_field("segmenter.min_component_fraction", REF(segmenter.min_component_fraction), 0.0));

    f.push_back(int_field<int>("crossval.folds", REF(folds), 1));
    f.push_back(int_field<int>("crossval.held_out", REF(held_out), 1));
    return f;
  }();
  return table;
}

#undef REF

}  // namespace

PipelineConfig make_preset(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  if (name == "desk") {
    c.localizer.arch.widths = {8, 16, 32};
    c.localizer.downsample = {2, 2, 2};
    c.localizer.train_refs_per_volume = 24;
    c.localizer.infer_refs = 256;
    c.localizer.batch_size = 8;
    c.localizer.target_scale = 8.0;  // coarse voxels
    c.localizer.round1_epochs = 8;
    c.localizer.round2_epochs = 1;
    c.segmenter.arch.depth = 3;
    c.segmenter.arch.base_width = 8;
    c.segmenter.patch = {48, 32, 32};
    c.segmenter.batch_size = 1;
    c.segmenter.binary_epochs = 2;
    c.segmenter.multiclass_epochs = 30;
    c.segmenter.learning_rate = 2e-3;
  } else if (name == "paper") {
    c.localizer.arch.widths = {16, 32, 64};
    c.localizer.downsample = {1, 1, 1};
    c.localizer.target_scale = 16.0;
    c.segmenter.arch.depth = 3;
    c.segmenter.arch.base_width = 16;
    c.segmenter.patch = {96, 128, 160};
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
  }
  return c;
}

void apply_config(PipelineConfig& config, const KvDocument& document) {
  if (document.contains("preset") && document.get("preset") != config.preset) {
    bad_value(document, "preset", "file is for preset '" + document.get("preset") + "' but '" + config.preset +
                                      "' is selected");
  }
  for (const auto& [key, entry] : document.entries()) {
    if (key == "preset") continue;
    bool known = false;
    for (const auto& f : fields()) {
      if (f.key == key) {
        f.parse(config, document, key);
        known = true;
        break;
      }
    }
    if (!known) bad_value(document, key, "unknown key");
  }
  if (config.held_out < 1 || config.folds < 1) throw ConfigError("config: crossval needs folds >= 1 and held_out >= 1");
}

KvDocument to_document(const PipelineConfig& config) {
  KvDocument d;
  d.set("preset", config.preset);
  for (const auto& f : fields()) d.set(f.key, f.print(config));
  return d;
}

void set_threads(PipelineConfig& config, int threads) {
  if (threads < 1) throw ConfigError("threads must be >= 1");
  config.threads = threads;
  config.localizer.threads = threads;
  config.segmenter.threads = threads;
}

TrainedPipeline train_pipeline(std::span<const data::Phantom> cases, const PipelineConfig& config,
                               std::uint64_t seed, const ProgressFn& progress) {
  auto localizer = loc::train_localizer(cases, config.localizer, derive_seed(seed, 1), progress);
  const std::uint64_t seg_seed = derive_seed(seed, 2);
  auto binary = seg::train_binary(cases, config.segmenter, seg_seed, progress);
  auto multiclass = seg::train_multiclass(cases, binary.checkpoint(), config.segmenter, seg_seed, progress);
  return {std::move(localizer), std::move(binary), std::move(multiclass)};
}

metrics::CrossValidationResult run_crossval(std::span<const data::Phantom> cases, const PipelineConfig& config,
                                            std::uint64_t seed, const ProgressFn& progress) {
  const auto runner = [&](std::span<const data::Phantom> train, std::span<const data::Phantom> test, int fold,
                          std::uint64_t fold_seed) {
    const auto say = [&](const std::string& line) {
      if (progress) progress("fold=" + std::to_string(fold) + " " + line);
    };
    const auto trained = train_pipeline(train, config, fold_seed, say);
    std::vector<metrics::CasePrediction> out;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const std::uint64_t case_seed = derive_seed(fold_seed, 100 + i);
      try {
        auto s = seg::segment_volume(test[i].image, trained.localizer.net, config.localizer, trained.multiclass.net,
                                     config.segmenter, case_seed);
        out.push_back({std::move(s.labels), s.roi});
      } catch (const LocalizationError& e) {
        say("case=" + std::to_string(i) + " localization failed: " + e.what());
        out.push_back({test[i].labels.like<std::uint8_t>(), data::BoundingBox3D{}});
      }
    }
    return out;
  };
  return metrics::cross_validate(cases, config.folds, config.held_out, seed, runner);
}

}  // namespace lumbarseg
