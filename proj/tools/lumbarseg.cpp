#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "lumbarseg/dataset/phantom.hpp"
#include "lumbarseg/dataset/volume_io.hpp"
#include "lumbarseg/errors.hpp"
#include "lumbarseg/metrics/evaluation.hpp"
#include "lumbarseg/pipeline.hpp"
#include "lumbarseg/seeding.hpp"
#include "lumbarseg/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace lumbarseg;

namespace {

constexpr int kExitFailure = 1;  // selfcheck found a defect
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitLocalization = 4;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string preset = "desk";
  int threads = 1;
  bool dump_config = false;
};

PipelineConfig resolve_config(const Common& common) {
  PipelineConfig config = make_preset(common.preset);
  if (!common.config_path.empty()) apply_config(config, KvDocument::load(common.config_path));
  set_threads(config, common.threads);
  return config;
}

std::uint64_t require_seed(const Common& common, const std::string& command) {
  if (!common.seed) throw ConfigError(command + " is randomized and needs --seed");
  return *common.seed;
}

// Cases are the stems of every "<stem>_box.txt" in `dir`, sorted by name.
std::vector<data::Phantom> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory '" + dir.string() + "' does not exist");
  std::vector<std::string> stems;
  const std::string suffix = "_box.txt";
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) stems.push_back(name.substr(0, name.size() - suffix.size()));
  }
  if (stems.empty()) throw DataError("data directory '" + dir.string() + "' holds no cases (*_box.txt)");
  std::sort(stems.begin(), stems.end());
  std::vector<data::Phantom> cases;
  for (const auto& s : stems) cases.push_back(data::load_phantom(dir, s));
  return cases;
}

// Progress lines go to stdout and, in order, to the log file.
class LossLog {
 public:
  explicit LossLog(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot write log '" + path.string() + "'");
  }
  void operator()(const std::string& line) {
    out_ << line << '\n';
    out_.flush();
    std::cout << line << std::endl;
  }

 private:
  std::ofstream out_;
};

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write '" + path.string() + "'");
}

void write_report(const metrics::MetricReport& report, const fs::path& prefix) {
  write_text(fs::path(prefix.string() + ".txt"), metrics::format_table(report));
  ensure_parent(prefix);
  metrics::to_document(report).save(fs::path(prefix.string() + ".kv"));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_gen_phantom(const Common& common, const std::string& spec_path, const fs::path& out, int count) {
  const std::uint64_t seed = require_seed(common, "gen-phantom");
  if (count < 1) throw ConfigError("--count must be >= 1");
  data::PhantomSpec spec;
  if (!spec_path.empty()) spec = data::PhantomSpec::from_document(KvDocument::load(spec_path));
  fs::create_directories(out);
  for (int i = 0; i < count; ++i) {
    data::PhantomSpec s = spec;
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    char stem[32];
    std::snprintf(stem, sizeof stem, "case_%03d", i);
    data::save_phantom(data::gen_phantom(s), out, stem);
    s.to_document().save(out / (std::string(stem) + "_spec.txt"));
  }
  std::cout << "wrote " << count << " cases to " << out.string() << "\n";
  return 0;
}

int cmd_train_localizer(const Common& common, const fs::path& data_dir, const fs::path& out, std::string log_path) {
  const auto config = resolve_config(common);
  const std::uint64_t seed = require_seed(common, "train-localizer");
  const auto cases = load_dataset(data_dir);
  if (log_path.empty()) log_path = out.string() + ".log";
  ensure_parent(out);
  ensure_parent(log_path);
  LossLog log(log_path);
  const auto t0 = std::chrono::steady_clock::now();
  const auto trained = loc::train_localizer(cases, config.localizer, seed, std::ref(log));
  trained.checkpoint().save(out);
  std::cout << "localizer trained on " << cases.size() << " cases in " << seconds_since(t0) << " s\n";
  return 0;
}

int cmd_train_segmenter(const Common& common, const fs::path& data_dir, const fs::path& out, std::string binary_out,
                        std::string log_path) {
  const auto config = resolve_config(common);
  const std::uint64_t seed = require_seed(common, "train-segmenter");
  const auto cases = load_dataset(data_dir);
  if (log_path.empty()) log_path = out.string() + ".log";
  if (binary_out.empty()) binary_out = out.string() + ".binary";
  ensure_parent(out);
  ensure_parent(binary_out);
  ensure_parent(log_path);
  LossLog log(log_path);
  const auto t0 = std::chrono::steady_clock::now();
  const auto binary = seg::train_binary(cases, config.segmenter, seed, std::ref(log));
  const auto binary_checkpoint = binary.checkpoint();
  binary_checkpoint.save(binary_out);
  const auto multi = seg::train_multiclass(cases, binary_checkpoint, config.segmenter, seed, std::ref(log));
  multi.checkpoint().save(out);
  std::cout << "segmenter trained on " << cases.size() << " cases in " << seconds_since(t0) << " s\n";
  return 0;
}

int cmd_infer(const Common& common, const fs::path& volume_path, const fs::path& loc_path, const fs::path& seg_path,
              const fs::path& out) {
  const auto config = resolve_config(common);
  const std::uint64_t seed = require_seed(common, "infer");
  const auto volume = data::load_volume(volume_path);
  const auto loc_ckpt = ad::Checkpoint<float>::load(loc_path);
  const auto localizer = loc::localizer_from_checkpoint(loc_ckpt);
  const auto loc_config = loc::localizer_config_from_checkpoint(loc_ckpt, config.localizer);
  const auto segmenter = seg::segmenter_from_checkpoint(ad::Checkpoint<float>::load(seg_path));
  const auto result = seg::segment_volume(volume, localizer, loc_config, segmenter, config.segmenter, seed);
  ensure_parent(out);
  data::save_labels(result.labels, out);
  std::cout << "roi low " << format_doubles(result.roi.low.data(), 3) << " high "
            << format_doubles(result.roi.high.data(), 3) << "\n";
  std::vector<std::size_t> counts(6, 0);
  for (std::uint8_t v : result.labels.values) ++counts[std::min<std::size_t>(v, 5)];
  for (int l = 0; l <= 5; ++l) std::cout << "label " << l << " voxels " << counts[static_cast<std::size_t>(l)] << "\n";
  return 0;
}

int cmd_evaluate(const fs::path& pred_path, const fs::path& truth_path, const fs::path& out) {
  const auto pred = data::load_labels(pred_path);
  const auto truth = data::load_labels(truth_path);
  const std::vector<metrics::CaseMetrics> cases{metrics::evaluate(pred, truth)};
  const auto report = metrics::aggregate(cases);
  write_report(report, out);
  std::cout << metrics::format_table(report);
  return 0;
}

int cmd_crossval(const Common& common, const fs::path& data_dir, const fs::path& out) {
  const auto config = resolve_config(common);
  const std::uint64_t seed = require_seed(common, "crossval");
  const auto cases = load_dataset(data_dir);
  fs::create_directories(out);
  LossLog log(out / "crossval.log");
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = run_crossval(cases, config, seed, std::ref(log));
  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    write_report(result.folds[f].report, out / ("fold_" + std::to_string(f)));
    std::cout << "fold " << f << "\n" << metrics::format_table(result.folds[f].report);
  }
  write_report(result.aggregate, out / "aggregate");
  std::cout << "aggregate\n" << metrics::format_table(result.aggregate);
  std::cout << "crossval wall-clock " << seconds_since(t0) << " s\n";
  return 0;
}

int cmd_selfcheck(const Common& common, int trials, double corruption) {
  const std::uint64_t seed = common.seed.value_or(1);
  ad::testing::set_gradient_corruption(corruption);
  bool ok = true;
  for (const auto& r : check::gradient_suite(trials, seed)) {
    const bool pass = r.passed == r.trials && r.trials >= trials;
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " gradient " << r.name << " " << r.passed << "/" << r.trials
              << " max_rel_err=" << r.max_relative_error << "\n";
  }
  ad::testing::set_gradient_corruption(0.0);
  const auto m = check::metric_oracle_suite(100, seed);
  const bool metrics_ok = m.overlap_mismatches == 0 && m.max_distance_error <= 1e-9;
  ok = ok && metrics_ok;
  std::cout << (metrics_ok ? "PASS" : "FAIL") << " metric oracle pairs=" << m.pairs
            << " overlap_mismatches=" << m.overlap_mismatches << " max_distance_err=" << m.max_distance_error << "\n";
  const auto k = check::kde_recovery_suite(20, 500, 2.0, seed);
  const bool kde_ok = k.recovered >= 19;
  ok = ok && kde_ok;
  std::cout << (kde_ok ? "PASS" : "FAIL") << " kde recovery " << k.recovered << "/" << k.trials << "\n";
  std::cout << (ok ? "selfcheck passed" : "selfcheck FAILED") << "\n";
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep freed tensor buffers in the heap instead of returning them to the OS.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Cascaded 3D FCN lumbar vertebra segmentation"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  Common common;
  app.add_option("--config", common.config_path, "key=value config file applied over the preset")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", common.seed, "base seed for every random stream");
  app.add_option("--preset", common.preset, "default hyperparameters")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--threads", common.threads, "worker threads; 1 is bit-exact")->check(CLI::PositiveNumber);
  app.add_flag("--dump-config", common.dump_config, "print the resolved config and exit");

  std::string spec_path, data_dir, out, log_path, binary_out, volume, loc_ckpt, seg_ckpt, pred, truth;
  int count = 15, trials = 20;
  double corruption = 0.0;

  auto* gen = app.add_subcommand("gen-phantom", "generate synthetic phantoms");
  gen->add_option("--spec", spec_path, "phantom spec file")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--count", count, "number of cases");

  auto* tl = app.add_subcommand("train-localizer", "two-round localization training");
  tl->add_option("--data", data_dir, "phantom directory")->required();
  tl->add_option("--out", out, "checkpoint path")->required();
  tl->add_option("--log", log_path, "loss log (default <out>.log)");

  auto* ts = app.add_subcommand("train-segmenter", "binary then multi-class segmentation training");
  ts->add_option("--data", data_dir, "phantom directory")->required();
  ts->add_option("--out", out, "multi-class checkpoint path")->required();
  ts->add_option("--binary-out", binary_out, "binary checkpoint path (default <out>.binary)");
  ts->add_option("--log", log_path, "loss log (default <out>.log)");

  auto* inf = app.add_subcommand("infer", "localize and segment one volume");
  inf->add_option("--volume", volume, "image header")->required()->check(CLI::ExistingFile);
  inf->add_option("--localizer", loc_ckpt, "localizer checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--segmenter", seg_ckpt, "segmenter checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--out", out, "label header to write")->required();

  auto* ev = app.add_subcommand("evaluate", "compare a prediction with ground truth");
  ev->add_option("--pred", pred, "predicted label header")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", truth, "ground-truth label header")->required()->check(CLI::ExistingFile);
  ev->add_option("--out", out, "report prefix (.txt and .kv are written)")->required();

  auto* cv = app.add_subcommand("crossval", "leave-k-out cross-validation of the full cascade");
  cv->add_option("--data", data_dir, "phantom directory")->required();
  cv->add_option("--out", out, "report directory")->required();

  auto* sc = app.add_subcommand("selfcheck", "gradient, metric and KDE verification suites");
  sc->add_option("--trials", trials, "random inputs per gradient family")->check(CLI::PositiveNumber);
  sc->add_option("--corrupt-gradient", corruption, "test hook: scale every conv3d input gradient by 1 + value")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (common.dump_config) {
      std::cout << to_document(resolve_config(common)).to_string();
      return 0;
    }
    if (gen->parsed()) return cmd_gen_phantom(common, spec_path, out, count);
    if (tl->parsed()) return cmd_train_localizer(common, data_dir, out, log_path);
    if (ts->parsed()) return cmd_train_segmenter(common, data_dir, out, binary_out, log_path);
    if (inf->parsed()) return cmd_infer(common, volume, loc_ckpt, seg_ckpt, out);
    if (ev->parsed()) return cmd_evaluate(pred, truth, out);
    if (cv->parsed()) return cmd_crossval(common, data_dir, out);
    if (sc->parsed()) return cmd_selfcheck(common, trials, corruption);
    std::cout << app.help();
    return kExitInput;
  } catch (const NumericError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const LocalizationError& e) {
    std::cerr << "localization failure: " << e.what() << "\n";
    return kExitLocalization;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
}
