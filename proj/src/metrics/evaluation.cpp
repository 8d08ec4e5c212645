#include "lumbarseg/metrics/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "lumbarseg/errors.hpp"
#include "lumbarseg/seeding.hpp"

namespace lumbarseg::metrics {

namespace {

std::string row_name(int row) { return row < kVertebraCount ? "L" + std::to_string(row + 1) : "lumbar"; }

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

MetricRow aggregate_row(std::span<const CaseMetrics> cases, int row) {
  std::vector<double> dc, jc, hd, assd_values;
  for (const auto& c : cases) {
    const MetricValues& v = row < kVertebraCount ? c.labels[static_cast<std::size_t>(row)] : c.lumbar;
    if (!v.present) continue;
    dc.push_back(v.dc);
    jc.push_back(v.jc);
    if (v.hd_mm) hd.push_back(*v.hd_mm);
    if (v.assd_mm) assd_values.push_back(*v.assd_mm);
  }
  return {summarize(dc), summarize(jc), summarize(hd), summarize(assd_values)};
}

std::string cell(const Statistic& s, double factor) {
  if (s.count == 0) return "absent";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f +- %.2f", s.mean * factor, s.sd * factor);
  return buf;
}

void put(KvDocument& doc, const std::string& prefix, const Statistic& s) {
  doc.set(prefix + ".mean", format_double(s.mean));
  doc.set(prefix + ".sd", format_double(s.sd));
  doc.set(prefix + ".count", std::to_string(s.count));
}

}  // namespace

CaseMetrics evaluate(const LabelVolume& predicted, const LabelVolume& truth) {
  if (predicted.extents != truth.extents || predicted.spacing != truth.spacing) {
    throw EvaluationError("evaluate: prediction " + data::to_string(predicted.extents) + " and truth " +
                          data::to_string(truth.extents) + " differ in geometry");
  }
  CaseMetrics out;
  std::vector<double> dc, jc, hd, assd_values;
  for (int l = 1; l <= kVertebraCount; ++l) {
    const auto label = static_cast<std::uint8_t>(l);
    const OverlapCounts counts = overlap(predicted, truth, label);
    MetricValues& v = out.labels[static_cast<std::size_t>(l - 1)];
    if (counts.b == 0) continue;
    v.present = true;
    v.dc = *dice(counts);
    v.jc = *jaccard(counts);
    if (counts.a > 0) {
      const SurfaceVoxelSet sp = extract_surface(predicted, label);
      const SurfaceVoxelSet st = extract_surface(truth, label);
      v.hd_mm = hausdorff(sp, st);
      v.assd_mm = assd(sp, st);
      hd.push_back(*v.hd_mm);
      assd_values.push_back(*v.assd_mm);
    }
    dc.push_back(v.dc);
    jc.push_back(v.jc);
  }
  if (!dc.empty()) {
    out.lumbar.present = true;
    out.lumbar.dc = mean_of(dc);
    out.lumbar.jc = mean_of(jc);
    if (!hd.empty()) {
      out.lumbar.hd_mm = mean_of(hd);
      out.lumbar.assd_mm = mean_of(assd_values);
    }
  }
  return out;
}

Statistic summarize(std::span<const double> values) {
  Statistic s;
  s.count = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

MetricReport aggregate(std::span<const CaseMetrics> cases) {
  MetricReport r;
  r.case_count = static_cast<int>(cases.size());
  for (int row = 0; row < kVertebraCount; ++row) r.labels[static_cast<std::size_t>(row)] = aggregate_row(cases, row);
  r.lumbar = aggregate_row(cases, kVertebraCount);
  std::vector<double> iou;
  for (const auto& c : cases) {
    if (c.roi_iou) iou.push_back(*c.roi_iou);
  }
  r.roi_iou = summarize(iou);
  return r;
}

std::string format_table(const MetricReport& report) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-7s %-18s %-18s %-18s %-18s\n", "", "DC (%)", "JC (%)", "HD (mm)", "ASSD (mm)");
  out += line;
  for (int row = 0; row <= kVertebraCount; ++row) {
    const MetricRow& m = row < kVertebraCount ? report.labels[static_cast<std::size_t>(row)] : report.lumbar;
    const std::string name = row < kVertebraCount ? row_name(row) : "Lumbar";
    std::snprintf(line, sizeof line, "%-7s %-18s %-18s %-18s %-18s\n", name.c_str(), cell(m.dc, 100).c_str(),
                  cell(m.jc, 100).c_str(), cell(m.hd_mm, 1).c_str(), cell(m.assd_mm, 1).c_str());
    out += line;
  }
  if (report.roi_iou.count > 0) out += "ROI IoU " + cell(report.roi_iou, 1) + "\n";
  out += "cases   " + std::to_string(report.case_count) + "\n";
  return out;
}

KvDocument to_document(const MetricReport& report) {
  KvDocument doc;
  doc.set("case_count", std::to_string(report.case_count));
  put(doc, "roi_iou", report.roi_iou);
  for (int row = 0; row <= kVertebraCount; ++row) {
    const MetricRow& m = row < kVertebraCount ? report.labels[static_cast<std::size_t>(row)] : report.lumbar;
    const std::string name = row_name(row);
    put(doc, name + ".dc", m.dc);
    put(doc, name + ".jc", m.jc);
    put(doc, name + ".hd_mm", m.hd_mm);
    put(doc, name + ".assd_mm", m.assd_mm);
  }
  return doc;
}

std::vector<FoldSplit> make_folds(std::size_t case_count, int fold_count, int held_out, std::uint64_t seed) {
  if (fold_count < 1) throw ConfigError("cross-validation needs at least one fold");
  if (held_out < 1) throw ConfigError("cross-validation must hold out at least one case");
  if (static_cast<std::size_t>(held_out) >= case_count) {
    throw ConfigError("holding out " + std::to_string(held_out) + " of " + std::to_string(case_count) +
                      " cases leaves an empty training set");
  }
  const auto chunk = static_cast<std::size_t>(held_out);
  std::mt19937_64 rng(derive_seed(seed, 0xf01d));
  std::vector<std::size_t> order;
  std::size_t next = case_count;  // forces the first permutation
  std::vector<FoldSplit> folds;
  for (int f = 0; f < fold_count; ++f) {
    if (next + chunk > case_count) {
      order.resize(case_count);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      next = 0;
    }
    FoldSplit split;
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(next),
                      order.begin() + static_cast<std::ptrdiff_t>(next + chunk));
    next += chunk;
    std::sort(split.test.begin(), split.test.end());
    for (std::size_t i = 0; i < case_count; ++i) {
      if (!std::binary_search(split.test.begin(), split.test.end(), i)) split.train.push_back(i);
    }
    folds.push_back(std::move(split));
  }
  return folds;
}

CrossValidationResult cross_validate(std::span<const data::Phantom> cases, int fold_count, int held_out,
                                     std::uint64_t seed, const FoldRunner& runner) {
  CrossValidationResult result;
  std::vector<CaseMetrics> all;
  const auto splits = make_folds(cases.size(), fold_count, held_out, seed);
  for (std::size_t f = 0; f < splits.size(); ++f) {
    FoldResult fold;
    fold.split = splits[f];
    std::vector<data::Phantom> train, test;
    for (std::size_t i : fold.split.train) train.push_back(cases[i]);
    for (std::size_t i : fold.split.test) test.push_back(cases[i]);
    const auto predictions = runner(train, test, static_cast<int>(f), derive_seed(seed, f));
    if (predictions.size() != test.size()) {
      throw EvaluationError("fold " + std::to_string(f) + ": runner returned " + std::to_string(predictions.size()) +
                            " predictions for " + std::to_string(test.size()) + " cases");
    }
    for (std::size_t k = 0; k < test.size(); ++k) {
      CaseMetrics m = evaluate(predictions[k].labels, test[k].labels);
      if (predictions[k].roi) m.roi_iou = data::box_iou(*predictions[k].roi, test[k].box);
      fold.cases.push_back(m);
      all.push_back(m);
    }
    fold.report = aggregate(fold.cases);
    result.folds.push_back(std::move(fold));
  }
  result.aggregate = aggregate(all);
  return result;
}

}  // namespace lumbarseg::metrics
