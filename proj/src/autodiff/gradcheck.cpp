#include "lumbarseg/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "lumbarseg/autodiff/ops.hpp"

namespace lumbarseg::ad {

GradcheckReport finite_difference_check(const Fragment& fragment,
                                        const std::vector<Tensor<double>>& inputs,
                                        const GradcheckOptions& options) {
  KinkRecordingScope recording;
  GradcheckReport report;

  for (auto t : inputs) t.zero_grad();
  const Tensor<double> base = fragment(inputs);
  if (base.size() != 1) throw ShapeError("finite_difference_check: fragment is not scalar-valued");
  if (base.touched_kink()) {
    report.excluded = true;
    report.passed = true;
    report.detail = "forward pass touches a non-differentiable point";
    return report;
  }
  const std::uint64_t base_pattern = base.kink_signature();
  base.backward();

  double max_diff = 0.0;
  double max_scale = 0.0;
  for (auto input : inputs) {
    if (!input.requires_grad()) continue;
    const Array<double> analytic = input.has_grad() ? input.grad() : Array<double>::Zero(input.size());
    for (Index i = 0; i < input.size(); ++i) {
      const double original = input.value()[i];
      input.value()[i] = original + options.step;
      const Tensor<double> plus = fragment(inputs);
      input.value()[i] = original - options.step;
      const Tensor<double> minus = fragment(inputs);
      input.value()[i] = original;
      if (plus.kink_signature() != base_pattern || minus.kink_signature() != base_pattern) {
        ++report.skipped_at_kinks;
        continue;
      }
      const double numeric = (plus.value()[0] - minus.value()[0]) / (2.0 * options.step);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_scale = std::max({max_scale, std::abs(numeric), std::abs(analytic[i])});
      ++report.compared;
    }
  }
  for (auto t : inputs) t.zero_grad();

  report.max_relative_error = max_scale > 0.0 ? max_diff / max_scale : max_diff;
  report.passed = report.compared > 0 && report.max_relative_error < options.tolerance;
  if (report.compared == 0) report.detail = "no coordinates compared";
  return report;
}

}  // namespace lumbarseg::ad
