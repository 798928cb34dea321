#include "m3att/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace m3att {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedParam> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto& p : params) p.tensor.zero_grad();

  Tensor loss = f();
  if (!std::isfinite(loss.item())) {
    report.failure = "f is not finite at the unperturbed point";
    return report;
  }
  if (loss.requires_grad()) loss.backward();

  std::mt19937 rng(options.seed);
  for (auto& p : params) {
    TensorCheck tc;
    tc.name = p.name;
    const std::size_t n = p.tensor.numel();
    std::vector<double> analytic(n, 0.0);
    if (p.tensor.has_grad()) {
      auto g = p.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_tensor > 0 && n > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    auto values = p.tensor.mutable_data();
    for (std::size_t idx : entries) {
      const double saved = values[idx];
      double plus = 0.0;
      double minus = 0.0;
      {
        NoGradGuard no_grad;
        values[idx] = saved + options.step;
        plus = f().item();
        values[idx] = saved - options.step;
        minus = f().item();
      }
      values[idx] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        std::ostringstream os;
        os << "non-finite f when perturbing " << p.name << "[" << idx << "]";
        report.failure = os.str();
        report.tensors.push_back(tc);
        report.passed = false;
        return report;
      }
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double denom =
          std::max({std::abs(analytic[idx]), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic[idx] - numeric) / denom;
      if (rel > tc.max_rel_error || tc.checked == 0) {
        if (rel >= tc.max_rel_error) {
          tc.max_rel_error = rel;
          tc.worst_index = idx;
          tc.analytic = analytic[idx];
          tc.numeric = numeric;
        }
      }
      ++tc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, tc.max_rel_error);
    report.tensors.push_back(tc);
  }
  report.passed = report.failure.empty() && report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace m3att
