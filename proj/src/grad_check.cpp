#include "csifb/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace csifb::ad {

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step, double tol) {
  Tensor leaf = x.detach(true);
  return grad_check_leaf([&f, leaf] { return f(leaf); }, leaf, {}, step, tol);
}

GradCheckReport grad_check_leaf(const std::function<Tensor()>& f, Tensor leaf, std::span<const std::size_t> probe,
                                double step, double tol) {
  std::vector<std::size_t> indices(probe.begin(), probe.end());
  if (indices.empty()) {
    indices.resize(leaf.numel());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  }

  leaf.zero_grad();
  f().backward();
  std::vector<double> analytic;
  analytic.reserve(indices.size());
  for (std::size_t i : indices) analytic.push_back(leaf.grad()[i]);
  leaf.zero_grad();

  std::vector<double> numeric;
  numeric.reserve(indices.size());
  {
    NoGradGuard no_grad;
    auto values = leaf.mutable_values();
    for (std::size_t i : indices) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = f().item();
      values[i] = saved - step;
      const double down = f().item();
      values[i] = saved;
      numeric.push_back((up - down) / (2.0 * step));
    }
  }

  GradCheckReport report;
  report.checked = indices.size();
  double scale = 0.0;
  for (double n : numeric) scale = std::max(scale, std::abs(n));
  const double floor = 1e-3 * scale;
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const double a = analytic[j];
    const double n = numeric[j];
    if (!std::isfinite(a) || !std::isfinite(n)) {
      report.non_finite = true;
      report.worst_index = indices[j];
      continue;
    }
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    const double err = denom == 0.0 ? 0.0 : std::abs(a - n) / denom;
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = indices[j];
    }
  }
  report.passed = !report.non_finite && report.max_rel_error < tol;
  return report;
}

}  // namespace csifb::ad
