#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "csifb/tensor.hpp"

namespace csifb::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool non_finite = false;
  bool passed = false;
};

/// Compares the analytic gradient of a scalar function against central
/// differences. The relative error of element i is
/// |a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max_j |n_j|), so entries many orders
/// below the largest gradient are judged on the gradient's own scale.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step = 1e-3,
                           double tol = 1e-4);

/// Same check for a leaf captured by `f`, restricted to the `probe` indices
/// (all elements when empty). Gradients already on the leaf are discarded.
GradCheckReport grad_check_leaf(const std::function<Tensor()>& f, Tensor leaf, std::span<const std::size_t> probe,
                                double step = 1e-3, double tol = 1e-4);

}  // namespace csifb::ad
