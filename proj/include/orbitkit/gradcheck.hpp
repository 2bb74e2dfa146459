#pragma once

#include <functional>
#include <span>
#include <vector>

#include "orbitkit/autodiff.hpp"

namespace orbitkit {

using ScalarFn = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `f` with central differences, step eps * max(1, |x|).
/// rel err = |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
/// points = 4 uses the fourth-order stencil, which allows a larger step and less roundoff.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double eps = 1e-5,
                           int points = 2);

}  // namespace orbitkit
