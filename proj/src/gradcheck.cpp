#include "orbitkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace orbitkit {
namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(inputs.size());
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  return f(tape, vars).value().item();
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double eps, int points) {
  if (points != 2 && points != 4) throw std::invalid_argument("grad_check: points must be 2 or 4");
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    Var<double> loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }

  GradCheckResult result;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    for (std::size_t j = 0; j < probe[i].size(); ++j) {
      const double x0 = probe[i][j];
      const double h = eps * std::max(1.0, std::abs(x0));
      const auto at = [&](double offset) {
        probe[i][j] = x0 + offset;
        return evaluate(f, probe);
      };
      double fd = 0;
      if (points == 2) {
        fd = (at(h) - at(-h)) / (2.0 * h);
      } else {
        fd = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      }
      probe[i][j] = x0;
      const double ad = analytic[i][j];
      const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
      ++result.checked;
      if (rel > result.max_rel_err) result = {rel, i, j, ad, fd, result.checked};
    }
  }
  return result;
}

}  // namespace orbitkit
