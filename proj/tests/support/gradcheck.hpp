#pragma once

// Reverse-mode vs central-difference comparison helpers shared by the unit
// and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fimguard/autodiff.hpp"
#include "fimguard/finite_difference.hpp"

namespace fimguard::testing {

using Builder = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline double relative_error(const Tensor& got, const Tensor& want, double floor = 1e-6) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    diff += (got[i] - want[i]) * (got[i] - want[i]);
    ref += want[i] * want[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

inline double relative_error_vector(const std::vector<double>& got, const std::vector<double>& want,
                                    double floor = 1e-6) {
  return relative_error(Tensor(Shape{got.size()}, got), Tensor(Shape{want.size()}, want), floor);
}

inline Tensor reverse_gradient(const Builder& build, const std::vector<Tensor>& inputs, std::size_t which) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(build(tape, vars));
  return tape.grad(vars[which]);
}

inline Tensor numeric_gradient(const Builder& build, const std::vector<Tensor>& inputs, std::size_t which,
                               double step = 1e-5) {
  auto f = [&](const Tensor& probe) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.constant(i == which ? probe : inputs[i]));
    return build(tape, vars).value().item();
  };
  return finite_difference_gradient<double>(f, inputs[which], step);
}

/// Largest relative error over all inputs of `build`.
inline double max_gradient_error(const Builder& build, const std::vector<Tensor>& inputs, double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    worst = std::max(worst, relative_error(reverse_gradient(build, inputs, i), numeric_gradient(build, inputs, i, step)));
  }
  return worst;
}

}  // namespace fimguard::testing
