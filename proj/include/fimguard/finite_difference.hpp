#pragma once

#include <concepts>

#include "fimguard/errors.hpp"
#include "fimguard/tensor.hpp"

namespace fimguard {

/// Central-difference gradient estimate (f(x + h e_i) - f(x - h e_i)) / 2h,
/// one coordinate at a time. Used as an independent check on backward().
template <class T, class F>
  requires std::invocable<F&, const BasicTensor<T>&>
BasicTensor<T> finite_difference_gradient(F&& f, const BasicTensor<T>& x, T step) {
  if (!(step > T{0})) throw DomainError("finite-difference step must be positive");
  BasicTensor<T> grad(x.shape());
  BasicTensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T original = probe[i];
    probe[i] = original + step;
    const T up = static_cast<T>(f(probe));
    probe[i] = original - step;
    const T down = static_cast<T>(f(probe));
    probe[i] = original;
    grad[i] = (up - down) / (T{2} * step);
  }
  return grad;
}

}  // namespace fimguard
