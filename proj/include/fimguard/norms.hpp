#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fimguard/errors.hpp"
#include "fimguard/tensor.hpp"

namespace fimguard {

enum class Norm { L0, L1, L2, Linf };

inline std::string to_string(Norm n) {
  switch (n) {
    case Norm::L0: return "l0";
    case Norm::L1: return "l1";
    case Norm::L2: return "l2";
    case Norm::Linf: return "linf";
  }
  return "?";
}

inline Norm parse_norm(const std::string& s) {
  if (s == "l0") return Norm::L0;
  if (s == "l1") return Norm::L1;
  if (s == "l2") return Norm::L2;
  if (s == "linf") return Norm::Linf;
  throw ConfigError("unknown norm '" + s + "' (expected l0, l1, l2 or linf)");
}

inline constexpr double kL0Tolerance = 1e-12;

/// Norm of a flat difference vector; l0 counts entries above 1e-12.
inline double vector_norm(std::span<const double> v, Norm kind) {
  double acc = 0.0;
  for (double d : v) {
    const double a = std::abs(d);
    switch (kind) {
      case Norm::L0: acc += a > kL0Tolerance ? 1.0 : 0.0; break;
      case Norm::L1: acc += a; break;
      case Norm::L2: acc += a * a; break;
      case Norm::Linf: acc = std::max(acc, a); break;
    }
  }
  return kind == Norm::L2 ? std::sqrt(acc) : acc;
}

inline double perturbation_norm(std::span<const double> x, std::span<const double> x_adv, Norm kind) {
  if (x.size() != x_adv.size()) throw ShapeError("perturbation_norm: sizes differ");
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x_adv[i] - x[i];
  return vector_norm(d, kind);
}

inline double perturbation_norm(const Tensor& x, const Tensor& x_adv, Norm kind) {
  if (x.shape() != x_adv.shape()) throw ShapeError("perturbation_norm: shapes differ");
  return perturbation_norm(x.values(), x_adv.values(), kind);
}

/// Euclidean projection of eta onto the radius-eps ball of `kind`
/// (l1 via the sort-and-threshold algorithm). l0 is not supported.
inline void project_to_ball(std::vector<double>& eta, Norm kind, double eps) {
  switch (kind) {
    case Norm::Linf:
      for (double& v : eta) v = std::clamp(v, -eps, eps);
      return;
    case Norm::L2: {
      const double n = vector_norm(eta, Norm::L2);
      if (n > eps) {
        const double s = eps / n;
        for (double& v : eta) v *= s;
        if (eps == 0.0) std::fill(eta.begin(), eta.end(), 0.0);
      }
      return;
    }
    case Norm::L1: {
      if (vector_norm(eta, Norm::L1) <= eps) return;
      if (eps == 0.0) {
        std::fill(eta.begin(), eta.end(), 0.0);
        return;
      }
      std::vector<double> mag(eta.size());
      for (std::size_t i = 0; i < eta.size(); ++i) mag[i] = std::abs(eta[i]);
      std::sort(mag.rbegin(), mag.rend());
      double cumulative = 0.0, theta = 0.0;
      for (std::size_t i = 0; i < mag.size(); ++i) {
        cumulative += mag[i];
        const double t = (cumulative - eps) / static_cast<double>(i + 1);
        if (mag[i] > t) theta = t;
      }
      for (double& v : eta) v = v > 0 ? std::max(0.0, v - theta) : std::min(0.0, v + theta);
      return;
    }
    case Norm::L0:
      throw ConfigError("projection onto an l0 ball is not supported");
  }
}

}  // namespace fimguard
