#pragma once

// Small dense symmetric eigen-solvers. Power iteration serves the K x K
// reduced Fisher matrix; the cyclic Jacobi method is the full-spectrum
// reference used to cross-check it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fimguard/errors.hpp"

namespace fimguard {

/// Row-major dense matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix diagonal(const std::vector<double>& d) {
    DenseMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  const std::vector<double>& data() const { return data_; }

  std::vector<double> multiply(const std::vector<double>& v) const {
    std::vector<double> out(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols_; ++j) acc += (*this)(i, j) * v[j];
      out[i] = acc;
    }
    return out;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct Eigenpair {
  double value = 0.0;
  std::vector<double> vector;
  std::size_t iterations = 0;
};

struct PowerIterationOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 10000;
};

namespace detail {

inline double vec_norm(const std::vector<double>& v) {
  return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
}

inline double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline void require_symmetric(const DenseMatrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw ShapeError("eigen-solver needs a non-empty square matrix");
  }
  const double tol = 1e-9 * std::max(1.0, m.max_abs());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      if (std::abs(m(i, j) - m(j, i)) > tol) throw DomainError("matrix is not symmetric");
}

enum class PowerStatus { Converged, NullStart, NotConverged };

struct PowerRun {
  PowerStatus status = PowerStatus::NotConverged;
  Eigenpair pair;
};

// Plain power iteration from `start`. Convergence: ||Mv - lambda v|| <=
// tol * |lambda|. `deflate` (optional unit vector u, with value d) iterates
// on M - d u u^T instead of M.
inline PowerRun power_run(const DenseMatrix& m, std::vector<double> v, const PowerIterationOptions& opt,
                          const std::vector<double>* deflate = nullptr, double deflate_value = 0.0,
                          double stop_above = std::numeric_limits<double>::infinity()) {
  PowerRun run;
  const double scale = m.max_abs();
  double n0 = vec_norm(v);
  for (double& x : v) x /= n0;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    std::vector<double> w = m.multiply(v);
    if (deflate) {
      const double c = deflate_value * vec_dot(*deflate, v);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= c * (*deflate)[i];
    }
    const double lambda = vec_dot(v, w);
    const double wn = vec_norm(w);
    run.pair = Eigenpair{lambda, v, it};
    if (wn <= 1e-300 || wn <= 1e-15 * scale * static_cast<double>(m.rows())) {
      run.status = PowerStatus::NullStart;
      return run;
    }
    if (lambda > stop_above) {
      run.status = PowerStatus::NotConverged;
      return run;
    }
    double residual = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double r = w[i] - lambda * v[i];
      residual += r * r;
    }
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / wn;
    if (std::sqrt(residual) <= opt.tolerance * std::abs(lambda)) {
      run.pair = Eigenpair{vec_dot(v, m.multiply(v)), v, it};
      if (deflate) run.pair.value -= deflate_value * std::pow(vec_dot(*deflate, v), 2);
      run.status = PowerStatus::Converged;
      return run;
    }
  }
  return run;
}

inline std::vector<double> shifted_start(std::size_t n) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = 1.0 + static_cast<double>(i + 1) / static_cast<double>(n);
  return s;
}

}  // namespace detail

/// Top eigenpair of a symmetric positive semi-definite matrix by power
/// iteration from the all-ones start. The result is validated by deflation:
/// if M - lambda v v^T still has a larger eigenvalue (the start was
/// orthogonal to the top eigenspace) the iteration restarts from a shifted
/// start vector. A zero matrix yields lambda = 0.
/// Throws NumericError on non-convergence.
inline Eigenpair eig_topk_symmetric(const DenseMatrix& m, const PowerIterationOptions& opt = {}) {
  detail::require_symmetric(m);
  const std::size_t n = m.rows();
  if (m.max_abs() == 0.0) {
    std::vector<double> e(n, 1.0 / std::sqrt(static_cast<double>(n)));
    return Eigenpair{0.0, e, 0};
  }

  auto solve_from = [&](std::vector<double> start) {
    detail::PowerRun run = detail::power_run(m, std::move(start), opt);
    if (run.status == detail::PowerStatus::NotConverged) {
      throw NumericError("power iteration did not converge after " +
                         std::to_string(run.pair.iterations) + " iterations");
    }
    return run;
  };

  detail::PowerRun first = solve_from(std::vector<double>(n, 1.0));
  if (first.status == detail::PowerStatus::NullStart) {
    detail::PowerRun retry = solve_from(detail::shifted_start(n));
    if (retry.status == detail::PowerStatus::NullStart) {
      throw NumericError("power iteration start vectors both lie in the null space");
    }
    return retry.pair;
  }

  // Deflation check: a larger eigenvalue left after removing the found pair
  // means the all-ones start missed the top eigenspace.
  const Eigenpair& found = first.pair;
  const double margin = found.value * (1.0 + 1e-9) + 1e-14 * m.max_abs();
  PowerIterationOptions check = opt;
  check.max_iterations = std::min<std::size_t>(opt.max_iterations, 2000);
  detail::PowerRun probe =
      detail::power_run(m, detail::shifted_start(n), check, &found.vector, found.value, margin);
  if (probe.pair.value > margin) {
    detail::PowerRun restart = solve_from(probe.pair.vector);
    if (restart.pair.value > found.value) {
      restart.pair.iterations += found.iterations;
      return restart.pair;
    }
  }
  return found;
}

struct SymmetricEigenDecomposition {
  std::vector<double> values;  // descending
  DenseMatrix vectors;         // column j pairs with values[j]
  std::size_t sweeps = 0;
};

/// Full eigendecomposition by cyclic Jacobi rotations.
inline SymmetricEigenDecomposition jacobi_eigen_symmetric(const DenseMatrix& input,
                                                          double tolerance = 1e-14,
                                                          std::size_t max_sweeps = 100) {
  detail::require_symmetric(input);
  const std::size_t n = input.rows();
  DenseMatrix a = input;
  DenseMatrix v = DenseMatrix::identity(n);
  const double scale = std::max(input.max_abs(), 1e-300);

  std::size_t sweep = 0;
  for (; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= tolerance * scale) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (sweep == max_sweeps) {
    throw NumericError("Jacobi eigen-solver did not converge after " + std::to_string(sweep) + " sweeps");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
  SymmetricEigenDecomposition out;
  out.sweeps = sweep;
  out.vectors = DenseMatrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values.push_back(a(order[j], order[j]));
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

}  // namespace fimguard
