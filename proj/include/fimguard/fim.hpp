#pragma once

// Fisher information at the softmax output and its pull-back to input
// space. For a categorical output G_s = diag(1/p), and the input-space
// metric is G_x = J^T G_s J with J the K x d Jacobian of p w.r.t. x. The top
// eigenpair of G_x is found through the K x K matrix D^{1/2} J J^T D^{1/2}.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fimguard/autodiff.hpp"
#include "fimguard/errors.hpp"
#include "fimguard/linalg.hpp"
#include "fimguard/models.hpp"

namespace fimguard {

using ProbabilityVector = std::vector<double>;

/// Throws DomainError unless p is nonnegative and sums to 1 within `tol`.
inline void require_simplex(std::span<const double> p, double tol = 1e-9) {
  if (p.empty()) throw DomainError("empty probability vector");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw DomainError("probability vector has a negative or NaN entry");
    total += v;
  }
  if (std::abs(total - 1.0) > tol) throw DomainError("probability vector sums to " + std::to_string(total));
}

inline double clamp_probability(double p) { return std::max(p, kProbabilityClamp); }

/// Diagonal of G_s.
struct OutputFim {
  std::vector<double> diagonal;

  double trace() const { return std::accumulate(diagonal.begin(), diagonal.end(), 0.0); }
  DenseMatrix dense() const { return DenseMatrix::diagonal(diagonal); }
};

inline OutputFim output_fim(std::span<const double> p) {
  require_simplex(p);
  OutputFim g;
  g.diagonal.reserve(p.size());
  for (double v : p) g.diagonal.push_back(1.0 / clamp_probability(v));
  return g;
}

/// Sum of 1/p_i; at least K^2, with equality exactly at the uniform point.
inline double fim_trace(std::span<const double> p) { return output_fim(p).trace(); }

/// Row k holds the gradient of output k w.r.t. the flattened input.
struct InputJacobian {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;         // row-major rows x cols
  std::vector<double> output;       // the differentiated outputs at x

  std::span<const double> row(std::size_t k) const { return std::span(data).subspan(k * cols, cols); }

  /// J v for v of length cols.
  std::vector<double> apply(std::span<const double> v) const {
    std::vector<double> out(rows, 0.0);
    for (std::size_t k = 0; k < rows; ++k) out[k] = dot<double>(row(k), v);
    return out;
  }

  /// J^T u for u of length rows.
  std::vector<double> apply_transpose(std::span<const double> u) const {
    std::vector<double> out(cols, 0.0);
    for (std::size_t k = 0; k < rows; ++k)
      for (std::size_t j = 0; j < cols; ++j) out[j] += u[k] * data[k * cols + j];
    return out;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data) m = std::max(m, std::abs(v));
    return m;
  }
};

namespace detail {

inline Tensor as_batch_of_one(const Network<double>& net, const Tensor& x) {
  if (x.size() != net.input_size()) {
    throw ShapeError("expected a single sample of shape " + shape_string(net.input_shape()) + ", got " +
                     shape_string(x.shape()));
  }
  Shape s{1};
  s.insert(s.end(), net.input_shape().begin(), net.input_shape().end());
  return x.reshaped(s);
}

// K reverse sweeps over one recorded forward pass.
inline InputJacobian jacobian_of(const Network<double>& net, const Tensor& x, bool probabilities) {
  Tape<double> tape;
  auto xv = tape.variable(as_batch_of_one(net, x));
  auto out = probabilities ? net.probabilities(tape, xv) : net.logits(tape, xv);
  const std::size_t k = net.num_classes();
  InputJacobian j{k, x.size(), std::vector<double>(k * x.size()), out.value().storage()};
  Tensor seed(out.shape());
  for (std::size_t i = 0; i < k; ++i) {
    seed.fill(0.0);
    seed[i] = 1.0;
    tape.backward(out, seed);
    const Tensor g = tape.grad(xv);
    std::copy(g.values().begin(), g.values().end(), j.data.begin() + static_cast<std::ptrdiff_t>(i * x.size()));
  }
  return j;
}

}  // namespace detail

/// Jacobian of the softmax probabilities (inference mode) w.r.t. one sample.
inline InputJacobian input_jacobian(const Network<double>& net, const Tensor& x) {
  return detail::jacobian_of(net, x, true);
}

/// Jacobian of the logits w.r.t. one sample.
inline InputJacobian logit_jacobian(const Network<double>& net, const Tensor& x) {
  return detail::jacobian_of(net, x, false);
}

/// (J eta)^T G_s (J eta) given a precomputed Jacobian.
inline double fim_quadratic(const InputJacobian& j, std::span<const double> eta) {
  const std::vector<double> v = j.apply(eta);
  double q = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) q += v[k] * v[k] / clamp_probability(j.output[k]);
  return q;
}

inline double input_fim_quadratic(const Network<double>& net, const Tensor& x, const Tensor& eta) {
  if (eta.size() != x.size()) throw ShapeError("perturbation and sample sizes differ");
  return fim_quadratic(input_jacobian(net, x), eta.values());
}

/// Cross-entropy of class y computed stably from logits.
inline double cross_entropy_from_logits(std::span<const double> z, int y) {
  const double shift = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double v : z) total += std::exp(v - shift);
  return std::log(total) + shift - z[static_cast<std::size_t>(y)];
}

/// Loss evaluated on the logits of a perturbed input.
using LogitLoss = std::function<double(std::span<const double>)>;

inline LogitLoss cross_entropy_loss(int y) {
  return [y](std::span<const double> z) { return cross_entropy_from_logits(z, y); };
}

struct SpectralResult {
  double lambda_max = 0.0;
  std::vector<double> eta_unit;  // flattened, unit l2 norm (zero when degenerate)
  DenseMatrix reduced_matrix;    // D^{1/2} J J^T D^{1/2}
  bool degenerate = false;
  double loss_before = 0.0;
  double loss_probe = 0.0;  // loss at x + probe * eta_unit
  std::size_t iterations = 0;
};

/// Sign-probe length for an input of `dim` coordinates.
inline double ossa_probe_length(std::size_t dim) { return 1e-3 * std::sqrt(static_cast<double>(dim)); }

/// Top eigen-direction of G_x at x, oriented so the loss increases.
/// A zero Jacobian yields lambda_max = 0 with the degenerate flag set.
inline SpectralResult ossa_direction(const Network<double>& net, const Tensor& x, const LogitLoss& loss,
                                     const PowerIterationOptions& options = {}) {
  const InputJacobian j = input_jacobian(net, x);
  const std::size_t k = j.rows, d = j.cols;
  SpectralResult r;
  r.reduced_matrix = DenseMatrix(k, k);

  auto loss_at = [&](double step, const std::vector<double>& dir) {
    Tensor probe = detail::as_batch_of_one(net, x);
    for (std::size_t i = 0; i < d; ++i) probe[i] += step * dir[i];
    Tape<double> tape;
    const auto z = net.logits(tape, tape.constant(probe));
    return loss(z.value().values());
  };
  r.loss_before = loss_at(0.0, std::vector<double>(d, 0.0));
  r.loss_probe = r.loss_before;

  if (j.max_abs() == 0.0) {
    r.degenerate = true;
    r.eta_unit.assign(d, 0.0);
    return r;
  }

  std::vector<double> sqrt_d(k);
  for (std::size_t i = 0; i < k; ++i) sqrt_d[i] = 1.0 / std::sqrt(clamp_probability(j.output[i]));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) {
      const double m = sqrt_d[a] * sqrt_d[b] * dot<double>(j.row(a), j.row(b));
      r.reduced_matrix(a, b) = m;
      r.reduced_matrix(b, a) = m;
    }

  const Eigenpair top = eig_topk_symmetric(r.reduced_matrix, options);
  r.lambda_max = std::max(top.value, 0.0);
  r.iterations = top.iterations;
  std::vector<double> u(k);
  for (std::size_t i = 0; i < k; ++i) u[i] = sqrt_d[i] * top.vector[i];
  r.eta_unit = j.apply_transpose(u);
  const double norm = l2_norm<double>(r.eta_unit);
  if (!(norm > 0.0) || r.lambda_max == 0.0) {
    r.degenerate = true;
    r.lambda_max = 0.0;
    r.eta_unit.assign(d, 0.0);
    return r;
  }
  for (double& v : r.eta_unit) v /= norm;

  const double delta = ossa_probe_length(d);
  const double up = loss_at(delta, r.eta_unit);
  const double down = loss_at(-delta, r.eta_unit);
  if (down > r.loss_before && down > up) {
    for (double& v : r.eta_unit) v = -v;
    r.loss_probe = down;
  } else {
    r.loss_probe = up;
    r.degenerate = !(up > r.loss_before);
  }
  return r;
}

inline SpectralResult ossa_direction(const Network<double>& net, const Tensor& x, int y_true) {
  return ossa_direction(net, x, cross_entropy_loss(y_true));
}

/// sum p_i log(p_i / q_i), with 0 log 0 = 0 and q clamped at 1e-12.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  require_simplex(p);
  require_simplex(q);
  // Summed as p (u - log1p(u)) with u = q/p - 1 over the support of p. The
  // remaining -sum p u equals the q mass outside that support, added per
  // term. Every term is then second order in u, so nearby distributions do
  // not lose their divergence to cancellation.
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) {
      total += q[i];
      continue;
    }
    const double u = (clamp_probability(q[i]) - p[i]) / p[i];
    total += p[i] * (u - std::log1p(u));
  }
  return total;
}

}  // namespace fimguard
