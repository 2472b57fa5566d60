#pragma once

// Per-sample adversarial attacks against a frozen network. Every attack
// works on one sample in [0,1], clips its iterate to [0,1], and reports the
// achieved norm of the final (clipped) perturbation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fimguard/autodiff.hpp"
#include "fimguard/errors.hpp"
#include "fimguard/fim.hpp"
#include "fimguard/models.hpp"
#include "fimguard/norms.hpp"
#include "fimguard/random.hpp"

namespace fimguard {

struct AttackBudget {
  Norm norm = Norm::L2;
  double epsilon = 0.0;
  std::size_t steps = 1;
  double step_size = 0.0;  // 0 selects 2.5 * epsilon / steps
};

struct AttackOutcome {
  Tensor x_adv;
  Tensor eta;
  Norm norm = Norm::L2;
  double achieved_norm = 0.0;
  bool success = false;
  int label_before = -1;
  int label_after = -1;
  int target = -1;  // targeted attacks only
  std::size_t queries = 0;
  bool degenerate = false;  // no usable direction (zero gradient or Jacobian)
};

struct CwConfig {
  double c = 1.0;
  std::size_t steps = 200;
  double lr = 0.01;
  double kappa = 0.0;
};

struct DeepFoolConfig {
  std::size_t max_steps = 50;
  double overshoot = 0.02;
};

struct JsmaConfig {
  std::size_t max_pixels = 112;
  double theta = 1.0;  // positive saturates toward 1, negative toward 0
};

namespace detail {

inline int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

inline std::vector<double> softmax_values(std::span<const double> z) {
  std::vector<double> p(z.size());
  const double shift = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) total += (p[k] = std::exp(z[k] - shift));
  for (double& v : p) v /= total;
  return p;
}

// Query counter and gradient access for one sample.
class Probe {
 public:
  explicit Probe(const Network<double>& net) : net_(net) {
    shape_ = {1};
    shape_.insert(shape_.end(), net.input_shape().begin(), net.input_shape().end());
  }

  std::size_t queries = 0;

  std::vector<double> logits(std::span<const double> x) {
    ++queries;
    Tape<double> tape;
    return net_.logits(tape, tape.constant(batch(x))).value().storage();
  }

  std::vector<double> probabilities(std::span<const double> x) { return softmax_values(logits(x)); }

  int label(std::span<const double> x) { return argmax<double>(probabilities(x)); }

  /// Gradient of seed(z) . z w.r.t. x, where z are the logits at x.
  template <class SeedFn>
  std::vector<double> logit_vjp(std::span<const double> x, SeedFn seed_fn, std::vector<double>* logits_out = nullptr) {
    ++queries;
    Tape<double> tape;
    auto xv = tape.variable(batch(x));
    auto z = net_.logits(tape, xv);
    const std::vector<double> zv = z.value().storage();
    tape.backward(z, Tensor(z.shape(), seed_fn(zv)));
    if (logits_out) *logits_out = zv;
    return tape.grad(xv).storage();
  }

  /// Gradient of the cross-entropy of class y, via (p - onehot) on the logits.
  std::vector<double> loss_gradient(std::span<const double> x, int y) {
    return logit_vjp(x, [y](const std::vector<double>& z) {
      std::vector<double> seed = softmax_values(z);
      seed[static_cast<std::size_t>(y)] -= 1.0;
      return seed;
    });
  }

  const Network<double>& net() const { return net_; }

 private:
  Tensor batch(std::span<const double> x) const { return Tensor(shape_, std::vector<double>(x.begin(), x.end())); }

  const Network<double>& net_;
  Shape shape_;
};

inline std::vector<double> flat(const Network<double>& net, const Tensor& x) {
  if (x.size() != net.input_size()) {
    throw ShapeError("attack expects one sample of shape " + shape_string(net.input_shape()) + ", got " +
                     shape_string(x.shape()));
  }
  return x.storage();
}

inline void clip_unit(std::vector<double>& v) {
  for (double& e : v) e = std::clamp(e, 0.0, 1.0);
}

inline void require_label(int y, const Network<double>& net, const char* what) {
  if (y < 0 || static_cast<std::size_t>(y) >= net.num_classes()) {
    throw DomainError(std::string(what) + " " + std::to_string(y) + " outside [0, " +
                      std::to_string(net.num_classes()) + ")");
  }
}

// Clips, measures, and classifies the final iterate.
inline AttackOutcome finish(Probe& probe, const Tensor& x, std::vector<double> adv, int y_true, int label_before,
                            Norm norm, int target = -1, bool degenerate = false) {
  clip_unit(adv);
  AttackOutcome out;
  out.x_adv = Tensor(x.shape(), std::move(adv));
  out.eta = Tensor(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.eta[i] = out.x_adv[i] - x[i];
  out.norm = norm;
  out.achieved_norm = vector_norm(out.eta.values(), norm);
  out.label_before = label_before;
  out.label_after = out.x_adv == x ? label_before : probe.label(out.x_adv.values());
  out.target = target;
  out.degenerate = degenerate;
  out.success = target >= 0 ? (out.label_after == target && label_before != target)
                            : (label_before == y_true && out.label_after != y_true);
  out.queries = probe.queries;
  return out;
}

inline void require_epsilon(const AttackBudget& b) {
  if (!(b.epsilon >= 0.0) || !std::isfinite(b.epsilon)) throw ConfigError("attack epsilon must be finite and >= 0");
}

inline double step_size(const AttackBudget& b) {
  if (b.step_size < 0.0) throw ConfigError("step size must be >= 0");
  return b.step_size > 0.0 ? b.step_size : 2.5 * b.epsilon / static_cast<double>(std::max<std::size_t>(b.steps, 1));
}

// x + eps * dir, with dir an l2-unit or sign direction.
inline std::vector<double> displaced(std::span<const double> x, std::span<const double> dir, double eps) {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += eps * dir[i];
  return out;
}

inline std::vector<double> sign_vector(std::span<const double> g) {
  std::vector<double> s(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) s[i] = sign_of(g[i]);
  return s;
}

// g / ||g||_2, or nullopt for a zero gradient.
inline std::optional<std::vector<double>> unit_vector(std::span<const double> g) {
  const double n = vector_norm(g, Norm::L2);
  if (!(n > 0.0)) return std::nullopt;
  std::vector<double> u(g.begin(), g.end());
  for (double& v : u) v /= n;
  return u;
}

}  // namespace detail

/// Least-likely class under the network; ties go to the lowest index.
inline int least_likely_class(const Network<double>& net, const Tensor& x) {
  detail::Probe probe(net);
  const auto p = probe.probabilities(detail::flat(net, x));
  return static_cast<int>(std::min_element(p.begin(), p.end()) - p.begin());
}

/// Steps eps along the top eigenvector of the input Fisher metric.
inline AttackOutcome attack_ossa(const Network<double>& net, const Tensor& x, int y_true, const AttackBudget& budget) {
  detail::require_epsilon(budget);
  detail::require_label(y_true, net, "label");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const int before = probe.label(x0);
  if (budget.epsilon == 0.0) return detail::finish(probe, x, x0, y_true, before, Norm::L2);
  const SpectralResult dir = ossa_direction(net, x, y_true);
  probe.queries += net.num_classes() + 3;
  if (dir.degenerate && dir.lambda_max == 0.0) return detail::finish(probe, x, x0, y_true, before, Norm::L2, -1, true);
  auto out = detail::finish(probe, x, detail::displaced(x0, dir.eta_unit, budget.epsilon), y_true, before, Norm::L2);
  out.degenerate = dir.degenerate;
  return out;
}

/// x + eps * sign(grad CE), with sign(0) = 0.
inline AttackOutcome attack_fgsm(const Network<double>& net, const Tensor& x, int y_true, const AttackBudget& budget) {
  detail::require_epsilon(budget);
  detail::require_label(y_true, net, "label");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const int before = probe.label(x0);
  if (budget.epsilon == 0.0) return detail::finish(probe, x, x0, y_true, before, Norm::Linf);
  const auto g = probe.loss_gradient(x0, y_true);
  const auto s = detail::sign_vector(g);
  const bool zero = std::all_of(s.begin(), s.end(), [](double v) { return v == 0.0; });
  return detail::finish(probe, x, detail::displaced(x0, s, budget.epsilon), y_true, before, Norm::Linf, -1, zero);
}

/// x + eps * g / ||g||_2.
inline AttackOutcome attack_fgm(const Network<double>& net, const Tensor& x, int y_true, const AttackBudget& budget) {
  detail::require_epsilon(budget);
  detail::require_label(y_true, net, "label");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const int before = probe.label(x0);
  if (budget.epsilon == 0.0) return detail::finish(probe, x, x0, y_true, before, Norm::L2);
  const auto u = detail::unit_vector(probe.loss_gradient(x0, y_true));
  if (!u) return detail::finish(probe, x, x0, y_true, before, Norm::L2, -1, true);
  return detail::finish(probe, x, detail::displaced(x0, *u, budget.epsilon), y_true, before, Norm::L2);
}

/// One step down the target-class cross-entropy (linf: sign; l2:
/// normalized gradient). A negative target selects the least-likely class.
inline AttackOutcome attack_otcm(const Network<double>& net, const Tensor& x, int y_true, const AttackBudget& budget,
                                 int target = -1) {
  detail::require_epsilon(budget);
  detail::require_label(y_true, net, "label");
  if (budget.norm != Norm::Linf && budget.norm != Norm::L2) throw ConfigError("otcm supports linf and l2 budgets");
  if (target < 0) target = least_likely_class(net, x);
  detail::require_label(target, net, "target");
  if (target == y_true) throw DomainError("otcm target must differ from the true label");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const int before = probe.label(x0);
  if (budget.epsilon == 0.0) return detail::finish(probe, x, x0, y_true, before, budget.norm, target);
  const auto g = probe.loss_gradient(x0, target);
  std::vector<double> dir;
  if (budget.norm == Norm::Linf) {
    dir = detail::sign_vector(g);
  } else {
    const auto u = detail::unit_vector(g);
    if (!u) return detail::finish(probe, x, x0, y_true, before, budget.norm, target, true);
    dir = *u;
  }
  return detail::finish(probe, x, detail::displaced(x0, dir, -budget.epsilon), y_true, before, budget.norm, target);
}

namespace detail {

// Iterates x <- x + Proj_ball(clip(x + alpha * dir) - x0) from `start`,
// stopping once the label leaves y_true.
inline std::vector<double> iterate_ball(Probe& probe, std::span<const double> x0, std::vector<double> xt, int y_true,
                                        const AttackBudget& budget, bool* degenerate) {
  const double alpha = step_size(budget);
  const std::size_t d = x0.size();
  std::vector<double> eta(d);
  bool moved = false;
  for (std::size_t step = 0; step < budget.steps; ++step) {
    const auto g = probe.loss_gradient(xt, y_true);
    std::vector<double> dir(d, 0.0);
    if (budget.norm == Norm::Linf) {
      dir = sign_vector(g);
    } else if (budget.norm == Norm::L2) {
      if (auto u = unit_vector(g)) dir = *u;
    } else {
      // Steepest l1 ascent: the largest-|g| coordinate that can still move.
      std::size_t best = d;
      for (std::size_t i = 0; i < d; ++i) {
        const bool free = (g[i] > 0 && xt[i] < 1.0) || (g[i] < 0 && xt[i] > 0.0);
        if (free && (best == d || std::abs(g[i]) > std::abs(g[best]))) best = i;
      }
      if (best < d) dir[best] = sign_of(g[best]);
    }
    if (std::all_of(dir.begin(), dir.end(), [](double v) { return v == 0.0; })) break;
    moved = true;
    for (std::size_t i = 0; i < d; ++i) eta[i] = std::clamp(xt[i] + alpha * dir[i], 0.0, 1.0) - x0[i];
    project_to_ball(eta, budget.norm, budget.epsilon);
    for (std::size_t i = 0; i < d; ++i) xt[i] = x0[i] + eta[i];
    if (probe.label(xt) != y_true) break;
  }
  if (degenerate) *degenerate = !moved;
  return xt;
}

}  // namespace detail

/// Basic iterative method under an l1, l2 or linf budget. Stops early once
/// the label flips.
inline AttackOutcome attack_bim(const Network<double>& net, const Tensor& x, int y_true, const AttackBudget& budget) {
  detail::require_epsilon(budget);
  detail::require_label(y_true, net, "label");
  if (budget.norm == Norm::L0) throw ConfigError("bim supports l1, l2 and linf budgets");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const int before = probe.label(x0);
  if (budget.epsilon == 0.0 || budget.steps == 0) return detail::finish(probe, x, x0, y_true, before, budget.norm);
  bool degenerate = false;
  auto adv = detail::iterate_ball(probe, x0, x0, y_true, budget, &degenerate);
  return detail::finish(probe, x, std::move(adv), y_true, before, budget.norm, -1, degenerate);
}

/// linf BIM from a uniform random start in the eps-ball.
inline AttackOutcome attack_pgd(const Network<double>& net, const Tensor& x, int y_true, const AttackBudget& budget,
                                std::uint64_t seed) {
  detail::require_epsilon(budget);
  detail::require_label(y_true, net, "label");
  if (budget.norm != Norm::Linf) throw ConfigError("pgd uses a linf budget");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const int before = probe.label(x0);
  if (budget.epsilon == 0.0 || budget.steps == 0) return detail::finish(probe, x, x0, y_true, before, Norm::Linf);
  Rng rng(seed);
  std::vector<double> start(x0.size());
  for (std::size_t i = 0; i < start.size(); ++i) {
    start[i] = x0[i] + std::clamp(std::clamp(x0[i] + rng.uniform(-budget.epsilon, budget.epsilon), 0.0, 1.0) - x0[i],
                                  -budget.epsilon, budget.epsilon);
  }
  std::vector<double> adv = start;
  if (probe.label(start) == y_true) adv = detail::iterate_ball(probe, x0, start, y_true, budget, nullptr);
  return detail::finish(probe, x, std::move(adv), y_true, before, Norm::Linf);
}

/// Multiclass DeepFool on the logits: repeatedly step to the nearest
/// linearized decision boundary, then overshoot the total by (1 + overshoot).
inline AttackOutcome attack_deepfool(const Network<double>& net, const Tensor& x, int y_true,
                                     const DeepFoolConfig& config = {}) {
  detail::require_label(y_true, net, "label");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const std::size_t d = x0.size(), k = net.num_classes();
  const int before = probe.label(x0);
  if (before != y_true) return detail::finish(probe, x, x0, y_true, before, Norm::L2);

  std::vector<double> r_total(d, 0.0), xt = x0;
  const auto orig = static_cast<std::size_t>(before);
  bool crossed = false;
  for (std::size_t step = 0; step < config.max_steps && !crossed; ++step) {
    const InputJacobian jac = logit_jacobian(net, Tensor(x.shape(), xt));
    probe.queries += k;
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_w;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == orig) continue;
      std::vector<double> w(d);
      for (std::size_t i = 0; i < d; ++i) w[i] = jac.data[c * d + i] - jac.data[orig * d + i];
      const double wn = vector_norm(w, Norm::L2);
      if (!(wn > 0.0)) continue;
      const double dist = std::abs(jac.output[c] - jac.output[orig]) / wn;
      if (dist < best) {
        best = dist;
        for (double& v : w) v /= wn;
        best_w = std::move(w);
      }
    }
    if (best_w.empty()) return detail::finish(probe, x, x0, y_true, before, Norm::L2, -1, true);
    for (std::size_t i = 0; i < d; ++i) r_total[i] += (best + 1e-4) * best_w[i];
    for (std::size_t i = 0; i < d; ++i) xt[i] = std::clamp(x0[i] + (1.0 + config.overshoot) * r_total[i], 0.0, 1.0);
    crossed = probe.label(xt) != before;
  }
  return detail::finish(probe, x, std::move(xt), y_true, before, Norm::L2);
}

/// Targeted saliency-map attack: each round saturates the pixel pair with the
/// strongest combined push toward the target, until the target is reached
/// or `max_pixels` coordinates have been modified.
inline AttackOutcome attack_jsma(const Network<double>& net, const Tensor& x, int y_true, int target,
                                 const JsmaConfig& config = {}) {
  detail::require_label(y_true, net, "label");
  if (target < 0) target = least_likely_class(net, x);
  detail::require_label(target, net, "target");
  if (target == y_true) throw DomainError("jsma target must differ from the true label");
  if (config.theta == 0.0) throw ConfigError("jsma theta must be nonzero");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const std::size_t d = x0.size(), k = net.num_classes();
  const int before = probe.label(x0);
  const bool up = config.theta > 0;
  std::vector<double> xt = x0;
  std::vector<bool> modified(d, false), searchable(d);
  for (std::size_t i = 0; i < d; ++i) searchable[i] = up ? xt[i] < 1.0 : xt[i] > 0.0;
  std::size_t modified_count = 0;
  int current = before;

  while (current != target && modified_count + 2 <= config.max_pixels) {
    const InputJacobian jac = input_jacobian(net, Tensor(x.shape(), xt));
    probe.queries += k;
    std::vector<double> alpha(d), beta(d, 0.0);
    const auto t = static_cast<std::size_t>(target);
    for (std::size_t i = 0; i < d; ++i) {
      alpha[i] = jac.data[t * d + i];
      for (std::size_t c = 0; c < k; ++c)
        if (c != t) beta[i] += jac.data[c * d + i];
    }
    double best = 0.0;
    std::size_t bp = d, bq = d;
    for (std::size_t p = 0; p < d; ++p) {
      if (!searchable[p]) continue;
      for (std::size_t q = p + 1; q < d; ++q) {
        if (!searchable[q]) continue;
        const double a = alpha[p] + alpha[q], b = beta[p] + beta[q];
        const bool valid = up ? (a > 0 && b < 0) : (a < 0 && b > 0);
        if (!valid) continue;
        const double score = std::abs(a) * std::abs(b);
        if (score > best) {
          best = score;
          bp = p;
          bq = q;
        }
      }
    }
    if (bp == d) break;
    for (std::size_t i : {bp, bq}) {
      xt[i] = std::clamp(xt[i] + config.theta, 0.0, 1.0);
      if (!modified[i]) {
        modified[i] = true;
        ++modified_count;
      }
      if (up ? xt[i] >= 1.0 : xt[i] <= 0.0) searchable[i] = false;
    }
    current = probe.label(xt);
  }
  return detail::finish(probe, x, std::move(xt), y_true, before, Norm::L0, target);
}

/// Fixed-constant Carlini-Wagner l2 attack in tanh space, minimizing
/// ||eta||^2 + c * max(Z_y - max_{k != y} Z_k + kappa, 0) with Adam. Returns
/// the smallest successful iterate, or the last iterate on failure.
inline AttackOutcome attack_cw_l2(const Network<double>& net, const Tensor& x, int y_true, const CwConfig& config = {}) {
  detail::require_label(y_true, net, "label");
  if (config.c < 0 || config.lr <= 0) throw ConfigError("cw needs c >= 0 and lr > 0");
  detail::Probe probe(net);
  const auto x0 = detail::flat(net, x);
  const std::size_t d = x0.size();
  const int before = probe.label(x0);
  if (before != y_true || config.steps == 0) return detail::finish(probe, x, x0, y_true, before, Norm::L2);

  const auto y = static_cast<std::size_t>(y_true);
  std::vector<double> w(d), m(d, 0.0), v(d, 0.0), xt(d), grad(d);
  for (std::size_t i = 0; i < d; ++i) w[i] = std::atanh(std::clamp(2.0 * x0[i] - 1.0, -1.0 + 1e-6, 1.0 - 1e-6));
  std::optional<std::vector<double>> best;
  double best_norm = std::numeric_limits<double>::infinity();
  const double beta1 = 0.9, beta2 = 0.999;

  for (std::size_t step = 0; step <= config.steps; ++step) {
    for (std::size_t i = 0; i < d; ++i) xt[i] = (std::tanh(w[i]) + 1.0) / 2.0;
    std::size_t runner_up = 0;
    auto seed_fn = [&](const std::vector<double>& z) {
      runner_up = y == 0 ? 1 : 0;
      for (std::size_t c = 0; c < z.size(); ++c)
        if (c != y && z[c] > z[runner_up]) runner_up = c;
      std::vector<double> seed(z.size(), 0.0);
      if (z[y] - z[runner_up] + config.kappa > 0) {
        seed[y] = config.c;
        seed[runner_up] = -config.c;
      }
      return seed;
    };
    std::vector<double> z;
    const auto margin_grad = probe.logit_vjp(xt, seed_fn, &z);
    if (argmax<double>(detail::softmax_values(z)) != y_true) {
      const double n = perturbation_norm(x0, xt, Norm::L2);
      if (n < best_norm) {
        best_norm = n;
        best = xt;
      }
    }
    if (step == config.steps) break;
    const double t = static_cast<double>(step + 1);
    for (std::size_t i = 0; i < d; ++i) {
      const double th = std::tanh(w[i]);
      grad[i] = (2.0 * (xt[i] - x0[i]) + margin_grad[i]) * (1.0 - th * th) / 2.0;
      m[i] = beta1 * m[i] + (1 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1 - beta2) * grad[i] * grad[i];
      const double mh = m[i] / (1 - std::pow(beta1, t)), vh = v[i] / (1 - std::pow(beta2, t));
      w[i] -= config.lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  return detail::finish(probe, x, best ? *best : xt, y_true, before, Norm::L2);
}

inline const std::vector<std::string>& attack_names() {
  static const std::vector<std::string> names{"ossa", "fgsm",     "fgm",      "otcm", "bim_l1", "bim_l2",
                                              "bim_linf", "pgd", "deepfool", "jsma", "cw_l2"};
  return names;
}

/// Norm-minimizing attacks carry their found norm instead of a budget.
inline bool is_minimizing_attack(const std::string& name) {
  return name == "deepfool" || name == "jsma" || name == "cw_l2";
}

struct AttackConfig {
  std::string name = "ossa";
  Norm norm = Norm::L2;  // otcm only; the other attacks fix their norm
  double epsilon = 0.0;
  std::size_t steps = 10;
  double step_size = 0.0;
  std::uint64_t seed = 0;
  int target = -1;  // otcm / jsma; negative selects the least-likely class
  DeepFoolConfig deepfool{};
  JsmaConfig jsma{};
  CwConfig cw{};
};

/// Norm in which an attack's perturbation is measured.
inline Norm attack_norm(const AttackConfig& c) {
  if (c.name == "fgsm" || c.name == "pgd" || c.name == "bim_linf") return Norm::Linf;
  if (c.name == "bim_l1") return Norm::L1;
  if (c.name == "jsma") return Norm::L0;
  if (c.name == "otcm") return c.norm;
  return Norm::L2;
}

inline void require_attack_name(const std::string& name) {
  const auto& names = attack_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw ConfigError("unknown attack '" + name + "' (valid: " + list + ")");
  }
}

/// Runs the named attack on one sample. Seeded attacks use seed ^ sample_index.
inline AttackOutcome run_attack(const Network<double>& net, const Tensor& x, int y_true, const AttackConfig& c,
                                std::size_t sample_index = 0) {
  require_attack_name(c.name);
  const AttackBudget budget{attack_norm(c), c.epsilon, c.steps, c.step_size};
  if (c.name == "ossa") return attack_ossa(net, x, y_true, budget);
  if (c.name == "fgsm") return attack_fgsm(net, x, y_true, budget);
  if (c.name == "fgm") return attack_fgm(net, x, y_true, budget);
  if (c.name == "otcm") return attack_otcm(net, x, y_true, budget, c.target);
  if (c.name == "pgd") return attack_pgd(net, x, y_true, budget, c.seed ^ static_cast<std::uint64_t>(sample_index));
  if (c.name == "deepfool") return attack_deepfool(net, x, y_true, c.deepfool);
  if (c.name == "jsma") return attack_jsma(net, x, y_true, c.target, c.jsma);
  if (c.name == "cw_l2") return attack_cw_l2(net, x, y_true, c.cw);
  return attack_bim(net, x, y_true, budget);
}

}  // namespace fimguard
