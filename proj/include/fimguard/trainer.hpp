#pragma once

// Mini-batch SGD with momentum for three objectives: plain cross-entropy,
// cross-entropy plus mu * sum_i 1/p_i (the Fisher-trace penalty), and
// cross-entropy against label-smoothed targets.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimguard/autodiff.hpp"
#include "fimguard/data.hpp"
#include "fimguard/errors.hpp"
#include "fimguard/models.hpp"

namespace fimguard {

enum class Regime { Baseline, Fim, Lsr };
enum class Precision { Double, Single };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::Baseline: return "baseline";
    case Regime::Fim: return "fim";
    case Regime::Lsr: return "lsr";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "baseline") return Regime::Baseline;
  if (s == "fim") return Regime::Fim;
  if (s == "lsr") return Regime::Lsr;
  throw ConfigError("unknown regime '" + s + "' (expected baseline, fim or lsr)");
}

inline std::string to_string(Precision p) { return p == Precision::Double ? "double" : "single"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "double") return Precision::Double;
  if (s == "single") return Precision::Single;
  throw ConfigError("unknown precision '" + s + "' (expected double or single)");
}

struct TrainConfig {
  Regime regime = Regime::Baseline;
  double mu = 0.0;     // fim regime
  double alpha = 0.1;  // lsr regime
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double decay_fraction = 2.0 / 3.0;  // lr drops at this fraction of the epochs
  double decay_factor = 0.1;
  double grad_clip = 5.0;  // global l2 norm; 0 disables
  std::uint64_t seed = 0;
  Precision precision = Precision::Double;

  void validate() const {
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("train.mu must be finite and >= 0");
    if (regime == Regime::Lsr && !(alpha > 0.0 && alpha < 1.0)) throw ConfigError("train.alpha must lie in (0, 1)");
    if (epochs == 0) throw ConfigError("train.epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train.batch must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(decay_fraction >= 0.0 && decay_fraction <= 1.0)) throw ConfigError("train.decay_fraction must lie in [0, 1]");
    if (!(decay_factor > 0.0)) throw ConfigError("train.decay_factor must be > 0");
    if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be >= 0");
  }

  /// Epoch index from which the decayed rate applies.
  std::size_t decay_epoch() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(decay_fraction * static_cast<double>(epochs))));
  }

  double learning_rate(std::size_t epoch) const { return epoch >= decay_epoch() ? lr * decay_factor : lr; }

  nlohmann::json to_json() const {
    return {{"regime", to_string(regime)}, {"mu", mu},
            {"alpha", alpha},              {"epochs", epochs},
            {"batch", batch_size},         {"lr", lr},
            {"momentum", momentum},        {"decay_fraction", decay_fraction},
            {"decay_factor", decay_factor}, {"grad_clip", grad_clip},
            {"seed", seed},                {"precision", to_string(precision)}};
  }
};

/// Loss pieces: total = ce + mu * reg (reg is the unscaled batch-mean trace).
template <class T>
struct LossParts {
  Var<T> total;
  Var<T> ce;
  Var<T> reg;
};

template <class T>
BasicTensor<T> one_hot(const std::vector<int>& labels, std::size_t num_classes) {
  BasicTensor<T> t(Shape{labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DomainError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    t[i * num_classes + static_cast<std::size_t>(labels[i])] = T{1};
  }
  return t;
}

/// y (1 - alpha) + alpha / K for a one-hot (or any) target vector.
inline std::vector<double> lsr_labels(std::span<const double> y, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw DomainError("label smoothing alpha must lie in [0, 1)");
  std::vector<double> out(y.size());
  const double k = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] * (1.0 - alpha) + alpha / k;
  return out;
}

/// Batch mean of -sum_k t_k log p_k against arbitrary target rows t.
template <class T>
Var<T> soft_cross_entropy(Var<T> p, const BasicTensor<T>& targets) {
  if (p.shape() != targets.shape()) throw ShapeError("targets do not match probability batch shape");
  const T batch = static_cast<T>(p.shape()[0]);
  return scale(sum(multiply(p.tape()->constant(targets), safe_log(p))), T{-1} / batch);
}

/// Batch mean of CE(y, p) + mu * sum_i 1/clamp(p_i). With mu = 0 the penalty
/// is not recorded, so the graph is exactly that of plain cross-entropy.
template <class T>
LossParts<T> regularized_loss(Var<T> p, const std::vector<int>& labels, double mu) {
  if (p.shape().size() != 2 || p.shape()[0] != labels.size()) throw ShapeError("regularized_loss: batch mismatch");
  const T batch = static_cast<T>(labels.size());
  LossParts<T> parts;
  parts.ce = soft_cross_entropy(p, one_hot<T>(labels, p.shape()[1]));
  parts.reg = scale(sum(safe_reciprocal(p)), T{1} / batch);
  parts.total = mu == 0.0 ? parts.ce : add(parts.ce, scale(parts.reg, static_cast<T>(mu)));
  return parts;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double reg = 0.0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double mean_maxp = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,loss,ce,reg,test_acc,mean_maxp\n";
    out.precision(17);
    for (const auto& e : epochs) {
      out << e.epoch << ',' << e.loss << ',' << e.ce << ',' << e.reg << ',' << e.test_acc << ',' << e.mean_maxp
          << '\n';
    }
  }
};

template <class T>
double evaluate_accuracy(const Network<T>& net, const LabeledDataset& data) {
  if (data.size() == 0) throw EmptySetError("accuracy of an empty dataset");
  const auto predicted = classify(net, data.images.template cast<T>());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Average over samples of the largest softmax probability.
template <class T>
double mean_max_probability(const Network<T>& net, const LabeledDataset& data) {
  if (data.size() == 0) throw EmptySetError("max probability of an empty dataset");
  const auto p = predict_proba(net, data.images.template cast<T>());
  const std::size_t k = net.num_classes();
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = p.values().subspan(i * k, k);
    total += static_cast<double>(*std::max_element(row.begin(), row.end()));
  }
  return total / static_cast<double>(data.size());
}

struct TrainResult {
  Network<double> network;
  TrainLog log;
};

namespace detail {

template <class T>
void train_in_place(Network<T>& net, const LabeledDataset& data, const TrainConfig& config,
                    const LabeledDataset* test, TrainLog& log) {
  const std::size_t k = net.num_classes();
  std::vector<BasicTensor<T>> velocity;
  for (const auto& p : net.parameters()) velocity.emplace_back(p.value.shape());
  const BatchPlan base{std::min(config.batch_size, data.size()), config.seed, 0};

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    BatchPlan plan = base;
    plan.epoch = epoch;
    const double lr = config.learning_rate(epoch);
    double loss_sum = 0.0, ce_sum = 0.0, reg_sum = 0.0;
    const auto schedule = batch_indices(data.size(), plan);
    for (std::size_t b = 0; b < schedule.size(); ++b) {
      const LabeledDataset part = data.subset(schedule[b]);
      Tape<T> tape;
      const auto bound = net.bind(tape, true);
      std::vector<BatchStatistics<T>> stats;
      const auto x = tape.constant(part.images.template cast<T>());
      const auto p = softmax(net.logits(bound, x, ForwardMode::Train, &stats));
      LossParts<T> parts;
      if (config.regime == Regime::Lsr) {
        const BasicTensor<T> hard = one_hot<T>(part.labels, k);
        BasicTensor<T> soft(hard.shape());
        for (std::size_t i = 0; i < hard.size(); ++i) {
          soft[i] = static_cast<T>(static_cast<double>(hard[i]) * (1.0 - config.alpha) + config.alpha / static_cast<double>(k));
        }
        parts.ce = soft_cross_entropy(p, soft);
        parts.reg = scale(sum(safe_reciprocal(p)), T{1} / static_cast<T>(part.size()));
        parts.total = parts.ce;
      } else {
        parts = regularized_loss(p, part.labels, config.regime == Regime::Fim ? config.mu : 0.0);
      }
      const double total = static_cast<double>(parts.total.value()[0]);
      if (!std::isfinite(total)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b));
      }
      const double n = static_cast<double>(part.size());
      loss_sum += total * n;
      ce_sum += static_cast<double>(parts.ce.value()[0]) * n;
      reg_sum += static_cast<double>(parts.reg.value()[0]) * n;

      tape.backward(parts.total);
      std::vector<BasicTensor<T>> grads;
      double squared = 0.0;
      for (std::size_t i = 0; i < bound.size(); ++i) {
        grads.push_back(tape.grad(bound[i]));
        for (T g : grads.back().values()) squared += static_cast<double>(g) * static_cast<double>(g);
      }
      if (!std::isfinite(squared)) {
        throw DivergenceError("training diverged: non-finite gradient at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(b));
      }
      const double norm = std::sqrt(squared);
      const double clip = config.grad_clip > 0.0 && norm > config.grad_clip ? config.grad_clip / norm : 1.0;
      auto& params = net.parameters();
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        auto& v = velocity[i];
        auto& w = params[i].value;
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = static_cast<T>(config.momentum * static_cast<double>(v[j]) + clip * static_cast<double>(g[j]));
          w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * static_cast<double>(v[j]));
        }
      }
      net.update_running_statistics(stats);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const double count = static_cast<double>(data.size());
    rec.loss = loss_sum / count;
    rec.ce = ce_sum / count;
    rec.reg = reg_sum / count;
    const LabeledDataset& probe = test ? *test : data;
    if (test) rec.test_acc = evaluate_accuracy(net, *test);
    rec.mean_maxp = mean_max_probability(net, probe);
    log.epochs.push_back(rec);
  }
}

}  // namespace detail

/// Trains `net` (weights are copied, not modified) on `data`. The test set,
/// when given, feeds the per-epoch accuracy and max-probability columns.
/// Throws DivergenceError naming the epoch and batch if the loss blows up.
inline TrainResult train(const Network<double>& net, const LabeledDataset& data, const TrainConfig& config,
                         const LabeledDataset* test = nullptr) {
  config.validate();
  if (data.size() == 0) throw EmptySetError("training set is empty");
  TrainResult result;
  if (config.precision == Precision::Single) {
    Network<float> working = net.cast<float>();
    detail::train_in_place(working, data, config, test, result.log);
    result.network = working.cast<double>();
  } else {
    result.network = net;
    detail::train_in_place(result.network, data, config, test, result.log);
  }
  return result;
}

}  // namespace fimguard
