#pragma once

// Evaluation harness: fooling ratios and curves over a budget grid, mean
// adversarial distance (bisection on the budget for budgeted attacks),
// cross-model transfer, and softmax snapshots. Every aggregate is computed
// from per-sample records that are kept alongside it.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimguard/attacks.hpp"
#include "fimguard/data.hpp"
#include "fimguard/errors.hpp"
#include "fimguard/models.hpp"
#include "fimguard/parallel.hpp"

namespace fimguard {

inline constexpr std::size_t kBisectionSteps = 12;

struct NamedModel {
  std::string id;
  const Network<double>* net = nullptr;
};

/// One attacked sample. `label_after` is recomputed by the harness from
/// x_adv rather than taken from the attack.
struct SampleRecord {
  std::string model;
  std::string attack;
  std::string mode;  // "budget", "bisect", "minimize" or "transfer:<dst>"
  double epsilon = 0.0;
  std::size_t sample = 0;
  int label = -1;
  int label_before = -1;
  int label_after = -1;
  bool success = false;
  bool fooled = false;
  double norm = 0.0;
  std::size_t queries = 0;
  bool degenerate = false;
};

struct CurvePoint {
  double epsilon = 0.0;
  double ratio = 0.0;
  std::size_t count = 0;
};

struct FoolingCurve {
  std::string attack;
  std::string model;
  std::vector<CurvePoint> points;
  bool monotone = true;  // recorded, not enforced
};

struct DistanceResult {
  std::string attack;
  std::string model;
  double mean = 0.0;
  std::size_t successes = 0;
  std::size_t count = 0;
};

struct TransferResult {
  std::string attack;
  std::string source;
  std::string target;
  double accuracy = 0.0;             // target accuracy on every eligible sample's example
  double accuracy_on_successful = 0.0;  // restricted to examples that fool the source; NaN if none
  std::size_t count = 0;
  std::size_t source_successes = 0;
};

struct Snapshot {
  std::vector<double> probabilities;
  int predicted = -1;
  int true_label = -1;

  nlohmann::json to_json() const {
    return {{"probabilities", probabilities}, {"predicted", predicted}, {"true_label", true_label}};
  }
};

/// Indices (in dataset order) that every model classifies correctly, capped
/// at `limit` (0 keeps all).
inline std::vector<std::size_t> eligible_indices(const std::vector<const Network<double>*>& nets,
                                                 const LabeledDataset& data, std::size_t limit = 0) {
  std::vector<bool> ok(data.size(), true);
  for (const auto* net : nets) {
    const auto predicted = classify(*net, data.images);
    for (std::size_t i = 0; i < data.size(); ++i) ok[i] = ok[i] && predicted[i] == data.labels[i];
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size() && (limit == 0 || out.size() < limit); ++i)
    if (ok[i]) out.push_back(i);
  return out;
}

namespace detail {

inline int recheck_label(const Network<double>& net, const Tensor& x_adv) {
  Shape s{1};
  s.insert(s.end(), net.input_shape().begin(), net.input_shape().end());
  return classify(net, x_adv.reshaped(s))[0];
}

inline Tensor sample_input(const LabeledDataset& data, std::size_t i) {
  return data.sample(i).reshaped(data.sample_shape());
}

inline SampleRecord record_of(const NamedModel& model, const AttackConfig& config, std::string mode,
                              std::size_t sample, int label, const AttackOutcome& out) {
  SampleRecord r;
  r.model = model.id;
  r.attack = config.name;
  r.mode = std::move(mode);
  r.epsilon = config.epsilon;
  r.sample = sample;
  r.label = label;
  r.label_before = out.label_before;
  r.label_after = recheck_label(*model.net, out.x_adv);
  r.success = out.success;
  r.fooled = r.label_after != label;
  r.norm = out.achieved_norm;
  r.queries = out.queries;
  r.degenerate = out.degenerate;
  return r;
}

inline void require_nonempty(const std::vector<std::size_t>& indices, const std::string& what) {
  if (indices.empty()) throw EmptySetError(what + ": no eligible samples");
}

}  // namespace detail

struct FoolingResult {
  double ratio = 0.0;
  std::size_t count = 0;
  std::vector<SampleRecord> records;
};

/// Fraction of the given (pre-filtered, correctly classified) samples that
/// the attack at `config.epsilon` leaves misclassified.
inline FoolingResult fooling_ratio(const NamedModel& model, const AttackConfig& config, const LabeledDataset& data,
                                   const std::vector<std::size_t>& indices, std::size_t threads = 1) {
  detail::require_nonempty(indices, "fooling ratio");
  require_attack_name(config.name);
  FoolingResult res;
  res.records = parallel_map<SampleRecord>(indices.size(), threads, [&](std::size_t j) {
    const std::size_t i = indices[j];
    const auto out = run_attack(*model.net, detail::sample_input(data, i), data.labels[i], config, i);
    return detail::record_of(model, config, "budget", i, data.labels[i], out);
  });
  std::size_t fooled = 0;
  for (const auto& r : res.records) fooled += r.fooled;
  res.count = indices.size();
  res.ratio = static_cast<double>(fooled) / static_cast<double>(res.count);
  return res;
}

inline FoolingCurve fooling_curve(const NamedModel& model, const AttackConfig& config,
                                  const std::vector<double>& grid, const LabeledDataset& data,
                                  const std::vector<std::size_t>& indices, std::size_t threads = 1,
                                  std::vector<SampleRecord>* records = nullptr) {
  if (grid.empty()) throw ConfigError("empty epsilon grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ConfigError("epsilon grid must be strictly increasing");
  FoolingCurve curve{config.name, model.id, {}, true};
  for (double eps : grid) {
    AttackConfig c = config;
    c.epsilon = eps;
    auto res = fooling_ratio(model, c, data, indices, threads);
    if (!curve.points.empty() && res.ratio < curve.points.back().ratio) curve.monotone = false;
    curve.points.push_back({eps, res.ratio, res.count});
    if (records) records->insert(records->end(), res.records.begin(), res.records.end());
  }
  return curve;
}

/// Smallest fooling example for one sample: the minimizing attacks run once;
/// budgeted attacks bisect epsilon on [0, eps_max] for kBisectionSteps
/// steps. `out.success` is false when even eps_max does not fool the model,
/// in which case `out` is the eps_max attempt.
inline AttackOutcome minimal_adversarial(const Network<double>& net, const Tensor& x, int label,
                                         const AttackConfig& config, double eps_max, std::size_t sample_index,
                                         double* found_epsilon = nullptr) {
  auto fools = [&](const AttackOutcome& o) { return detail::recheck_label(net, o.x_adv) != label; };
  if (is_minimizing_attack(config.name)) {
    auto out = run_attack(net, x, label, config, sample_index);
    out.success = out.success && fools(out);
    if (found_epsilon) *found_epsilon = out.achieved_norm;
    return out;
  }
  AttackConfig c = config;
  c.epsilon = eps_max;
  AttackOutcome best = run_attack(net, x, label, c, sample_index);
  if (!fools(best)) {
    best.success = false;
    if (found_epsilon) *found_epsilon = eps_max;
    return best;
  }
  double lo = 0.0, hi = eps_max;
  for (std::size_t step = 0; step < kBisectionSteps; ++step) {
    c.epsilon = 0.5 * (lo + hi);
    AttackOutcome trial = run_attack(net, x, label, c, sample_index);
    if (fools(trial)) {
      hi = c.epsilon;
      best = std::move(trial);
    } else {
      lo = c.epsilon;
    }
  }
  best.success = true;
  if (found_epsilon) *found_epsilon = hi;
  return best;
}

/// Mean achieved norm over the samples the attack manages to fool.
inline DistanceResult mean_adv_distance(const NamedModel& model, const AttackConfig& config,
                                        const LabeledDataset& data, const std::vector<std::size_t>& indices,
                                        double eps_max, std::size_t threads = 1,
                                        std::vector<SampleRecord>* records = nullptr) {
  detail::require_nonempty(indices, "mean distance");
  require_attack_name(config.name);
  const std::string mode = is_minimizing_attack(config.name) ? "minimize" : "bisect";
  auto recs = parallel_map<SampleRecord>(indices.size(), threads, [&](std::size_t j) {
    const std::size_t i = indices[j];
    double eps = 0.0;
    const auto out = minimal_adversarial(*model.net, detail::sample_input(data, i), data.labels[i], config, eps_max, i, &eps);
    AttackConfig c = config;
    c.epsilon = eps;
    auto r = detail::record_of(model, c, mode, i, data.labels[i], out);
    r.success = out.success;
    return r;
  });
  DistanceResult res{config.name, model.id, 0.0, 0, indices.size()};
  double total = 0.0;
  for (const auto& r : recs) {
    if (!(r.success && r.fooled)) continue;
    total += r.norm;
    ++res.successes;
  }
  if (records) records->insert(records->end(), recs.begin(), recs.end());
  if (res.successes == 0) throw EmptySetError("mean distance: the attack fooled no sample");
  res.mean = total / static_cast<double>(res.successes);
  return res;
}

struct TransferOptions {
  bool minimal = true;   // bisected examples; otherwise the attack at config.epsilon
  double eps_max = 1.0;  // bisection range when minimal
};

/// Accuracy of `target` on examples crafted against `source`, over samples
/// both classify correctly. Each eligible sample contributes its crafted
/// example whether or not it fooled the source.
inline TransferResult cross_model_transfer(const NamedModel& source, const NamedModel& target,
                                           const AttackConfig& config, const LabeledDataset& data,
                                           const std::vector<std::size_t>& indices, const TransferOptions& options = {},
                                           std::size_t threads = 1, std::vector<SampleRecord>* records = nullptr) {
  detail::require_nonempty(indices, "transfer");
  require_attack_name(config.name);
  if (source.net->num_classes() != target.net->num_classes()) {
    throw ConfigError("transfer needs models with the same class count");
  }
  struct Item {
    SampleRecord record;
    bool target_correct = false;
  };
  auto items = parallel_map<Item>(indices.size(), threads, [&](std::size_t j) {
    const std::size_t i = indices[j];
    const Tensor x = detail::sample_input(data, i);
    AttackOutcome out;
    AttackConfig c = config;
    if (options.minimal) {
      double eps = 0.0;
      out = minimal_adversarial(*source.net, x, data.labels[i], config, options.eps_max, i, &eps);
      c.epsilon = eps;
    } else {
      out = run_attack(*source.net, x, data.labels[i], config, i);
    }
    Item item;
    item.record = detail::record_of(source, c, "transfer:" + target.id, i, data.labels[i], out);
    item.target_correct = detail::recheck_label(*target.net, out.x_adv) == data.labels[i];
    return item;
  });
  TransferResult res{config.name, source.id, target.id, 0.0, std::numeric_limits<double>::quiet_NaN(),
                     indices.size(), 0};
  std::size_t correct = 0, correct_on_successful = 0;
  for (const auto& it : items) {
    correct += it.target_correct;
    if (it.record.fooled) {
      ++res.source_successes;
      correct_on_successful += it.target_correct;
    }
    if (records) records->push_back(it.record);
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(res.count);
  if (res.source_successes > 0) {
    res.accuracy_on_successful = static_cast<double>(correct_on_successful) / static_cast<double>(res.source_successes);
  }
  return res;
}

inline Snapshot label_distribution_snapshot(const Network<double>& net, const Tensor& x, int true_label) {
  Shape s{1};
  s.insert(s.end(), net.input_shape().begin(), net.input_shape().end());
  const auto p = predict_proba(net, x.reshaped(s));
  Snapshot snap;
  snap.probabilities.assign(p.values().begin(), p.values().end());
  snap.predicted = argmax<double>(snap.probabilities);
  snap.true_label = true_label;
  return snap;
}

}  // namespace fimguard
