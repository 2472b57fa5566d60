#pragma once

// The four subcommands. Each takes a resolved config and writes only under
// its output directory.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimguard/attacks.hpp"
#include "fimguard/checkpoint.hpp"
#include "fimguard/cli/config.hpp"
#include "fimguard/data.hpp"
#include "fimguard/errors.hpp"
#include "fimguard/fim.hpp"
#include "fimguard/linalg.hpp"
#include "fimguard/report.hpp"
#include "fimguard/robustness.hpp"
#include "fimguard/trainer.hpp"

namespace fimguard::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

struct Context {
  json config;
  std::size_t threads = 1;
  std::ostream* log = &std::cerr;
};

/// Maps an exception to its exit-code class.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kUsage;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericError;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const ConsistencyError*>(&e) || dynamic_cast<const CheckpointError*>(&e) ||
      dynamic_cast<const EmptySetError*>(&e) || dynamic_cast<const ShapeError*>(&e)) {
    return kDataError;
  }
  if (dynamic_cast<const DomainError*>(&e)) return kNumericError;
  return kUsage;
}

namespace detail {

inline std::filesystem::path output_dir(const Context& ctx) {
  return ctx.config.at("output").at("dir").get<std::string>();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline void write_resolved(const Context& ctx, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "resolved-config.json", ctx.config.dump(2) + "\n");
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

struct LoadedModel {
  std::string id;
  std::string hash;
  std::filesystem::path path;
  Network<double> net;
};

// Models are named by file stem, or by parent/stem when stems collide.
inline std::vector<LoadedModel> load_models(const std::vector<std::filesystem::path>& paths) {
  bool collide = false;
  for (std::size_t i = 0; i < paths.size(); ++i)
    for (std::size_t j = 0; j < i; ++j) collide = collide || paths[i].stem() == paths[j].stem();
  std::vector<LoadedModel> out;
  for (const auto& p : paths) {
    auto contents = read_checkpoint(p);
    std::string id = collide ? p.parent_path().filename().string() + "/" + p.stem().string() : p.stem().string();
    for (const auto& m : out)
      if (m.id == id) id += "#" + std::to_string(out.size());
    out.push_back({id, contents.hash, p, std::move(contents.network)});
  }
  return out;
}

inline void require_compatible(const Network<double>& net, const LabeledDataset& data, const std::string& what) {
  if (net.input_shape() != data.sample_shape() || net.num_classes() != data.num_classes) {
    throw CheckpointError(what + " expects input " + shape_string(net.input_shape()) + " and " +
                          std::to_string(net.num_classes()) + " classes, data provides " +
                          shape_string(data.sample_shape()) + " and " + std::to_string(data.num_classes));
  }
}

}  // namespace detail

/// Trains one model; writes model.ckpt, trainlog.csv and resolved-config.json.
inline int cmd_train(const Context& ctx) {
  validate(ctx.config);
  const TrainConfig tc = train_config(ctx.config);
  const Architecture arch = architecture(ctx.config);
  const Splits data = load_splits(ctx.config);
  const auto net = build_network<double>(arch, ctx.config.at("model").at("seed").get<std::uint64_t>());
  *ctx.log << "training " << arch.kind << " on " << data.train.size() << " samples, regime " << to_string(tc.regime)
           << " mu " << tc.mu << "\n";
  const TrainResult result = train(net, data.train, tc, &data.test);
  for (const auto& e : result.log.epochs) {
    *ctx.log << "epoch " << e.epoch << " loss " << e.loss << " ce " << e.ce << " reg " << e.reg << " test_acc "
             << e.test_acc << " mean_maxp " << e.mean_maxp << "\n";
  }
  const auto dir = detail::output_dir(ctx);
  detail::write_resolved(ctx, dir);
  json echo = tc.to_json();
  echo["model_seed"] = ctx.config.at("model").at("seed");
  save_checkpoint(result.network, dir / "model.ckpt", echo);
  result.log.write_csv(dir / "trainlog.csv");
  *ctx.log << "wrote " << (dir / "model.ckpt").string() << " sha256 " << checkpoint_hash(result.network) << "\n";
  return kOk;
}

/// Runs one attack over the first eval.samples correctly classified test
/// samples; writes per_sample.csv and optionally the adversarial images.
inline int cmd_attack(const Context& ctx, const std::filesystem::path& checkpoint, const std::string& attack_name,
                      std::optional<double> epsilon) {
  validate(ctx.config);
  require_attack_name(attack_name);
  json entry = default_attack_entry();
  for (const auto& a : ctx.config.at("attacks"))
    if (a.at("name") == attack_name) entry = a;
  entry["name"] = attack_name;
  AttackConfig config = attack_config(entry);
  if (epsilon) config.epsilon = *epsilon;

  const auto model = detail::load_models({checkpoint}).front();
  const LabeledDataset test = load_test_split(ctx.config);
  detail::require_compatible(model.net, test, checkpoint.string());
  const auto indices =
      eligible_indices({&model.net}, test, ctx.config.at("eval").at("samples").get<std::size_t>());
  const auto result = fooling_ratio({model.id, &model.net}, config, test, indices, ctx.threads);

  const auto dir = detail::output_dir(ctx);
  detail::write_resolved(ctx, dir);
  write_per_sample_csv(dir / "per_sample.csv", result.records);
  if (ctx.config.at("output").at("dump_images").get<bool>()) {
    LabeledDataset adv;
    const Shape sample = test.sample_shape();
    Shape shape{indices.size()};
    shape.insert(shape.end(), sample.begin(), sample.end());
    adv.images = Tensor(shape);
    adv.num_classes = test.num_classes;
    const std::size_t per = test.sample_size();
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const auto out = run_attack(model.net, test.sample(indices[j]).reshaped(test.sample_shape()),
                                  test.labels[indices[j]], config, indices[j]);
      std::copy(out.x_adv.values().begin(), out.x_adv.values().end(), adv.images.data() + j * per);
      adv.labels.push_back(test.labels[indices[j]]);
    }
    write_idx_images(dir / "adv-images-idx3-ubyte", adv.images);
    write_idx_labels(dir / "adv-labels-idx1-ubyte", adv.labels);
  }
  *ctx.log << attack_name << " eps " << config.epsilon << ": fooling ratio " << result.ratio << " over "
           << result.count << " samples\n";
  return kOk;
}

/// Builds a robustness report over one or more checkpoints.
inline int cmd_eval(const Context& ctx, const std::vector<std::filesystem::path>& checkpoints) {
  validate(ctx.config);
  if (checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint");
  const auto models = detail::load_models(checkpoints);
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (models[i].net.num_classes() != models[0].net.num_classes()) {
      throw ConfigError("checkpoints disagree on the class count");
    }
  }
  const LabeledDataset test = load_test_split(ctx.config);
  std::vector<const Network<double>*> nets;
  for (const auto& m : models) {
    detail::require_compatible(m.net, test, m.path.string());
    nets.push_back(&m.net);
  }
  const json& ev = ctx.config.at("eval");
  const auto eligible = eligible_indices(nets, test);
  if (eligible.empty()) throw EmptySetError("no test sample is classified correctly by every model");
  auto head = [&](std::size_t n) {
    return std::vector<std::size_t>(eligible.begin(), eligible.begin() + static_cast<std::ptrdiff_t>(std::min(n, eligible.size())));
  };
  const auto modes = ev.at("modes").get<std::vector<std::string>>();
  auto wants = [&](const char* m) { return std::find(modes.begin(), modes.end(), m) != modes.end(); };

  RobustnessReport report;
  report.metadata["generated_at"] = detail::utc_now();
  report.metadata["config"] = ctx.config;
  report.metadata["eligible"] = eligible.size();
  for (const auto& m : models) {
    report.metadata["checkpoints"].push_back({{"id", m.id}, {"path", m.path.string()}, {"sha256", m.hash}});
  }

  for (const auto& entry : ctx.config.at("attacks")) {
    const AttackConfig config = attack_config(entry);
    for (const auto& m : models) {
      const NamedModel named{m.id, &m.net};
      if (wants("curves") && !is_minimizing_attack(config.name)) {
        report.curves.push_back(fooling_curve(named, config, attack_grid(ctx.config, entry), test,
                                              head(ev.at("samples").get<std::size_t>()), ctx.threads, &report.records));
      }
      if (wants("distances")) {
        try {
          report.distances.push_back(mean_adv_distance(named, config, test,
                                                       head(ev.at("distance_samples").get<std::size_t>()),
                                                       bisection_limit(ctx.config, entry), ctx.threads, &report.records));
        } catch (const EmptySetError& e) {
          *ctx.log << "warning: " << config.name << " on " << m.id << ": " << e.what() << "\n";
        }
      }
    }
    if (wants("transfer") && models.size() >= 2) {
      const TransferOptions opts{true, bisection_limit(ctx.config, entry)};
      for (std::size_t a = 0; a < models.size(); ++a)
        for (std::size_t b = 0; b < models.size(); ++b) {
          if (a == b) continue;
          report.transfers.push_back(cross_model_transfer({models[a].id, &models[a].net}, {models[b].id, &models[b].net},
                                                          config, test, head(ev.at("transfer_samples").get<std::size_t>()),
                                                          opts, ctx.threads, &report.records));
        }
    } else if (wants("transfer")) {
      *ctx.log << "warning: transfer mode needs two checkpoints; skipped\n";
    }
  }
  if (wants("snapshots")) {
    for (std::size_t i : head(ev.at("snapshots").get<std::size_t>()))
      for (const auto& m : models) {
        auto snap = label_distribution_snapshot(m.net, test.sample(i).reshaped(test.sample_shape()), test.labels[i]);
        report.snapshots.push_back(snap);
      }
  }
  const auto dir = detail::output_dir(ctx);
  detail::write_resolved(ctx, dir);
  report.write(dir);
  for (const auto& c : report.curves) {
    *ctx.log << "curve " << c.attack << " / " << c.model << ":";
    for (const auto& p : c.points) *ctx.log << " (" << p.epsilon << ", " << p.ratio << ")";
    *ctx.log << (c.monotone ? "" : "  [not monotone]") << "\n";
  }
  for (const auto& d : report.distances)
    *ctx.log << "distance " << d.attack << " / " << d.model << ": " << d.mean << " (" << d.successes << "/" << d.count
             << ")\n";
  for (const auto& t : report.transfers)
    *ctx.log << "transfer " << t.attack << " " << t.source << " -> " << t.target << ": accuracy " << t.accuracy
             << "\n";
  return kOk;
}

struct VerifyRow {
  std::string check;
  std::size_t sample = 0;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = true;
  bool warning = false;
  std::string note;
};

/// Fast invariant checks on a checkpoint: output trace identity, Jacobian
/// column sums, and OSSA self-consistency on `samples` inputs.
inline std::vector<VerifyRow> verify_checkpoint(const Network<double>& net, const std::vector<Tensor>& inputs) {
  std::vector<VerifyRow> rows;
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    const InputJacobian jac = input_jacobian(net, inputs[s]);
    const OutputFim g = output_fim(jac.output);
    const auto eig = jacobi_eigen_symmetric(g.dense());
    double eig_sum = 0.0;
    for (double v : eig.values) eig_sum += v;
    const double trace = g.trace();
    const double trace_err = std::abs(eig_sum - trace) / trace;
    rows.push_back({"trace-identity", s, trace_err, 1e-9, trace_err <= 1e-9, false, ""});

    double worst = 0.0;
    for (std::size_t c = 0; c < jac.cols; ++c) {
      double col = 0.0;
      for (std::size_t r = 0; r < jac.rows; ++r) col += jac.data[r * jac.cols + c];
      worst = std::max(worst, std::abs(col));
    }
    rows.push_back({"jacobian-column-sum", s, worst, 1e-7, worst <= 1e-7, false, ""});

    const SpectralResult dir = ossa_direction(net, inputs[s], argmax<double>(jac.output));
    if (dir.degenerate && dir.lambda_max == 0.0) {
      rows.push_back({"ossa-self-consistency", s, 0.0, 1e-6, true, true, "zero Jacobian (saturated softmax)"});
      continue;
    }
    const double q = fim_quadratic(jac, dir.eta_unit);
    const double err = std::abs(q - dir.lambda_max) / std::max(dir.lambda_max, 1e-300);
    const bool ok = err <= 1e-6;
    rows.push_back({"ossa-self-consistency", s, err, 1e-6, ok, dir.degenerate,
                    dir.degenerate ? "loss probe did not increase" : ""});
  }
  return rows;
}

inline int cmd_verify(const Context& ctx, const std::filesystem::path& checkpoint, std::size_t samples = 10) {
  const auto contents = read_checkpoint(checkpoint);
  const Network<double>& net = contents.network;
  std::vector<Tensor> inputs;
  try {
    const LabeledDataset test = load_test_split(ctx.config);
    detail::require_compatible(net, test, checkpoint.string());
    for (std::size_t i = 0; i < std::min(samples, test.size()); ++i)
      inputs.push_back(test.sample(i).reshaped(test.sample_shape()));
  } catch (const Error& e) {
    *ctx.log << "note: test data unavailable (" << e.what() << "); using seeded uniform inputs\n";
    inputs.clear();
    Rng rng(ctx.config.at("model").at("seed").get<std::uint64_t>(), 99);
    for (std::size_t i = 0; i < samples; ++i) {
      Tensor x(net.input_shape());
      for (double& v : x.values()) v = rng.uniform();
      inputs.push_back(std::move(x));
    }
  }
  const auto rows = verify_checkpoint(net, inputs);
  std::ostream& out = std::cout;
  out << "checkpoint " << checkpoint.string() << " sha256 " << contents.hash << "\n";
  out << std::left << std::setw(24) << "check" << std::setw(8) << "sample" << std::setw(14) << "value"
      << std::setw(10) << "tol" << "result\n";
  bool ok = true;
  std::size_t warnings = 0;
  for (const auto& r : rows) {
    ok = ok && r.pass;
    warnings += r.warning;
    out << std::left << std::setw(24) << r.check << std::setw(8) << r.sample << std::setw(14) << std::setprecision(4)
        << r.value << std::setw(10) << r.tolerance << (r.pass ? (r.warning ? "WARN" : "PASS") : "FAIL");
    if (!r.note.empty()) out << "  " << r.note;
    out << "\n";
  }
  out << (ok ? "all invariants hold" : "invariant failure") << " (" << warnings << " warnings)\n";
  return ok ? kOk : kNumericError;
}

}  // namespace fimguard::cli
