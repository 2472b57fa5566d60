#pragma once

// Run configuration: one JSON document with fixed sections, merged over
// built-in defaults. Keys absent from the defaults are rejected, and
// `--set a.b.c=value` overrides address the same tree.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimguard/attacks.hpp"
#include "fimguard/data.hpp"
#include "fimguard/errors.hpp"
#include "fimguard/models.hpp"
#include "fimguard/trainer.hpp"

namespace fimguard::cli {

using nlohmann::json;

inline constexpr const char* kDataDirEnv = "FIMGUARD_DATA_DIR";

inline json default_attack_entry() {
  return {{"name", "ossa"},    {"norm", "l2"},         {"epsilon", 1.0},   {"grid", json::array()},
          {"steps", 10},       {"step_size", 0.0},     {"seed", 0},        {"target", -1},
          {"eps_max", 0.0},    {"overshoot", 0.02},    {"max_steps", 50},  {"max_pixels", 112},
          {"theta", 1.0},      {"c", 1.0},             {"lr", 0.01},       {"kappa", 0.0},
          {"cw_steps", 200}};
}

inline json default_config() {
  return {
      {"data",
       {{"source", "mnist"},
        {"dir", ""},
        {"train_images", "train-images-idx3-ubyte"},
        {"train_labels", "train-labels-idx1-ubyte"},
        {"test_images", "t10k-images-idx3-ubyte"},
        {"test_labels", "t10k-labels-idx1-ubyte"},
        {"train_size", 10000},
        {"test_size", 2000},
        {"blobs_dim", 8},
        {"blobs_seed", 1}}},
      {"model", {{"arch", "convnet"}, {"seed", 0}, {"num_classes", 10}, {"widths", {16, 32}}, {"kernel", 5}}},
      {"train", TrainConfig{}.to_json()},
      {"attacks", json::array({default_attack_entry()})},
      {"eval",
       {{"samples", 500},
        {"distance_samples", 200},
        {"transfer_samples", 200},
        {"grid", {1.0, 2.0, 4.0, 6.0}},
        {"modes", {"curves"}},
        {"snapshots", 10},
        {"eps_max_l2", 10.0},
        {"eps_max_linf", 1.0},
        {"eps_max_l1", 100.0}}},
      {"output", {{"dir", "runs/default"}, {"dump_images", false}}}};
}

namespace detail {

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

// Overlays `user` onto `base` in place; `path` names the position for errors.
inline void merge_checked(json& base, const json& user, const std::string& path) {
  if (base.is_object()) {
    if (!user.is_object()) throw ConfigError("config key '" + path + "' must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
      const std::string key = path.empty() ? it.key() : path + "." + it.key();
      if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
      merge_checked(base[it.key()], it.value(), key);
    }
    return;
  }
  if (path == "attacks") {
    if (!user.is_array()) throw ConfigError("config key 'attacks' must be an array");
    json merged = json::array();
    for (std::size_t i = 0; i < user.size(); ++i) {
      json entry = default_attack_entry();
      merge_checked(entry, user[i], "attacks." + std::to_string(i));
      merged.push_back(std::move(entry));
    }
    base = std::move(merged);
    return;
  }
  if (!base.is_null() && !same_kind(base, user)) {
    throw ConfigError("config key '" + path + "' has the wrong type (expected " + std::string(base.type_name()) + ")");
  }
  base = user;
}

}  // namespace detail

/// Applies one `a.b.c=value` override. The value is read as JSON when it
/// parses as JSON, otherwise as a string.
inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  std::vector<std::string> parts;
  for (std::size_t start = 0;;) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  // Rebuild a nested patch so the merge applies the same validation.
  json patch = value;
  for (std::size_t i = parts.size(); i-- > 0;) {
    const std::string& part = parts[i];
    const bool index = !part.empty() && part.find_first_not_of("0123456789") == std::string::npos;
    if (index && i > 0 && parts[i - 1] == "attacks") {
      const std::size_t n = std::stoul(part);
      if (!config.contains("attacks") || n >= config["attacks"].size()) {
        throw ConfigError("override '" + key + "' addresses a missing attack entry");
      }
      json arr = json::array();
      for (std::size_t j = 0; j < config["attacks"].size(); ++j) arr.push_back(json::object());
      arr[n] = patch;
      patch = arr;
    } else {
      patch = json{{part, patch}};
    }
  }
  // An indexed override edits one entry and leaves the others as they are;
  // assigning the whole array starts every entry from the defaults.
  if (patch.contains("attacks") && patch["attacks"].is_array()) {
    const bool whole = parts.back() == "attacks";
    for (std::size_t j = 0; j < patch["attacks"].size(); ++j) {
      json entry = whole ? default_attack_entry() : config["attacks"][j];
      detail::merge_checked(entry, patch["attacks"][j], "attacks." + std::to_string(j));
      patch["attacks"][j] = entry;
    }
  }
  detail::merge_checked(config, patch, "");
}

inline json resolve_config(const json& user, const std::vector<std::string>& overrides = {}) {
  json config = default_config();
  detail::merge_checked(config, user, "");
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

inline json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return j;
}

inline TrainConfig train_config(const json& config) {
  const json& t = config.at("train");
  TrainConfig c;
  try {
    c.regime = parse_regime(t.at("regime").get<std::string>());
    c.mu = t.at("mu").get<double>();
    c.alpha = t.at("alpha").get<double>();
    c.epochs = t.at("epochs").get<std::size_t>();
    c.batch_size = t.at("batch").get<std::size_t>();
    c.lr = t.at("lr").get<double>();
    c.momentum = t.at("momentum").get<double>();
    c.decay_fraction = t.at("decay_fraction").get<double>();
    c.decay_factor = t.at("decay_factor").get<double>();
    c.grad_clip = t.at("grad_clip").get<double>();
    c.seed = t.at("seed").get<std::uint64_t>();
    c.precision = parse_precision(t.at("precision").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train section: ") + e.what());
  }
  c.validate();
  return c;
}

inline AttackConfig attack_config(const json& entry) {
  AttackConfig c;
  try {
    c.name = entry.at("name").get<std::string>();
    require_attack_name(c.name);
    c.norm = parse_norm(entry.at("norm").get<std::string>());
    c.epsilon = entry.at("epsilon").get<double>();
    c.steps = entry.at("steps").get<std::size_t>();
    c.step_size = entry.at("step_size").get<double>();
    c.seed = entry.at("seed").get<std::uint64_t>();
    c.target = entry.at("target").get<int>();
    c.deepfool.overshoot = entry.at("overshoot").get<double>();
    c.deepfool.max_steps = entry.at("max_steps").get<std::size_t>();
    c.jsma.max_pixels = entry.at("max_pixels").get<std::size_t>();
    c.jsma.theta = entry.at("theta").get<double>();
    c.cw.c = entry.at("c").get<double>();
    c.cw.lr = entry.at("lr").get<double>();
    c.cw.kappa = entry.at("kappa").get<double>();
    c.cw.steps = entry.at("cw_steps").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("attack entry: ") + e.what());
  }
  if (!(c.epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0");
  return c;
}

inline std::vector<AttackConfig> attack_configs(const json& config) {
  std::vector<AttackConfig> out;
  for (const auto& entry : config.at("attacks")) out.push_back(attack_config(entry));
  return out;
}

/// Upper end of the bisection range for an attack entry.
inline double bisection_limit(const json& config, const json& entry) {
  const double own = entry.at("eps_max").get<double>();
  if (own > 0.0) return own;
  const Norm n = attack_norm(attack_config(entry));
  const json& e = config.at("eval");
  if (n == Norm::Linf) return e.at("eps_max_linf").get<double>();
  if (n == Norm::L1) return e.at("eps_max_l1").get<double>();
  return e.at("eps_max_l2").get<double>();
}

inline std::vector<double> attack_grid(const json& config, const json& entry) {
  const auto own = entry.at("grid").get<std::vector<double>>();
  return own.empty() ? config.at("eval").at("grid").get<std::vector<double>>() : own;
}

inline Architecture architecture(const json& config) {
  const json& m = config.at("model");
  const json& d = config.at("data");
  Architecture a;
  a.kind = m.at("arch").get<std::string>();
  if (a.kind != "convnet" && a.kind != "mlp") throw ConfigError("model.arch must be convnet or mlp");
  a.num_classes = m.at("num_classes").get<std::size_t>();
  if (a.num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  a.widths = m.at("widths").get<std::vector<std::size_t>>();
  a.kernel = m.at("kernel").get<std::size_t>();
  const std::string source = d.at("source").get<std::string>();
  a.input_shape = source == "blobs" ? Shape{1, 1, d.at("blobs_dim").get<std::size_t>()} : Shape{1, 28, 28};
  return a;
}

inline std::filesystem::path data_dir(const json& config) {
  const std::string own = config.at("data").at("dir").get<std::string>();
  if (!own.empty()) return own;
  if (const char* env = std::getenv(kDataDirEnv); env && *env) return env;
  return "data/mnist";
}

struct Splits {
  LabeledDataset train;
  LabeledDataset test;
};

/// Training and test sets per the data section. The blobs source draws one
/// set of train_size + test_size points and splits it in order.
inline Splits load_splits(const json& config) {
  const json& d = config.at("data");
  const std::string source = d.at("source").get<std::string>();
  const auto n_train = d.at("train_size").get<std::size_t>();
  const auto n_test = d.at("test_size").get<std::size_t>();
  const auto k = config.at("model").at("num_classes").get<std::size_t>();
  if (source == "blobs") {
    const std::size_t per_class = (n_train + n_test + k - 1) / k;
    LabeledDataset all = synthetic_blobs(k, per_class, d.at("blobs_dim").get<std::size_t>(), d.at("blobs_seed").get<std::uint64_t>());
    std::vector<std::size_t> a(n_train), b(n_test);
    for (std::size_t i = 0; i < n_train; ++i) a[i] = i;
    for (std::size_t i = 0; i < n_test; ++i) b[i] = n_train + i;
    return {all.subset(a), all.subset(b)};
  }
  if (source != "mnist") throw ConfigError("data.source must be mnist or blobs");
  const auto dir = data_dir(config);
  return {load_mnist_idx(dir / d.at("train_images").get<std::string>(), dir / d.at("train_labels").get<std::string>(),
                         k, n_train),
          load_mnist_idx(dir / d.at("test_images").get<std::string>(), dir / d.at("test_labels").get<std::string>(), k,
                         n_test)};
}

/// Only the test split, for commands that never train.
inline LabeledDataset load_test_split(const json& config) {
  const json& d = config.at("data");
  if (d.at("source").get<std::string>() == "blobs") return load_splits(config).test;
  const auto dir = data_dir(config);
  return load_mnist_idx(dir / d.at("test_images").get<std::string>(), dir / d.at("test_labels").get<std::string>(),
                        config.at("model").at("num_classes").get<std::size_t>(), d.at("test_size").get<std::size_t>());
}

/// Checks every section that can be checked without touching data.
inline void validate(const json& config) {
  train_config(config);
  architecture(config);
  for (const auto& entry : config.at("attacks")) attack_config(entry);
  const auto modes = config.at("eval").at("modes").get<std::vector<std::string>>();
  for (const auto& m : modes) {
    if (m != "curves" && m != "distances" && m != "transfer" && m != "snapshots") {
      throw ConfigError("unknown eval mode '" + m + "' (expected curves, distances, transfer or snapshots)");
    }
  }
  if (config.at("output").at("dir").get<std::string>().empty()) throw ConfigError("output.dir must be set");
}

}  // namespace fimguard::cli
