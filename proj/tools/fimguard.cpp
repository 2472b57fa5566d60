// fimguard {train|attack|eval|verify} --config PATH [--set key=value]... [--threads N] [--out DIR]

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fimguard/cli/commands.hpp"

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::size_t threads = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration");
  cmd->add_option("--set", c.overrides, "dotted-path override, e.g. train.mu=0.022")->take_all();
  cmd->add_option("--threads", c.threads, "worker threads for per-sample work")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
}

fimguard::cli::Context make_context(const Common& c) {
  using namespace fimguard::cli;
  const json user = c.config_path.empty() ? json::object() : load_config_file(c.config_path);
  Context ctx;
  ctx.config = resolve_config(user, c.overrides);
  if (!c.out.empty()) ctx.config["output"]["dir"] = c.out;
  ctx.threads = c.threads;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fisher-information regularized training and adversarial robustness evaluation"};
  app.require_subcommand(1);

  Common train_opts, attack_opts, eval_opts, verify_opts;
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  add_common(train, train_opts);

  auto* attack = app.add_subcommand("attack", "attack correctly classified test samples");
  add_common(attack, attack_opts);
  std::string attack_ckpt, attack_name;
  std::optional<double> attack_eps;
  attack->add_option("--ckpt", attack_ckpt, "checkpoint to attack")->required();
  attack->add_option("--attack", attack_name, "attack name")->required();
  attack->add_option("--eps", attack_eps, "budget (overrides the config entry)");

  auto* eval = app.add_subcommand("eval", "fooling curves, distances and transfer report");
  add_common(eval, eval_opts);
  std::vector<std::string> eval_ckpts;
  eval->add_option("--ckpt", eval_ckpts, "checkpoint(s); two or more enable transfer")->required();

  auto* verify = app.add_subcommand("verify", "run the fast invariant checks on a checkpoint");
  add_common(verify, verify_opts);
  std::string verify_ckpt;
  std::size_t verify_samples = 10;
  verify->add_option("--ckpt,ckpt", verify_ckpt, "checkpoint to verify")->required();
  verify->add_option("--samples", verify_samples, "number of inputs to check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fimguard::cli::kUsage;
  }

  using namespace fimguard::cli;
  try {
    if (train->parsed()) return cmd_train(make_context(train_opts));
    if (attack->parsed()) return cmd_attack(make_context(attack_opts), attack_ckpt, attack_name, attack_eps);
    if (eval->parsed()) {
      std::vector<std::filesystem::path> paths(eval_ckpts.begin(), eval_ckpts.end());
      return cmd_eval(make_context(eval_opts), paths);
    }
    return cmd_verify(make_context(verify_opts), verify_ckpt, verify_samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
