// Runs every registered attack once against a small trained MLP.

#include <iomanip>
#include <iostream>

#include "fimguard/attacks.hpp"
#include "fimguard/trainer.hpp"

using namespace fimguard;

int main() {
  const auto data = synthetic_blobs(3, 80, 12, 5);
  TrainConfig config;
  config.epochs = 4;
  config.batch_size = 16;
  const auto net = train(build_mlp<double>(Shape{1, 1, 12}, {10}, 3, 4), data, config).network;
  const Tensor x = data.sample(7).reshaped(data.sample_shape());
  const int y = data.labels[7];

  std::cout << std::left << std::setw(10) << "attack" << std::setw(6) << "norm" << std::setw(12) << "distance"
            << "label\n";
  for (const auto& name : attack_names()) {
    AttackConfig c;
    c.name = name;
    c.epsilon = name == "bim_l1" ? 3.0 : (name == "fgsm" || name == "pgd" || name == "bim_linf") ? 0.2 : 1.0;
    c.norm = Norm::L2;
    c.seed = 1;
    const auto out = run_attack(net, x, y, c);
    std::cout << std::setw(10) << name << std::setw(6) << to_string(out.norm) << std::setw(12) << out.achieved_norm
              << out.label_before << " -> " << out.label_after << (out.success ? "  fooled" : "") << "\n";
  }
}
