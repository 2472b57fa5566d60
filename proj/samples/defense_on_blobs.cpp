// Baseline versus Fisher-trace regularized training on synthetic blobs:
// confidence, accuracy and OSSA fooling ratio side by side.

#include <iomanip>
#include <iostream>
#include <numeric>

#include "fimguard/robustness.hpp"
#include "fimguard/trainer.hpp"

using namespace fimguard;

int main() {
  // Cluster centres depend on the seed, so both splits come from one draw.
  const auto all = synthetic_blobs(5, 260, 16, 11);
  const auto order = Rng(3).permutation(all.size());
  const auto train_set = all.subset({order.begin(), order.begin() + 1000});
  const auto test_set = all.subset({order.begin() + 1000, order.end()});
  const auto init = build_mlp<double>(Shape{1, 1, 16}, {32}, 5, 2);

  std::vector<Network<double>> nets;
  for (double mu : {0.0, 0.05}) {
    TrainConfig c;
    c.regime = mu > 0 ? Regime::Fim : Regime::Baseline;
    c.mu = mu;
    c.epochs = 6;
    c.batch_size = 32;
    nets.push_back(train(init, train_set, c, &test_set).network);
    std::cout << "mu " << mu << ": test accuracy " << evaluate_accuracy(nets.back(), test_set)
              << ", mean max-probability " << mean_max_probability(nets.back(), test_set) << "\n";
  }

  const auto eligible = eligible_indices({&nets[0], &nets[1]}, test_set);
  AttackConfig ossa;
  ossa.name = "ossa";
  const std::vector<double> grid{0.5, 1.0, 1.5, 2.0};
  std::cout << std::setw(6) << "eps" << std::setw(12) << "baseline" << std::setw(12) << "defended" << "\n";
  const auto a = fooling_curve({"baseline", &nets[0]}, ossa, grid, test_set, eligible);
  const auto b = fooling_curve({"defended", &nets[1]}, ossa, grid, test_set, eligible);
  for (std::size_t i = 0; i < grid.size(); ++i)
    std::cout << std::setw(6) << grid[i] << std::setw(12) << a.points[i].ratio << std::setw(12) << b.points[i].ratio
              << "\n";
}
