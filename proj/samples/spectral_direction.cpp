// Top eigenvector of the input Fisher matrix for a trained MLP, compared with
// random directions of the same length.

#include <iomanip>
#include <iostream>

#include "fimguard/fim.hpp"
#include "fimguard/trainer.hpp"

using namespace fimguard;

int main() {
  const auto data = synthetic_blobs(4, 60, 10, 3);
  TrainConfig config;
  config.epochs = 5;
  config.batch_size = 16;
  const auto net = train(build_mlp<double>(Shape{1, 1, 10}, {16}, 4, 1), data, config).network;

  const Tensor x = data.sample(0).reshaped(data.sample_shape());
  const auto r = ossa_direction(net, x, data.labels[0]);
  std::cout << std::setprecision(6) << "lambda_max = " << r.lambda_max << " after " << r.iterations
            << " power iterations\n";
  std::cout << "loss " << r.loss_before << " -> " << r.loss_probe << " at probe length "
            << ossa_probe_length(x.size()) << "\n";

  // Rayleigh quotients of random unit vectors stay below lambda_max.
  Rng rng(9);
  double best = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Tensor u(Shape{x.size()});
    for (double& v : u.values()) v = rng.normal();
    const double n = l2_norm<double>(u.values());
    for (double& v : u.values()) v /= n;
    best = std::max(best, input_fim_quadratic(net, x, u));
  }
  std::cout << "best of 1000 random unit directions: " << best << "\n";

  for (double eps : {0.1, 0.3, 1.0}) {
    Tensor eta(Shape{x.size()});
    for (std::size_t i = 0; i < x.size(); ++i) eta[i] = eps * r.eta_unit[i];
    const auto p = predict_proba(net, x.reshaped(Shape{1, 1, 1, 10}));
    Tensor moved = x;
    for (std::size_t i = 0; i < x.size(); ++i) moved[i] += eta[i];
    const auto q = predict_proba(net, moved.reshaped(Shape{1, 1, 1, 10}));
    std::cout << "eps " << eps << ": KL " << kl_divergence(p.storage(), q.storage()) << ", quadratic form / 2 "
              << 0.5 * input_fim_quadratic(net, x, eta) << "\n";
  }
}
