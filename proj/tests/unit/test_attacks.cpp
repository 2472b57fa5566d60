#include <gtest/gtest.h>

#include <cmath>

#include "fimguard/attacks.hpp"
#include "support/affine.hpp"
#include "support/dense_fim.hpp"
#include "support/gradcheck.hpp"

using namespace fimguard;
using namespace fimguard::testing;

namespace {

AttackConfig config_for(const std::string& name, double eps) {
  AttackConfig c;
  c.name = name;
  c.epsilon = eps;
  c.steps = 10;
  c.seed = 11;
  c.norm = Norm::Linf;
  c.cw.steps = 60;
  c.jsma.max_pixels = 6;
  return c;
}

double budget_for(const std::string& name) {
  if (name == "fgsm" || name == "pgd" || name == "bim_linf" || name == "otcm") return 0.1;
  if (name == "bim_l1") return 2.0;
  return 1.0;
}

}  // namespace

TEST(Norms, PerturbationNormExamples) {
  Tensor x(Shape{1, 28, 28}), y(Shape{1, 28, 28});
  y.fill(10.0 / 255.0);
  EXPECT_NEAR(perturbation_norm(x, y, Norm::L2), 28.0 * 10.0 / 255.0, 1e-12);
  EXPECT_NEAR(perturbation_norm(x, y, Norm::L2), 1.098, 5e-4);
  EXPECT_EQ(perturbation_norm(x, x, Norm::L2), 0.0);
  Tensor z = x;
  z[5] = 0.5;
  EXPECT_EQ(perturbation_norm(x, z, Norm::L2), 0.5);
  EXPECT_EQ(perturbation_norm(x, z, Norm::Linf), 0.5);
  EXPECT_EQ(perturbation_norm(x, z, Norm::L0), 1.0);
  EXPECT_EQ(perturbation_norm(x, z, Norm::L1), 0.5);
  EXPECT_THROW(perturbation_norm(x, Tensor(Shape{3}), Norm::L2), ShapeError);
  EXPECT_THROW(parse_norm("l3"), ConfigError);
  EXPECT_EQ(parse_norm(to_string(Norm::Linf)), Norm::Linf);
}

TEST(Norms, ProjectionLandsOnBall) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(12);
    for (double& e : v) e = rng.uniform(-1.0, 1.0);
    for (Norm n : {Norm::L1, Norm::L2, Norm::Linf}) {
      auto p = v;
      const double eps = 0.3;
      project_to_ball(p, n, eps);
      EXPECT_LE(vector_norm(p, n), eps + 1e-12);
      if (vector_norm(v, n) > eps) EXPECT_NEAR(vector_norm(p, n), eps, 1e-12);
    }
  }
}

TEST(Norms, L1ProjectionIsNearestPoint) {
  // Compare against random feasible points: the projection must be closest.
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(6);
    for (double& e : v) e = rng.uniform(-1.0, 1.0);
    auto p = v;
    project_to_ball(p, Norm::L1, 0.5);
    const double best = perturbation_norm(v, p, Norm::L2);
    for (int probe = 0; probe < 200; ++probe) {
      std::vector<double> q(6);
      for (double& e : q) e = rng.uniform(-1.0, 1.0);
      project_to_ball(q, Norm::L2, 1e9);
      const double s = vector_norm(q, Norm::L1);
      if (s > 0.5)
        for (double& e : q) e *= 0.5 / s;
      EXPECT_GE(perturbation_norm(v, q, Norm::L2), best - 1e-12);
    }
  }
}

TEST(AttackContract, RangeBudgetDeterminismAndLabels) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto net = random_small_mlp(12, 4, seed);
    const Tensor x = random_point(12, seed + 100);
    const int y = true_label(net, x);
    for (const auto& name : attack_names()) {
      SCOPED_TRACE(name + " seed " + std::to_string(seed));
      const auto c = config_for(name, budget_for(name));
      const AttackOutcome a = run_attack(net, x, y, c, seed);
      const AttackOutcome b = run_attack(net, x, y, c, seed);
      EXPECT_EQ(a.x_adv, b.x_adv);
      EXPECT_EQ(a.success, b.success);
      for (double v : a.x_adv.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      EXPECT_NEAR(a.achieved_norm, perturbation_norm(x, a.x_adv, attack_norm(c)), 1e-12);
      if (!is_minimizing_attack(name)) EXPECT_LE(a.achieved_norm, c.epsilon + 1e-6);
      if (name == "jsma") EXPECT_LE(a.achieved_norm, c.jsma.max_pixels);
      EXPECT_EQ(a.label_before, y);
      EXPECT_EQ(a.label_after, true_label(net, a.x_adv));
      if (a.success) EXPECT_NE(a.label_after, a.label_before);
    }
  }
}

TEST(AttackContract, ZeroBudgetIsNoOp) {
  const auto net = random_small_mlp(12, 4, 2);
  const Tensor x = random_point(12, 9);
  const int y = true_label(net, x);
  for (const auto& name : attack_names()) {
    SCOPED_TRACE(name);
    auto c = config_for(name, 0.0);
    c.deepfool.max_steps = 0;
    c.cw.steps = 0;
    c.jsma.max_pixels = 0;
    const auto out = run_attack(net, x, y, c);
    EXPECT_EQ(out.x_adv, x);
    EXPECT_FALSE(out.success);
  }
}

TEST(AttackContract, UnknownNameListsValidNames) {
  const auto net = random_small_mlp(4, 2, 0);
  AttackConfig c;
  c.name = "nope";
  try {
    run_attack(net, random_point(4, 0), 0, c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("deepfool"), std::string::npos);
  }
}

TEST(AttackContract, RejectsWrongShapeAndLabel) {
  const auto net = random_small_mlp(4, 2, 0);
  EXPECT_THROW(attack_fgsm(net, random_point(5, 0), 0, {Norm::Linf, 0.1}), ShapeError);
  EXPECT_THROW(attack_fgsm(net, random_point(4, 0), 2, {Norm::Linf, 0.1}), DomainError);
  EXPECT_THROW(attack_fgsm(net, random_point(4, 0), 0, {Norm::Linf, -0.1}), ConfigError);
}

TEST(Ossa, ConstantNetworkLeavesInputUnchanged) {
  auto net = build_mlp<double>(5, {}, 3, 1);
  net.parameter("out.weight").value.fill(0.0);
  const Tensor x = random_point(5, 1);
  const auto out = attack_ossa(net, x, 0, {Norm::L2, 1.0});
  EXPECT_EQ(out.x_adv, x);
  EXPECT_FALSE(out.success);
  EXPECT_TRUE(out.degenerate);
}

TEST(Ossa, PreClipLengthEqualsEpsilon) {
  const auto net = random_small_mlp(8, 3, 4);
  Tensor x(Shape{8});
  x.fill(0.5);
  const auto out = attack_ossa(net, x, true_label(net, x), {Norm::L2, 0.2});
  EXPECT_NEAR(out.achieved_norm, 0.2, 1e-9);
  const auto dir = ossa_direction(net, x, true_label(net, x));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out.eta[i], 0.2 * dir.eta_unit[i], 1e-15);
}

TEST(Fgsm, ZeroGradientIsNoOp) {
  auto net = build_mlp<double>(5, {}, 3, 1);
  net.parameter("out.weight").value.fill(0.0);
  const Tensor x = random_point(5, 1);
  const auto out = attack_fgsm(net, x, 0, {Norm::Linf, 0.1});
  EXPECT_EQ(out.x_adv, x);
}

TEST(Fgsm, SignMatchesLogisticGradient) {
  const auto net = affine_two_class();
  Tensor x(Shape{4});
  x.fill(0.5);
  const auto w = affine_w();
  for (int y : {0, 1}) {
    const auto out = attack_fgsm(net, x, y, {Norm::Linf, 0.05});
    // d CE / dx = (p_1 - [y == 1]) w, so the sign pattern is +w for y = 0.
    for (std::size_t i = 0; i < 4; ++i) {
      const double expected = (y == 0 ? 1.0 : -1.0) * (w[i] > 0 ? 1.0 : -1.0) * 0.05;
      EXPECT_NEAR(out.eta[i], expected, 1e-15);
    }
  }
}

TEST(Fgm, DirectionParallelToFiniteDifferenceGradient) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto net = random_small_mlp(6, 3, seed);
    Tensor x(Shape{6});
    x.fill(0.5);
    const int y = true_label(net, x);
    const auto out = attack_fgm(net, x, y, {Norm::L2, 0.01});
    const Tensor g = finite_difference_gradient<double>(
        [&](const Tensor& p) {
          Tape<double> tape;
          return cross_entropy_from_logits(
              net.logits(tape, tape.constant(p.reshaped(Shape{1, 6}))).value().values(), y);
        },
        x, 1e-5);
    const double cosine = dot<double>(out.eta.values(), g.values()) /
                          (l2_norm<double>(out.eta.values()) * l2_norm<double>(g.values()));
    EXPECT_GE(cosine, 1.0 - 1e-4);
    EXPECT_NEAR(out.achieved_norm, 0.01, 1e-12);
  }
}

TEST(Fgm, ZeroGradientFlagged) {
  auto net = build_mlp<double>(5, {}, 3, 1);
  net.parameter("out.weight").value.fill(0.0);
  const auto out = attack_fgm(net, random_point(5, 2), 0, {Norm::L2, 1.0});
  EXPECT_TRUE(out.degenerate);
  EXPECT_EQ(out.achieved_norm, 0.0);
}

TEST(Otcm, TargetLossDecreases) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto net = random_small_mlp(6, 4, seed);
    Tensor x(Shape{6});
    x.fill(0.5);
    const int y = true_label(net, x);
    const int target = least_likely_class(net, x);
    for (Norm n : {Norm::Linf, Norm::L2}) {
      const auto out = attack_otcm(net, x, y, {n, 1e-4}, target);
      EXPECT_EQ(out.target, target);
      EXPECT_NEAR(out.achieved_norm, 1e-4, 1e-12);
      Tape<double> t0, t1;
      const double before =
          cross_entropy_from_logits(net.logits(t0, t0.constant(x.reshaped(Shape{1, 6}))).value().values(), target);
      const double after = cross_entropy_from_logits(
          net.logits(t1, t1.constant(out.x_adv.reshaped(Shape{1, 6}))).value().values(), target);
      EXPECT_LT(after, before);
    }
  }
}

TEST(Otcm, TargetEqualToLabelRejected) {
  const auto net = random_small_mlp(4, 3, 0);
  EXPECT_THROW(attack_otcm(net, random_point(4, 0), 1, {Norm::Linf, 0.1}, 1), DomainError);
}

TEST(Bim, OneFullStepEqualsFgsm) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto net = random_small_mlp(6, 3, seed);
    const Tensor x = random_point(6, seed);
    const int y = true_label(net, x);
    const auto bim = attack_bim(net, x, y, {Norm::Linf, 0.2, 1, 0.2});
    const auto fgsm = attack_fgsm(net, x, y, {Norm::Linf, 0.2});
    EXPECT_EQ(bim.x_adv, fgsm.x_adv);
  }
}

TEST(Bim, L1StepsTouchOneCoordinateEach) {
  const auto net = random_small_mlp(10, 3, 1);
  Tensor x(Shape{10});
  x.fill(0.5);
  const auto out = attack_bim(net, x, true_label(net, x), {Norm::L1, 5.0, 3, 0.1});
  EXPECT_LE(perturbation_norm(x, out.x_adv, Norm::L0), 3.0);
  EXPECT_LE(out.achieved_norm, 0.3 + 1e-12);
}

TEST(Pgd, SeedControlsStart) {
  const auto net = random_small_mlp(8, 3, 3);
  const Tensor x = random_point(8, 3);
  const int y = true_label(net, x);
  const AttackBudget b{Norm::Linf, 0.05, 1, 1e-9};
  const auto a = attack_pgd(net, x, y, b, 1);
  EXPECT_EQ(a.x_adv, attack_pgd(net, x, y, b, 1).x_adv);
  EXPECT_NE(a.x_adv, attack_pgd(net, x, y, b, 2).x_adv);
  EXPECT_LE(a.achieved_norm, 0.05 + 1e-12);
}

TEST(DeepFool, MatchesHyperplaneDistance) {
  const auto net = affine_two_class();
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x(Shape{4});
    for (double& v : x.values()) v = rng.uniform(0.35, 0.65);
    const int y = true_label(net, x);
    const auto out = attack_deepfool(net, x, y);
    const double dist = hyperplane_distance(x);
    if (dist < 0.02) continue;
    EXPECT_TRUE(out.success);
    EXPECT_NEAR(out.achieved_norm, dist, 0.025 * dist);
  }
}

TEST(DeepFool, MisclassifiedInputTakesNoSteps) {
  const auto net = affine_two_class();
  Tensor x(Shape{4});
  x.fill(0.5);
  const int y = 1 - true_label(net, x);
  const auto out = attack_deepfool(net, x, y);
  EXPECT_EQ(out.x_adv, x);
  EXPECT_FALSE(out.success);
}

TEST(CwL2, NearHyperplaneDistance) {
  const auto net = affine_two_class();
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x(Shape{4});
    for (double& v : x.values()) v = rng.uniform(0.35, 0.65);
    const double dist = hyperplane_distance(x);
    if (dist < 0.05) continue;
    const auto out = attack_cw_l2(net, x, true_label(net, x));
    EXPECT_TRUE(out.success);
    EXPECT_NEAR(out.achieved_norm, dist, 0.10 * dist);
  }
}

TEST(CwL2, ZeroConstantFails) {
  const auto net = affine_two_class();
  Tensor x(Shape{4});
  x.fill(0.5);
  CwConfig config;
  config.c = 0.0;
  const auto out = attack_cw_l2(net, x, true_label(net, x), config);
  EXPECT_FALSE(out.success);
  EXPECT_LT(out.achieved_norm, 1e-3);
}

TEST(Jsma, FirstPairMaximizesAnalyticSaliency) {
  // Linear softmax model: d p_t / d x_i = p_t (W[i,t] - sum_k p_k W[i,k]) and
  // the other classes' derivatives sum to its negative, so the best pair holds
  // the coordinate with the largest positive target derivative.
  auto net = build_mlp<double>(6, {}, 3, 0);
  net.parameter("out.weight").value =
      Tensor(Shape{6, 3}, {0.2, -0.1, 0.4, 1.0, 0.0, -0.3, -0.5, 0.3, 0.9, 0.1, 0.1, 0.1, 0.0, -0.8, 0.2, 0.3, 0.6, -0.2});
  Tensor x(Shape{6});
  x.fill(0.25);
  const int target = 2;
  const auto p = predict_proba(net, x.reshaped(Shape{1, 6})).values();
  const auto& w = net.parameter("out.weight").value;
  std::vector<double> alpha(6);
  for (std::size_t i = 0; i < 6; ++i) {
    double mean = 0.0;
    for (std::size_t k = 0; k < 3; ++k) mean += p[k] * w[i * 3 + k];
    alpha[i] = p[target] * (w[i * 3 + target] - mean);
  }
  const auto best = static_cast<std::size_t>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin());
  JsmaConfig config;
  config.max_pixels = 2;
  const auto out = attack_jsma(net, x, 0, target, config);
  EXPECT_EQ(out.achieved_norm, 2.0);
  EXPECT_EQ(out.x_adv[best], 1.0);
}

TEST(Jsma, RespectsPixelBudget) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto net = random_small_mlp(16, 4, seed);
    const Tensor x = random_point(16, seed);
    JsmaConfig config;
    config.max_pixels = 4;
    const auto out = attack_jsma(net, x, true_label(net, x), -1, config);
    EXPECT_LE(out.achieved_norm, 4.0);
  }
}
