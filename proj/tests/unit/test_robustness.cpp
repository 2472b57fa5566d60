#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fimguard/report.hpp"
#include "support/dense_fim.hpp"

using namespace fimguard;
using namespace fimguard::testing;

namespace {

struct Fixture {
  Network<double> net;
  LabeledDataset data;
};

// Random-weight MLP on 40 random 6-d points, labelled by the model itself so
// every sample starts out correctly classified.
Fixture self_labelled(std::uint64_t seed, std::size_t n = 40) {
  Fixture f{random_small_mlp(6, 3, seed), {}};
  Rng rng(seed, 1);
  f.data.images = Tensor(Shape{n, 1, 1, 6});
  for (double& v : f.data.images.values()) v = rng.uniform();
  f.data.num_classes = 3;
  auto net6 = f.net;
  f.net = build_mlp<double>(Shape{1, 1, 6}, {8}, 3, 0);
  for (std::size_t i = 0; i < f.net.parameters().size(); ++i) f.net.parameters()[i].value = net6.parameters()[i].value;
  f.data.labels = classify(f.net, f.data.images);
  return f;
}

std::vector<std::size_t> all(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

AttackConfig attack(const std::string& name, double eps) {
  AttackConfig c;
  c.name = name;
  c.epsilon = eps;
  c.steps = 5;
  c.seed = 3;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Eligibility, IntersectionOfCorrectSamples) {
  auto f = self_labelled(1);
  auto other = f.net;
  other.parameter("out.bias").value[0] += 5.0;
  const auto other_pred = classify(other, f.data.images);
  const auto both = eligible_indices({&f.net, &other}, f.data);
  std::vector<std::size_t> expected;
  for (std::size_t i = 0; i < f.data.size(); ++i)
    if (other_pred[i] == f.data.labels[i]) expected.push_back(i);
  EXPECT_EQ(both, expected);
  EXPECT_EQ(eligible_indices({&f.net}, f.data, 7), all(7));
}

TEST(FoolingRatio, ZeroBudgetFoolsNothing) {
  auto f = self_labelled(2);
  for (const char* name : {"ossa", "fgsm", "pgd", "bim_l2"}) {
    const auto r = fooling_ratio({"m", &f.net}, attack(name, 0.0), f.data, all(40));
    EXPECT_EQ(r.ratio, 0.0);
    EXPECT_EQ(r.count, 40u);
  }
}

TEST(FoolingRatio, RecomputableFromRecordsAndThreadIndependent) {
  auto f = self_labelled(3);
  const auto one = fooling_ratio({"m", &f.net}, attack("fgm", 0.3), f.data, all(40), 1);
  const auto four = fooling_ratio({"m", &f.net}, attack("fgm", 0.3), f.data, all(40), 4);
  std::size_t fooled = 0;
  for (std::size_t j = 0; j < one.records.size(); ++j) {
    const auto& r = one.records[j];
    const auto out = attack_fgm(f.net, f.data.sample(r.sample).reshaped(Shape{1, 1, 6}), r.label, {Norm::L2, 0.3});
    const int relabel = classify(f.net, out.x_adv.reshaped(Shape{1, 1, 1, 6}))[0];
    EXPECT_EQ(r.label_after, relabel);
    fooled += relabel != r.label;
    EXPECT_EQ(r.label_after, four.records[j].label_after);
    EXPECT_EQ(r.norm, four.records[j].norm);
  }
  EXPECT_DOUBLE_EQ(one.ratio, static_cast<double>(fooled) / 40.0);
  EXPECT_EQ(one.ratio, four.ratio);
}

TEST(FoolingRatio, EmptyEligibleSetRejected) {
  auto f = self_labelled(2);
  EXPECT_THROW(fooling_ratio({"m", &f.net}, attack("fgsm", 0.1), f.data, {}), EmptySetError);
}

TEST(FoolingCurve, GridRulesAndCsvRoundTrip) {
  auto f = self_labelled(4);
  const NamedModel m{"model-a", &f.net};
  const auto zero = fooling_curve(m, attack("ossa", 0.0), {0.0}, f.data, all(40));
  EXPECT_EQ(zero.points[0].ratio, 0.0);
  EXPECT_THROW(fooling_curve(m, attack("ossa", 0.0), {0.5, 0.5}, f.data, all(40)), ConfigError);

  const auto curve = fooling_curve(m, attack("ossa", 0.0), {0.1, 0.3, 1.0 / 3.0, 0.9}, f.data, all(40));
  const auto path = std::filesystem::temp_directory_path() / "fimguard_curves.csv";
  write_curves_csv(path, {curve});
  const auto back = read_curves_csv(path);
  ASSERT_EQ(back.size(), 1u);
  ASSERT_EQ(back[0].points.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[0].points[i].ratio, curve.points[i].ratio);
    EXPECT_EQ(back[0].points[i].epsilon, curve.points[i].epsilon);
  }
  std::filesystem::remove(path);
}

TEST(Bisection, FindsHyperplaneDistanceOnAffineModel) {
  auto net = build_mlp<double>(4, {}, 2, 0);
  net.parameter("out.weight").value = Tensor(Shape{4, 2}, {1.0, -1.0, -0.5, 0.5, 0.25, 1.75, 0.0, 1.0});
  net.parameter("out.bias").value = Tensor(Shape{2}, {0.3, -0.1});
  const std::vector<double> w{-2.0, 1.0, 1.5, 1.0};
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x(Shape{4});
    for (double& v : x.values()) v = rng.uniform(0.35, 0.65);
    double s = -0.4;
    for (std::size_t i = 0; i < 4; ++i) s += w[i] * x[i];
    const double dist = std::abs(s) / std::sqrt(8.25);
    const int y = s > 0 ? 1 : 0;
    double eps = 0.0;
    const auto out = minimal_adversarial(net, x, y, attack("fgm", 0.0), 2.0, 0, &eps);
    ASSERT_TRUE(out.success);
    EXPECT_GE(eps, dist - 1e-12);
    EXPECT_LE(eps, dist + 2.0 / 4096.0 + 1e-12);
    EXPECT_NEAR(out.achieved_norm, eps, 1e-12);
  }
}

TEST(MeanDistance, SuccessesOnlyAndEmptyError) {
  auto f = self_labelled(5);
  const NamedModel m{"m", &f.net};
  std::vector<SampleRecord> recs;
  const auto d = mean_adv_distance(m, attack("deepfool", 0.0), f.data, all(20), 1.0, 2, &recs);
  ASSERT_GT(d.successes, 0u);
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : recs)
    if (r.success && r.fooled) total += r.norm, ++n;
  EXPECT_EQ(n, d.successes);
  EXPECT_DOUBLE_EQ(d.mean, total / static_cast<double>(n));
  // Random weights on [0,1] inputs: boundaries lie well inside the unit cube.
  EXPECT_LT(d.mean, std::sqrt(6.0));

  auto frozen = f.net;
  for (auto& p : frozen.parameters())
    if (p.name.ends_with("weight")) p.value.fill(0.0);
  auto data = f.data;
  data.labels = classify(frozen, data.images);
  EXPECT_THROW(mean_adv_distance({"z", &frozen}, attack("fgsm", 0.0), data, all(5), 1.0), EmptySetError);
}

TEST(Transfer, SelfTransferAndIdentityAttack) {
  auto f = self_labelled(6);
  const NamedModel m{"m", &f.net};
  const auto self = cross_model_transfer(m, m, attack("deepfool", 0.0), f.data, all(30), {true, 3.0});
  ASSERT_GT(self.source_successes, 0u);
  EXPECT_EQ(self.accuracy_on_successful, 0.0);
  const auto identity = cross_model_transfer(m, m, attack("fgsm", 0.0), f.data, all(30), {false, 1.0});
  EXPECT_EQ(identity.accuracy, 1.0);
  EXPECT_EQ(identity.source_successes, 0u);
  EXPECT_TRUE(std::isnan(identity.accuracy_on_successful));
}

TEST(Transfer, RejectsClassCountMismatch) {
  auto f = self_labelled(6);
  auto other = build_mlp<double>(Shape{1, 1, 6}, {}, 4, 0);
  EXPECT_THROW(cross_model_transfer({"a", &f.net}, {"b", &other}, attack("fgsm", 0.1), f.data, all(3)), ConfigError);
}

TEST(Snapshot, SimplexAndJson) {
  auto f = self_labelled(7);
  const auto s = label_distribution_snapshot(f.net, f.data.sample(0).reshaped(Shape{1, 1, 6}), f.data.labels[0]);
  EXPECT_NEAR(std::accumulate(s.probabilities.begin(), s.probabilities.end(), 0.0), 1.0, 1e-12);
  EXPECT_EQ(s.predicted, f.data.labels[0]);
  EXPECT_EQ(s.to_json()["probabilities"].size(), 3u);
}

TEST(Report, WritesAllTablesDeterministically) {
  auto build = [] {
    auto f = self_labelled(8);
    const NamedModel m{"m", &f.net};
    RobustnessReport rep;
    rep.curves.push_back(fooling_curve(m, attack("fgsm", 0.0), {0.05, 0.1}, f.data, all(10), 3, &rep.records));
    rep.distances.push_back(mean_adv_distance(m, attack("fgsm", 0.0), f.data, all(10), 1.0, 2, &rep.records));
    rep.transfers.push_back(cross_model_transfer(m, m, attack("pgd", 0.1), f.data, all(10), {false}, 2, &rep.records));
    rep.metadata["seed"] = 3;
    return rep;
  };
  const auto base = std::filesystem::temp_directory_path() / "fimguard_report_test";
  std::filesystem::remove_all(base);
  build().write(base / "a");
  build().write(base / "b");
  for (const char* name : {"report.json", "curves.csv", "distances.csv", "transfer.csv", "per_sample.csv"}) {
    ASSERT_TRUE(std::filesystem::exists(base / "a" / name)) << name;
    EXPECT_EQ(slurp(base / "a" / name), slurp(base / "b" / name)) << name;
  }
  std::filesystem::remove_all(base);
}

TEST(ParallelMap, PropagatesExceptions) {
  EXPECT_THROW(parallel_map<int>(50, 4,
                                 [](std::size_t i) {
                                   if (i == 17) throw DomainError("boom");
                                   return static_cast<int>(i);
                                 }),
               DomainError);
  const auto v = parallel_map<int>(50, 4, [](std::size_t i) { return static_cast<int>(i * i); });
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(v[i], static_cast<int>(i * i));
}
