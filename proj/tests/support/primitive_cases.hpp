#pragma once

// One randomized gradient-check case per tape primitive. Each case reduces
// the primitive's output to a scalar through a fixed random weighting so
// every output element carries gradient.

#include <cstdint>
#include <string>
#include <vector>

#include "fimguard/random.hpp"
#include "support/gradcheck.hpp"

namespace fimguard::testing {

struct GradCase {
  Builder build;
  std::vector<Tensor> inputs;
};

struct PrimitiveCase {
  std::string name;
  std::function<GradCase(std::uint64_t seed)> make;
};

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values spaced at least 0.01 apart so max-type ops have no ties within a
// finite-difference step.
inline Tensor distinct_tensor(Rng& rng, Shape shape) {
  Tensor t(std::move(shape));
  const auto order = rng.permutation(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(order[i]) - 0.2 + 0.001 * rng.uniform();
  return t;
}

// Entries bounded away from zero so relu's kink is never straddled.
inline Tensor off_kink_tensor(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape), 0.02, 1.0);
  for (double& v : t.values()) if (rng.uniform() < 0.5) v = -v;
  return t;
}

// Reduces `out` to a scalar as sum(out * w) with w fixed by the seed.
inline Var<double> weighted_sum(Tape<double>& tape, Var<double> out, std::uint64_t seed) {
  Rng rng(seed, 99);
  return sum(multiply(out, tape.constant(random_tensor(rng, out.shape()))));
}

inline std::vector<PrimitiveCase> primitive_cases() {
  std::vector<PrimitiveCase> cases;
  auto unary = [&](std::string name, auto op, auto generate) {
    cases.push_back({name, [op, generate](std::uint64_t seed) {
                       Rng rng(seed);
                       const std::size_t rows = 1 + rng.index(3), cols = 2 + rng.index(4);
                       return GradCase{[op, seed](Tape<double>& t, const std::vector<Var<double>>& v) {
                                         return weighted_sum(t, op(v[0]), seed);
                                       },
                                       {generate(rng, Shape{rows, cols})}};
                     }});
  };
  auto plain = [](Rng& rng, Shape s) { return random_tensor(rng, std::move(s)); };
  auto positive = [](Rng& rng, Shape s) { return random_tensor(rng, std::move(s), 0.2, 2.0); };

  unary("relu", [](Var<double> a) { return relu(a); }, [](Rng& rng, Shape s) { return off_kink_tensor(rng, std::move(s)); });
  unary("negate", [](Var<double> a) { return negate(a); }, plain);
  unary("scale", [](Var<double> a) { return scale(a, -1.7); }, plain);
  unary("exp", [](Var<double> a) { return exp(a); }, plain);
  unary("reciprocal", [](Var<double> a) { return reciprocal(a); }, positive);
  unary("safe_reciprocal", [](Var<double> a) { return safe_reciprocal(a); }, positive);
  unary("log", [](Var<double> a) { return log(a); }, positive);
  unary("safe_log", [](Var<double> a) { return safe_log(a); }, positive);
  unary("softmax", [](Var<double> a) { return softmax(a); }, plain);
  unary("max_reduce", [](Var<double> a) { return max_reduce(a); },
        [](Rng& rng, Shape s) { return distinct_tensor(rng, std::move(s)); });
  unary("reshape", [](Var<double> a) { return reshape(a, Shape{a.value().size()}); }, plain);
  unary("slice", [](Var<double> a) { return slice(a, 1, 1, a.shape()[1]); }, plain);

  cases.push_back({"sum", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return GradCase{[](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return sum(multiply(v[0], v[0]));
                                     },
                                     {random_tensor(rng, Shape{2, 3})}};
                   }});
  cases.push_back({"mean", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return GradCase{[](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return mean(exp(v[0]));
                                     },
                                     {random_tensor(rng, Shape{3, 2})}};
                   }});
  cases.push_back({"add", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return GradCase{[seed](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return weighted_sum(t, add(v[0], v[1]), seed);
                                     },
                                     {random_tensor(rng, Shape{3, 4}), random_tensor(rng, Shape{4})}};
                   }});
  cases.push_back({"multiply", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return GradCase{[seed](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return weighted_sum(t, multiply(v[0], v[1]), seed);
                                     },
                                     {random_tensor(rng, Shape{2, 3}), random_tensor(rng, Shape{2, 3})}};
                   }});
  cases.push_back({"matmul", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t m = 1 + rng.index(3), k = 1 + rng.index(4), n = 1 + rng.index(3);
                     return GradCase{[seed](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return weighted_sum(t, matmul(v[0], v[1]), seed);
                                     },
                                     {random_tensor(rng, Shape{m, k}), random_tensor(rng, Shape{k, n})}};
                   }});
  cases.push_back({"conv2d", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::size_t kernel = 1 + 2 * rng.index(2);
                     const Conv2dAttrs attrs{1 + rng.index(2), rng.index(2)};
                     return GradCase{[seed, attrs](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return weighted_sum(t, conv2d(v[0], v[1], v[2], attrs), seed);
                                     },
                                     {random_tensor(rng, Shape{2, 2, 5, 5}),
                                      random_tensor(rng, Shape{3, 2, kernel, kernel}), random_tensor(rng, Shape{3})}};
                   }});
  cases.push_back({"max_pool2d", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return GradCase{[seed](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return weighted_sum(t, max_pool2d(v[0], 2, 2), seed);
                                     },
                                     {distinct_tensor(rng, Shape{2, 2, 4, 4})}};
                   }});
  cases.push_back({"batch_norm_train", [](std::uint64_t seed) {
                     Rng rng(seed);
                     return GradCase{[seed](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return weighted_sum(t, batch_norm_train(v[0], v[1], v[2], 1e-5, nullptr), seed);
                                     },
                                     {random_tensor(rng, Shape{3, 2, 2, 2}), random_tensor(rng, Shape{2}, 0.5, 1.5),
                                      random_tensor(rng, Shape{2})}};
                   }});
  cases.push_back({"batch_norm_infer", [](std::uint64_t seed) {
                     Rng rng(seed);
                     const std::vector<double> mu{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
                     const std::vector<double> var{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
                     return GradCase{[seed, mu, var](Tape<double>& t, const std::vector<Var<double>>& v) {
                                       return weighted_sum(
                                           t, batch_norm_infer<double>(v[0], v[1], v[2], mu, var, 1e-5), seed);
                                     },
                                     {random_tensor(rng, Shape{3, 2}), random_tensor(rng, Shape{2}, 0.5, 1.5),
                                      random_tensor(rng, Shape{2})}};
                   }});
  return cases;
}

}  // namespace fimguard::testing
