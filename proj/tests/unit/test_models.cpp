#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "fimguard/checkpoint.hpp"
#include "fimguard/models.hpp"

using namespace fimguard;
namespace fs = std::filesystem;

namespace {

Tensor random_images(std::size_t n, Shape sample, std::uint64_t seed) {
  Rng rng(seed);
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  Tensor t(s);
  for (double& v : t.values()) v = rng.uniform();
  return t;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("fimguard_models_" + std::to_string(::getpid()) + "_" + name);
}

// Perturbs running statistics so inference-mode batch norm is non-trivial.
void randomize_running_stats(Network<double>& net, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : net.parameters()) {
    if (p.name.find("running_mean") != std::string::npos)
      for (double& v : p.value.values()) v = rng.uniform(-0.2, 0.2);
    if (p.name.find("running_var") != std::string::npos)
      for (double& v : p.value.values()) v = rng.uniform(0.5, 2.0);
  }
}

}  // namespace

TEST(ConvNet, TrainableParameterCount) {
  const auto net = build_convnet();
  const std::size_t expected = 16 * (25 + 1) + 32 + 32 * (16 * 25 + 1) + 64 + (32 * 7 * 7 * 10 + 10);
  EXPECT_EQ(net.trainable_parameter_count(), expected);
  EXPECT_EQ(expected, 29034u);
}

TEST(ConvNet, ZeroImageGivesSimplexPoint) {
  const auto net = build_convnet();
  const Tensor p = predict_proba(net, Tensor(Shape{1, 1, 28, 28}));
  double total = 0;
  for (double v : p.values()) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(ConvNet, SameSeedSameParameters) {
  const auto a = build_convnet({1, 28, 28}, 10, 4), b = build_convnet({1, 28, 28}, 10, 4);
  const auto c = build_convnet({1, 28, 28}, 10, 5);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
  }
  EXPECT_NE(a.parameters()[0].value, c.parameters()[0].value);
}

TEST(ConvNet, ParameterNamesAreUnique) {
  const auto net = build_convnet();
  std::set<std::string> names;
  for (const auto& p : net.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}

TEST(ConvNet, DuplicateRowsGiveDuplicateOutputs) {
  auto net = build_convnet({1, 12, 12}, 4, 3, {4, 6}, 3);
  randomize_running_stats(net, 8);
  Tensor x = random_images(3, {1, 12, 12}, 1);
  std::copy_n(x.data(), 144, x.data() + 2 * 144);
  const Tensor p = predict_proba(net, x);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(p[k], p[8 + k]);
  // Batch composition must not matter in inference mode.
  const Tensor single = predict_proba(net, random_images(3, {1, 12, 12}, 1).reshaped({3, 1, 12, 12}));
  EXPECT_EQ(predict_proba(net, Tensor(Shape{1, 1, 12, 12}, std::vector<double>(x.data() + 144, x.data() + 288))).storage(),
            std::vector<double>(single.data() + 4, single.data() + 8));
}

TEST(ConvNet, RejectsWrongInputShape) {
  const auto net = build_convnet();
  EXPECT_THROW(predict_proba(net, Tensor(Shape{2, 1, 27, 28})), ShapeError);
}

TEST(Mlp, NoHiddenLayersIsLogisticRegression) {
  const auto net = build_mlp(5, {}, 3);
  ASSERT_EQ(net.layers().size(), 1u);
  EXPECT_EQ(net.layers()[0].kind, LayerKind::Dense);
  EXPECT_EQ(predict_proba(net, Tensor(Shape{4, 5})).shape(), (Shape{4, 3}));
}

TEST(Mlp, ZeroWeightsGiveUniformOutput) {
  auto net = build_mlp(6, {4}, 5);
  for (auto& p : net.parameters()) p.value.fill(0.0);
  const Tensor p = predict_proba(net, random_images(3, {6}, 2));
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Mlp, MatchesHandComputedForward) {
  auto net = build_mlp(2, {2}, 3);
  net.parameter("fc1.weight").value = Tensor(Shape{2, 2}, {1.0, -1.0, 0.5, 2.0});
  net.parameter("fc1.bias").value = Tensor::vector({0.1, -0.3});
  net.parameter("out.weight").value = Tensor(Shape{2, 3}, {1.0, 0.0, -1.0, 0.5, 2.0, 1.0});
  net.parameter("out.bias").value = Tensor::vector({0.0, 0.2, -0.1});
  const double x0 = 0.3, x1 = 0.8;
  const double h0 = std::max(0.0, x0 * 1.0 + x1 * 0.5 + 0.1);
  const double h1 = std::max(0.0, x0 * -1.0 + x1 * 2.0 - 0.3);
  const double z[3] = {h0 * 1.0 + h1 * 0.5, h0 * 0.0 + h1 * 2.0 + 0.2, h0 * -1.0 + h1 * 1.0 - 0.1};
  const double denom = std::exp(z[0]) + std::exp(z[1]) + std::exp(z[2]);
  const Tensor p = predict_proba(net, Tensor(Shape{1, 2}, {x0, x1}));
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k], std::exp(z[k]) / denom, 1e-15);
}

TEST(Classify, ArgmaxWithLowestIndexTies) {
  EXPECT_EQ(argmax<double>(std::vector<double>{0.1, 0.7, 0.2}), 1);
  EXPECT_EQ(argmax<double>(std::vector<double>{0.5, 0.5}), 0);
  EXPECT_EQ(argmax<double>(std::vector<double>(10, 0.1)), 0);
  auto net = build_mlp(3, {}, 4);
  for (auto& p : net.parameters()) p.value.fill(0.0);
  EXPECT_EQ(classify(net, Tensor(Shape{2, 3}, 0.5)), (std::vector<int>{0, 0}));
}

TEST(Classify, InvariantUnderLogitTemperature) {
  auto net = build_convnet({1, 12, 12}, 5, 6, {3, 4}, 3);
  randomize_running_stats(net, 1);
  const Tensor x = random_images(20, {1, 12, 12}, 4);
  const auto before = classify(net, x);
  for (double t : {0.1, 3.0, 25.0}) {
    auto scaled = net;
    for (const char* name : {"fc.weight", "fc.bias"})
      for (double& v : scaled.parameter(name).value.values()) v *= t;
    EXPECT_EQ(classify(scaled, x), before) << "temperature " << t;
  }
}

TEST(Classify, PrecisionCastAgrees) {
  auto net = build_convnet({1, 12, 12}, 3, 2, {3, 4}, 3);
  const Tensor x = random_images(5, {1, 12, 12}, 9);
  const auto pf = predict_proba(net.cast<float>(), x.cast<float>());
  const auto pd = predict_proba(net, x);
  for (std::size_t i = 0; i < pd.size(); ++i) EXPECT_NEAR(pf[i], pd[i], 1e-5);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto net = build_convnet({1, 12, 12}, 4, 3, {4, 6}, 3);
  randomize_running_stats(net, 2);
  const fs::path path = temp_file("rt.ckpt");
  save_checkpoint(net, path, {{"mu", 0.02}});
  const auto loaded = read_checkpoint(path);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    EXPECT_EQ(net.parameters()[i].value, loaded.network.parameters()[i].value);
    EXPECT_EQ(net.parameters()[i].trainable, loaded.network.parameters()[i].trainable);
  }
  const Tensor x = random_images(6, {1, 12, 12}, 3);
  EXPECT_EQ(predict_proba(net, x), predict_proba(loaded.network, x));
  EXPECT_EQ(loaded.hash, checkpoint_hash(net));
  EXPECT_EQ(loaded.hash.size(), 64u);
  EXPECT_EQ(loaded.manifest.at("train_config").at("mu"), 0.02);
  fs::remove(path);
}

TEST(Checkpoint, KnownDigest) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(std::span(reinterpret_cast<const unsigned char*>(abc.data()), abc.size())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

namespace {

std::vector<unsigned char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_all(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

// Rewrites the manifest, keeping the blob.
void edit_manifest(const fs::path& p, const std::function<void(nlohmann::json&)>& edit) {
  auto bytes = read_all(p);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t{bytes[8 + i]} << (8 * i);
  auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  edit(manifest);
  const std::string text = manifest.dump();
  std::vector<unsigned char> out(bytes.begin(), bytes.begin() + 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(text.size() >> (8 * i)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len), bytes.end());
  write_all(p, out);
}

}  // namespace

TEST(Checkpoint, EditedClassCountIsRejected) {
  const fs::path path = temp_file("k.ckpt");
  save_checkpoint(build_mlp(4, {3}, 3), path);
  edit_manifest(path, [](nlohmann::json& m) {
    m["num_classes"] = 4;
    m["architecture"]["num_classes"] = 4;
  });
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  fs::remove(path);
}

TEST(Checkpoint, VersionMismatchIsRejected) {
  const fs::path path = temp_file("v.ckpt");
  save_checkpoint(build_mlp(4, {3}, 3), path);
  edit_manifest(path, [](nlohmann::json& m) { m["version"] = 99; });
  try {
    load_checkpoint(path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos);
  }
  fs::remove(path);
}

TEST(Checkpoint, TruncatedBlobIsRejected) {
  const fs::path path = temp_file("t.ckpt");
  save_checkpoint(build_mlp(4, {3}, 3), path);
  auto bytes = read_all(path);
  bytes.resize(bytes.size() - 5);
  write_all(path, bytes);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  write_all(path, std::vector<unsigned char>{'x', 'y'});
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  fs::remove(path);
}

TEST(Checkpoint, ArchitectureMismatchIsRejected) {
  const fs::path path = temp_file("a.ckpt");
  save_checkpoint(build_mlp(4, {3}, 3), path);
  EXPECT_THROW(load_checkpoint(path, build_mlp(4, {5}, 3).architecture()), CheckpointError);
  EXPECT_NO_THROW(load_checkpoint(path, build_mlp(4, {3}, 3).architecture()));
  fs::remove(path);
}
