#pragma once

// Classifier architectures built from tape primitives. A Network owns named
// parameters (trainable weights plus batch-norm running statistics) and an
// ordered layer list; forward passes bind the parameters onto a tape.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimguard/autodiff.hpp"
#include "fimguard/errors.hpp"
#include "fimguard/random.hpp"
#include "fimguard/tensor.hpp"

namespace fimguard {

enum class LayerKind { Conv2d, BatchNorm, Relu, MaxPool2d, Flatten, Dense };

/// Training mode normalizes with batch statistics; inference mode with the
/// stored running statistics, so each sample is processed independently.
enum class ForwardMode { Train, Infer };

struct Layer {
  LayerKind kind;
  std::vector<std::size_t> params;  // indices into Network::parameters()
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

template <class T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  bool trainable = true;
};

/// Serializable description from which a network can be rebuilt.
struct Architecture {
  std::string kind;  // "convnet" or "mlp"
  Shape input_shape;
  std::size_t num_classes = 0;
  std::vector<std::size_t> widths;  // conv channels or hidden layer sizes
  std::size_t kernel = 5;

  nlohmann::json to_json() const {
    return {{"kind", kind}, {"input_shape", input_shape}, {"num_classes", num_classes},
            {"widths", widths}, {"kernel", kernel}};
  }

  static Architecture from_json(const nlohmann::json& j) {
    Architecture a;
    a.kind = j.at("kind").get<std::string>();
    a.input_shape = j.at("input_shape").get<Shape>();
    a.num_classes = j.at("num_classes").get<std::size_t>();
    a.widths = j.at("widths").get<std::vector<std::size_t>>();
    a.kernel = j.at("kernel").get<std::size_t>();
    return a;
  }

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <class T>
class Network {
 public:
  Network() = default;
  explicit Network(Architecture arch) : arch_(std::move(arch)) {}

  const Architecture& architecture() const { return arch_; }
  std::size_t num_classes() const { return arch_.num_classes; }
  const Shape& input_shape() const { return arch_.input_shape; }
  std::size_t input_size() const { return shape_size(arch_.input_shape); }

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  const std::vector<Layer>& layers() const { return layers_; }

  Parameter<T>& parameter(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw ShapeError("no parameter named " + name);
  }

  const Parameter<T>& parameter(const std::string& name) const {
    return const_cast<Network*>(this)->parameter(name);
  }

  std::size_t trainable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

  std::size_t add_parameter(std::string name, BasicTensor<T> value, bool trainable) {
    for (const auto& p : params_)
      if (p.name == name) throw ShapeError("duplicate parameter name " + name);
    params_.push_back(Parameter<T>{std::move(name), std::move(value), trainable});
    return params_.size() - 1;
  }

  void add_layer(Layer layer) { layers_.push_back(std::move(layer)); }

  /// Places every parameter on `tape`: trainable ones as variables when
  /// `differentiable`, everything else as constants.
  std::vector<Var<T>> bind(Tape<T>& tape, bool differentiable) const {
    std::vector<Var<T>> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) {
      vars.push_back(differentiable && p.trainable ? tape.variable(p.value) : tape.constant(p.value));
    }
    return vars;
  }

  /// Logits (B, K) for x of shape (B, input_shape...). In training mode the
  /// per-layer batch statistics are appended to `stats`.
  Var<T> logits(const std::vector<Var<T>>& bound, Var<T> x, ForwardMode mode,
                std::vector<BatchStatistics<T>>* stats = nullptr) const {
    check_input(x.value());
    Var<T> h = x;
    for (const Layer& layer : layers_) {
      switch (layer.kind) {
        case LayerKind::Conv2d:
          h = conv2d(h, bound[layer.params[0]], bound[layer.params[1]], Conv2dAttrs{layer.stride, layer.pad});
          break;
        case LayerKind::BatchNorm:
          if (mode == ForwardMode::Train) {
            BatchStatistics<T> s;
            h = batch_norm_train(h, bound[layer.params[0]], bound[layer.params[1]], static_cast<T>(kBatchNormEps), &s);
            if (stats) stats->push_back(std::move(s));
          } else {
            h = batch_norm_infer<T>(h, bound[layer.params[0]], bound[layer.params[1]],
                                    params_[layer.params[2]].value.values(), params_[layer.params[3]].value.values(),
                                    static_cast<T>(kBatchNormEps));
          }
          break;
        case LayerKind::Relu:
          h = relu(h);
          break;
        case LayerKind::MaxPool2d:
          h = max_pool2d(h, layer.kernel, layer.stride);
          break;
        case LayerKind::Flatten: {
          const std::size_t batch = h.shape()[0];
          h = reshape(h, Shape{batch, h.value().size() / batch});
          break;
        }
        case LayerKind::Dense:
          h = add(matmul(h, bound[layer.params[0]]), bound[layer.params[1]]);
          break;
      }
    }
    return h;
  }

  /// Inference-mode logits with all parameters held constant.
  Var<T> logits(Tape<T>& tape, Var<T> x) const { return logits(bind(tape, false), x, ForwardMode::Infer); }

  Var<T> probabilities(Tape<T>& tape, Var<T> x) const { return softmax(logits(tape, x)); }

  /// Exponential moving average of batch-norm statistics, collected in
  /// layer order by a training-mode forward pass. Variance is unbiased.
  void update_running_statistics(const std::vector<BatchStatistics<T>>& stats, double momentum = kBatchNormMomentum) {
    std::size_t next = 0;
    const T m = static_cast<T>(momentum);
    for (const Layer& layer : layers_) {
      if (layer.kind != LayerKind::BatchNorm) continue;
      if (next >= stats.size()) throw ShapeError("missing batch statistics for a batch-norm layer");
      const BatchStatistics<T>& s = stats[next++];
      auto& mean = params_[layer.params[2]].value;
      auto& var = params_[layer.params[3]].value;
      const T correction = s.count > 1 ? static_cast<T>(s.count) / static_cast<T>(s.count - 1) : T{1};
      for (std::size_t c = 0; c < mean.size(); ++c) {
        mean[c] = (T{1} - m) * mean[c] + m * s.mean[c];
        var[c] = (T{1} - m) * var[c] + m * s.variance[c] * correction;
      }
    }
  }

  template <class U>
  Network<U> cast() const {
    Network<U> out(arch_);
    for (const auto& p : params_) out.add_parameter(p.name, p.value.template cast<U>(), p.trainable);
    for (const auto& l : layers_) out.add_layer(l);
    return out;
  }

 private:
  void check_input(const BasicTensor<T>& x) const {
    const Shape& s = x.shape();
    const bool ok = s.size() == arch_.input_shape.size() + 1 &&
                    std::equal(arch_.input_shape.begin(), arch_.input_shape.end(), s.begin() + 1);
    if (!ok) {
      throw ShapeError("network expects (B, " + shape_string(arch_.input_shape).substr(1) + ", got " +
                       shape_string(s));
    }
  }

  Architecture arch_;
  std::vector<Parameter<T>> params_;
  std::vector<Layer> layers_;
};

namespace detail {

template <class T>
BasicTensor<T> uniform_init(Rng& rng, Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
void add_dense(Network<T>& net, Rng& rng, const std::string& name, std::size_t in, std::size_t out) {
  const std::size_t w = net.add_parameter(name + ".weight", uniform_init<T>(rng, Shape{in, out}, in), true);
  const std::size_t b = net.add_parameter(name + ".bias", uniform_init<T>(rng, Shape{out}, in), true);
  net.add_layer(Layer{LayerKind::Dense, {w, b}});
}

}  // namespace detail

/// conv(c1, k x k, pad k/2) -> BN -> relu -> maxpool 2 -> conv(c2) -> BN ->
/// relu -> maxpool 2 -> flatten -> dense(K). Softmax is applied by the
/// caller (probabilities(), predict_proba()).
template <class T = double>
Network<T> build_convnet(Shape input_shape = {1, 28, 28}, std::size_t num_classes = 10, std::uint64_t seed = 0,
                         std::vector<std::size_t> channels = {16, 32}, std::size_t kernel = 5) {
  if (input_shape.size() != 3 || num_classes < 2 || channels.empty() || kernel % 2 == 0) {
    throw ConfigError("convnet needs a (C,H,W) input, K >= 2, and an odd kernel");
  }
  Network<T> net(Architecture{"convnet", input_shape, num_classes, channels, kernel});
  Rng rng(seed);
  std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  for (std::size_t i = 0; i < channels.size(); ++i) {
    const std::string n = "conv" + std::to_string(i + 1);
    const std::size_t fan_in = c * kernel * kernel;
    const std::size_t wi =
        net.add_parameter(n + ".weight", detail::uniform_init<T>(rng, Shape{channels[i], c, kernel, kernel}, fan_in), true);
    const std::size_t bi = net.add_parameter(n + ".bias", detail::uniform_init<T>(rng, Shape{channels[i]}, fan_in), true);
    net.add_layer(Layer{LayerKind::Conv2d, {wi, bi}, kernel, 1, kernel / 2});
    const std::string b = "bn" + std::to_string(i + 1);
    const Shape cs{channels[i]};
    net.add_layer(Layer{LayerKind::BatchNorm,
                        {net.add_parameter(b + ".gamma", BasicTensor<T>(cs, T{1}), true),
                         net.add_parameter(b + ".beta", BasicTensor<T>(cs, T{0}), true),
                         net.add_parameter(b + ".running_mean", BasicTensor<T>(cs, T{0}), false),
                         net.add_parameter(b + ".running_var", BasicTensor<T>(cs, T{1}), false)}});
    net.add_layer(Layer{LayerKind::Relu});
    if (h < 2 || w < 2) throw ConfigError("input too small for pooling");
    net.add_layer(Layer{LayerKind::MaxPool2d, {}, 2, 2});
    c = channels[i];
    h /= 2;
    w /= 2;
  }
  net.add_layer(Layer{LayerKind::Flatten});
  detail::add_dense(net, rng, "fc", c * h * w, num_classes);
  return net;
}

/// Dense/relu stack over the flattened input, ending in dense(K).
template <class T = double>
Network<T> build_mlp(Shape input_shape, std::vector<std::size_t> hidden, std::size_t num_classes,
                     std::uint64_t seed = 0) {
  if (input_shape.empty() || shape_size(input_shape) == 0 || num_classes < 2) {
    throw ConfigError("mlp needs a positive input size and K >= 2");
  }
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("mlp hidden widths must be positive");
  Network<T> net(Architecture{"mlp", input_shape, num_classes, hidden, 0});
  Rng rng(seed);
  if (input_shape.size() > 1) net.add_layer(Layer{LayerKind::Flatten});
  std::size_t width = shape_size(input_shape);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    detail::add_dense(net, rng, "fc" + std::to_string(i + 1), width, hidden[i]);
    net.add_layer(Layer{LayerKind::Relu});
    width = hidden[i];
  }
  detail::add_dense(net, rng, "out", width, num_classes);
  return net;
}

template <class T = double>
Network<T> build_mlp(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t num_classes,
                     std::uint64_t seed = 0) {
  return build_mlp<T>(Shape{input_dim}, std::move(hidden), num_classes, seed);
}

/// Rebuilds an untrained network from its description.
template <class T = double>
Network<T> build_network(const Architecture& arch, std::uint64_t seed = 0) {
  if (arch.kind == "convnet") return build_convnet<T>(arch.input_shape, arch.num_classes, seed, arch.widths, arch.kernel);
  if (arch.kind == "mlp") return build_mlp<T>(arch.input_shape, arch.widths, arch.num_classes, seed);
  throw ConfigError("unknown architecture '" + arch.kind + "' (expected convnet or mlp)");
}

/// Index of the largest entry; ties go to the lowest index.
template <class T>
int argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return static_cast<int>(best);
}

/// Softmax probabilities (B, K) in inference mode, evaluated in chunks.
template <class T>
BasicTensor<T> predict_proba(const Network<T>& net, const BasicTensor<T>& x, std::size_t chunk = 256) {
  if (x.rank() == 0) throw ShapeError("predict_proba needs a batch");
  const std::size_t batch = x.dim(0);
  const std::size_t per = x.size() / batch;
  const std::size_t k = net.num_classes();
  BasicTensor<T> out(Shape{batch, k});
  for (std::size_t start = 0; start < batch; start += chunk) {
    const std::size_t n = std::min(chunk, batch - start);
    Shape shape = x.shape();
    shape[0] = n;
    Tape<T> tape;
    auto xv = tape.constant(BasicTensor<T>(shape, std::vector<T>(x.data() + start * per, x.data() + (start + n) * per)));
    const auto p = net.probabilities(tape, xv);
    std::copy_n(p.value().data(), n * k, out.data() + start * k);
  }
  return out;
}

template <class T>
std::vector<int> classify_proba(const BasicTensor<T>& proba) {
  const std::size_t k = proba.shape().back();
  std::vector<int> labels(proba.size() / k);
  for (std::size_t r = 0; r < labels.size(); ++r) labels[r] = argmax<T>(proba.values().subspan(r * k, k));
  return labels;
}

template <class T>
std::vector<int> classify(const Network<T>& net, const BasicTensor<T>& x) {
  return classify_proba(predict_proba(net, x));
}

}  // namespace fimguard
