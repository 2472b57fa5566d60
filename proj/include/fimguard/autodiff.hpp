#pragma once

// Reverse-mode automatic differentiation over BasicTensor.
//
// A Tape owns every value produced during a forward pass. Var is a cheap
// handle (tape pointer + node index). Nodes are appended in creation order,
// so index order is a topological order and backward() is a single reverse
// sweep. A node records a backward rule only when one of its inputs requires
// a gradient. A tape and its Vars must stay on one thread.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "fimguard/errors.hpp"
#include "fimguard/tensor.hpp"

namespace fimguard {

/// Lower clamp applied by the safe log / reciprocal variants used in losses.
inline constexpr double kProbabilityClamp = 1e-12;

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Conv2d,
  BatchNorm,
  MaxPool2d,
  Relu,
  Add,
  Multiply,
  Scale,
  Negate,
  Reciprocal,
  SafeReciprocal,
  Log,
  SafeLog,
  Exp,
  Sum,
  Mean,
  MaxReduce,
  Softmax,
  Reshape,
  Slice,
};

template <class T>
class Tape;

template <class T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  const BasicTensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward rule sees: its forward output, the incoming cotangent,
/// its input values, and one gradient slot per input. A slot is null when
/// that input does not require a gradient; rules accumulate (+=) into the rest.
template <class T>
struct BackwardArgs {
  const BasicTensor<T>& out;
  const BasicTensor<T>& grad_out;
  std::span<const BasicTensor<T>* const> in;
  std::span<BasicTensor<T>* const> grad_in;
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(const BackwardArgs<T>&)>;

  struct Node {
    OpKind kind = OpKind::Leaf;
    std::vector<std::size_t> inputs;
    BasicTensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
    BasicTensor<T> grad;
    bool has_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> variable(BasicTensor<T> value) { return push_leaf(std::move(value), true); }
  Var<T> constant(BasicTensor<T> value) { return push_leaf(std::move(value), false); }

  const BasicTensor<T>& value(Var<T> v) const { return nodes_.at(v.id_).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id_).requires_grad; }
  OpKind kind(Var<T> v) const { return nodes_.at(v.id_).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Appends an op node. `backward` is kept only if some input requires grad.
  Var<T> record(OpKind kind, std::initializer_list<Var<T>> inputs, BasicTensor<T> value,
                BackwardFn backward) {
    Node n;
    n.kind = kind;
    n.value = std::move(value);
    for (const Var<T>& in : inputs) {
      if (in.tape_ != this) throw ShapeError("operands belong to different tapes");
      n.inputs.push_back(in.id_);
      n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  /// Reverse sweep from a scalar output. Gradients of any previous sweep are
  /// discarded first, so one tape can be swept repeatedly (one sweep per
  /// Jacobian row, say).
  void backward(Var<T> output) {
    if (value(output).size() != 1) {
      throw ShapeError("backward() needs a scalar output, got shape " +
                       shape_string(value(output).shape()));
    }
    backward(output, BasicTensor<T>(value(output).shape(), T{1}));
  }

  /// Vector-Jacobian product: sweep with an explicit output cotangent.
  void backward(Var<T> output, const BasicTensor<T>& seed) {
    if (seed.shape() != value(output).shape()) {
      throw ShapeError("backward seed shape " + shape_string(seed.shape()) +
                       " does not match output " + shape_string(value(output).shape()));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = BasicTensor<T>();
    }
    Node& top = nodes_[output.id_];
    if (!top.requires_grad) return;
    top.grad = seed;
    top.has_grad = true;

    std::vector<const BasicTensor<T>*> in_values;
    std::vector<BasicTensor<T>*> slots;
    for (std::size_t i = output.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      in_values.clear();
      slots.assign(n.inputs.size(), nullptr);
      for (std::size_t k = 0; k < n.inputs.size(); ++k) {
        Node& in = nodes_[n.inputs[k]];
        in_values.push_back(&in.value);
        if (!in.requires_grad) continue;
        if (!in.has_grad) {
          in.grad = BasicTensor<T>(in.value.shape(), T{0});
          in.has_grad = true;
        }
        slots[k] = &in.grad;
      }
      n.backward(BackwardArgs<T>{n.value, n.grad, in_values, slots});
      // Interior cotangents are no longer needed once propagated.
      if (n.kind != OpKind::Leaf) n.grad = BasicTensor<T>();
    }
  }

  /// Gradient of the last swept output w.r.t. the leaf `v`; zeros if the
  /// sweep never reached it.
  BasicTensor<T> grad(Var<T> v) const {
    const Node& n = nodes_.at(v.id_);
    if (!n.has_grad || n.kind != OpKind::Leaf) return BasicTensor<T>(n.value.shape(), T{0});
    return n.grad;
  }

  void clear() { nodes_.clear(); }

 private:
  Var<T> push_leaf(BasicTensor<T> value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace detail {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

template <class T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ShapeError("operands belong to different tapes");
  }
  return *a.tape();
}

template <class T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + " expects rank " + std::to_string(rank) +
                     ", got shape " + shape_string(t.shape()));
  }
}

/// Elementwise op y_i = f(x_i) with dy/dx = d(x_i, y_i).
template <class T, class Fwd, class Deriv>
Var<T> elementwise(OpKind kind, Var<T> a, Fwd fwd, Deriv deriv) {
  const BasicTensor<T>& x = a.value();
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return a.tape()->record(kind, {a}, std::move(y), [deriv](const BackwardArgs<T>& b) {
    const BasicTensor<T>& xv = *b.in[0];
    BasicTensor<T>& gx = *b.grad_in[0];
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += b.grad_out[i] * deriv(xv[i], b.out[i]);
  });
}

/// Shared implementation of add and multiply: equal shapes, or the second
/// operand's shape is a suffix of the first's (broadcast over leading axes).
template <class T, bool IsProduct>
Var<T> broadcast_binary(Var<T> a, Var<T> b) {
  Tape<T>& tape = tape_of(a, b);
  if (!is_suffix(b.shape(), a.shape())) {
    if (is_suffix(a.shape(), b.shape())) return broadcast_binary<T, IsProduct>(b, a);
    throw ShapeError(std::string(IsProduct ? "multiply" : "add") + ": incompatible shapes " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const BasicTensor<T>& x = a.value();
  const BasicTensor<T>& z = b.value();
  const std::size_t inner = z.size();
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = IsProduct ? x[i] * z[i % inner] : x[i] + z[i % inner];
  }
  return tape.record(IsProduct ? OpKind::Multiply : OpKind::Add, {a, b}, std::move(y),
                     [inner](const BackwardArgs<T>& args) {
                       const BasicTensor<T>& g = args.grad_out;
                       const BasicTensor<T>& xv = *args.in[0];
                       const BasicTensor<T>& zv = *args.in[1];
                       if (BasicTensor<T>* gx = args.grad_in[0]) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           (*gx)[i] += IsProduct ? g[i] * zv[i % inner] : g[i];
                         }
                       }
                       if (BasicTensor<T>* gz = args.grad_in[1]) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           (*gz)[i % inner] += IsProduct ? g[i] * xv[i] : g[i];
                         }
                       }
                     });
}

/// Unfolds one (C,H,W) image into a (C*k*k, Ho*Wo) column matrix.
template <class T>
void im2col(const T* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* cols) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(height);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kernel; ++ki) {
      for (std::size_t kj = 0; kj < kernel; ++kj, ++row) {
        T* dst = cols + row * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                      static_cast<std::ptrdiff_t>(pad);
            dst[oy * out_w + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                       ? img[(c * height + iy) * width + ix]
                                       : T{0};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-adds a column matrix back into an image.
template <class T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* img) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(height);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(width);
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kernel; ++ki) {
      for (std::size_t kj = 0; kj < kernel; ++kj, ++row) {
        const T* src = cols + row * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= h) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix >= 0 && ix < w) img[(c * height + iy) * width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

/// Channel layout of a (N,C) or (N,C,H,W) tensor for per-channel reductions.
struct ChannelLayout {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t spatial = 1;

  template <class T>
  static ChannelLayout of(const BasicTensor<T>& x) {
    if (x.rank() != 2 && x.rank() != 4) {
      throw ShapeError("batch_norm expects (N,C) or (N,C,H,W), got " + shape_string(x.shape()));
    }
    ChannelLayout l;
    l.batch = x.dim(0);
    l.channels = x.dim(1);
    if (x.rank() == 4) l.spatial = x.dim(2) * x.dim(3);
    return l;
  }
  std::size_t index(std::size_t n, std::size_t c, std::size_t s) const {
    return (n * channels + c) * spatial + s;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and arithmetic primitives

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::broadcast_binary<T, false>(a, b);
}

template <class T>
Var<T> multiply(Var<T> a, Var<T> b) {
  return detail::broadcast_binary<T, true>(a, b);
}

/// Multiplication by a constant scalar.
template <class T>
Var<T> scale(Var<T> a, std::type_identity_t<T> factor) {
  return detail::elementwise(
      OpKind::Scale, a, [factor](T x) { return x * factor; },
      [factor](T, T) { return factor; });
}

template <class T>
Var<T> negate(Var<T> a) {
  return detail::elementwise(
      OpKind::Negate, a, [](T x) { return -x; }, [](T, T) { return T{-1}; });
}

template <class T>
Var<T> relu(Var<T> a) {
  return detail::elementwise(
      OpKind::Relu, a, [](T x) { return x > T{0} ? x : T{0}; },
      [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

template <class T>
Var<T> exp(Var<T> a) {
  return detail::elementwise(
      OpKind::Exp, a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// 1/x on strictly positive inputs; DomainError otherwise.
template <class T>
Var<T> reciprocal(Var<T> a) {
  for (T v : a.value().values()) {
    if (!(v > T{0})) throw DomainError("reciprocal of non-positive value");
  }
  return detail::elementwise(
      OpKind::Reciprocal, a, [](T x) { return T{1} / x; }, [](T x, T) { return -T{1} / (x * x); });
}

/// log x on strictly positive inputs; DomainError otherwise.
template <class T>
Var<T> log(Var<T> a) {
  for (T v : a.value().values()) {
    if (!(v > T{0})) throw DomainError("log of non-positive value");
  }
  return detail::elementwise(
      OpKind::Log, a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

/// 1/max(x, 1e-12). Zero gradient where the clamp is active.
template <class T>
Var<T> safe_reciprocal(Var<T> a) {
  const T floor = static_cast<T>(kProbabilityClamp);
  return detail::elementwise(
      OpKind::SafeReciprocal, a, [floor](T x) { return T{1} / std::max(x, floor); },
      [floor](T x, T) { return x > floor ? -T{1} / (x * x) : T{0}; });
}

/// log max(x, 1e-12). Zero gradient where the clamp is active.
template <class T>
Var<T> safe_log(Var<T> a) {
  const T floor = static_cast<T>(kProbabilityClamp);
  return detail::elementwise(
      OpKind::SafeLog, a, [floor](T x) { return std::log(std::max(x, floor)); },
      [floor](T x, T) { return x > floor ? T{1} / x : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

/// Sum of all elements, as a scalar.
template <class T>
Var<T> sum(Var<T> a) {
  T acc{0};
  for (T v : a.value().values()) acc += v;
  return a.tape()->record(OpKind::Sum, {a}, BasicTensor<T>::scalar(acc),
                          [](const BackwardArgs<T>& b) {
                            const T g = b.grad_out[0];
                            for (T& v : b.grad_in[0]->values()) v += g;
                          });
}

/// Mean of all elements, as a scalar.
template <class T>
Var<T> mean(Var<T> a) {
  const T n = static_cast<T>(a.value().size());
  T acc{0};
  for (T v : a.value().values()) acc += v;
  return a.tape()->record(OpKind::Mean, {a}, BasicTensor<T>::scalar(acc / n),
                          [n](const BackwardArgs<T>& b) {
                            const T g = b.grad_out[0] / n;
                            for (T& v : b.grad_in[0]->values()) v += g;
                          });
}

/// Maximum over the last axis; ties route the gradient to the lowest index.
template <class T>
Var<T> max_reduce(Var<T> a) {
  const BasicTensor<T>& x = a.value();
  if (x.rank() == 0) throw ShapeError("max_reduce of a scalar");
  const std::size_t inner = x.shape().back();
  const std::size_t rows = x.size() / inner;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  BasicTensor<T> y(out_shape);
  std::vector<std::size_t> arg(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < inner; ++k) {
      if (x[r * inner + k] > x[r * inner + best]) best = k;
    }
    arg[r] = r * inner + best;
    y[r] = x[arg[r]];
  }
  return a.tape()->record(OpKind::MaxReduce, {a}, std::move(y),
                          [arg = std::move(arg)](const BackwardArgs<T>& b) {
                            for (std::size_t r = 0; r < arg.size(); ++r) {
                              (*b.grad_in[0])[arg[r]] += b.grad_out[r];
                            }
                          });
}

/// Softmax over the last axis via max-shifted exponentials.
template <class T>
Var<T> softmax(Var<T> a) {
  const BasicTensor<T>& x = a.value();
  if (x.rank() == 0) throw ShapeError("softmax of a scalar");
  const std::size_t inner = x.shape().back();
  const std::size_t rows = x.size() / inner;
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * inner;
    T* yr = y.data() + r * inner;
    const T shift = *std::max_element(xr, xr + inner);
    T total{0};
    for (std::size_t k = 0; k < inner; ++k) total += (yr[k] = std::exp(xr[k] - shift));
    for (std::size_t k = 0; k < inner; ++k) yr[k] /= total;
  }
  return a.tape()->record(OpKind::Softmax, {a}, std::move(y),
                          [inner, rows](const BackwardArgs<T>& b) {
                            for (std::size_t r = 0; r < rows; ++r) {
                              const T* p = b.out.data() + r * inner;
                              const T* g = b.grad_out.data() + r * inner;
                              T* gx = b.grad_in[0]->data() + r * inner;
                              T inner_product{0};
                              for (std::size_t k = 0; k < inner; ++k) inner_product += g[k] * p[k];
                              for (std::size_t k = 0; k < inner; ++k) gx[k] += p[k] * (g[k] - inner_product);
                            }
                          });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  BasicTensor<T> y = a.value().reshaped(std::move(shape));
  return a.tape()->record(OpKind::Reshape, {a}, std::move(y), [](const BackwardArgs<T>& b) {
    BasicTensor<T>& gx = *b.grad_in[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += b.grad_out[i];
  });
}

/// Elements [begin, end) along `axis`.
template <class T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end) {
  const BasicTensor<T>& x = a.value();
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t extent = x.dim(axis);
  const std::size_t width = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = width;
  BasicTensor<T> y(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.data() + (o * extent + begin) * inner, width * inner,
                y.data() + o * width * inner);
  }
  return a.tape()->record(OpKind::Slice, {a}, std::move(y),
                          [=](const BackwardArgs<T>& b) {
                            for (std::size_t o = 0; o < outer; ++o) {
                              const T* g = b.grad_out.data() + o * width * inner;
                              T* gx = b.grad_in[0]->data() + (o * extent + begin) * inner;
                              for (std::size_t i = 0; i < width * inner; ++i) gx[i] += g[i];
                            }
                          });
}

// ---------------------------------------------------------------------------
// Linear algebra and layer primitives

/// (M,K) x (K,N) -> (M,N).
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b);
  const BasicTensor<T>& x = a.value();
  const BasicTensor<T>& w = b.value();
  detail::require_rank(x, 2, "matmul");
  detail::require_rank(w, 2, "matmul");
  if (x.dim(1) != w.dim(0)) {
    throw ShapeError("matmul: inner dimensions differ in " + shape_string(x.shape()) + " x " +
                     shape_string(w.shape()));
  }
  const auto m = static_cast<Eigen::Index>(x.dim(0));
  const auto k = static_cast<Eigen::Index>(x.dim(1));
  const auto n = static_cast<Eigen::Index>(w.dim(1));
  BasicTensor<T> y(Shape{x.dim(0), w.dim(1)});
  detail::MatrixMap<T>(y.data(), m, n).noalias() =
      detail::ConstMatrixMap<T>(x.data(), m, k) * detail::ConstMatrixMap<T>(w.data(), k, n);
  return tape.record(OpKind::MatMul, {a, b}, std::move(y), [m, k, n](const BackwardArgs<T>& args) {
    detail::ConstMatrixMap<T> g(args.grad_out.data(), m, n);
    if (BasicTensor<T>* gx = args.grad_in[0]) {
      detail::MatrixMap<T>(gx->data(), m, k).noalias() +=
          g * detail::ConstMatrixMap<T>(args.in[1]->data(), k, n).transpose();
    }
    if (BasicTensor<T>* gw = args.grad_in[1]) {
      detail::MatrixMap<T>(gw->data(), k, n).noalias() +=
          detail::ConstMatrixMap<T>(args.in[0]->data(), m, k).transpose() * g;
    }
  });
}

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// x (N,C,H,W), weight (O,C,k,k), bias (O) -> (N,O,Ho,Wo).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, Conv2dAttrs attrs) {
  Tape<T>& tape = detail::tape_of(x, weight);
  detail::tape_of(x, bias);
  const BasicTensor<T>& xv = x.value();
  const BasicTensor<T>& wv = weight.value();
  detail::require_rank(xv, 4, "conv2d input");
  detail::require_rank(wv, 4, "conv2d weight");
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  const std::size_t out_ch = wv.dim(0), kernel = wv.dim(2);
  if (wv.dim(1) != channels || wv.dim(3) != kernel || bias.value().shape() != Shape{out_ch}) {
    throw ShapeError("conv2d: weight " + shape_string(wv.shape()) + " / bias " +
                     shape_string(bias.value().shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  }
  if (height + 2 * attrs.pad < kernel || width + 2 * attrs.pad < kernel || attrs.stride == 0) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  const std::size_t out_h = (height + 2 * attrs.pad - kernel) / attrs.stride + 1;
  const std::size_t out_w = (width + 2 * attrs.pad - kernel) / attrs.stride + 1;
  const std::size_t patch = channels * kernel * kernel;
  const std::size_t pixels = out_h * out_w;
  const auto P = static_cast<Eigen::Index>(patch);
  const auto Q = static_cast<Eigen::Index>(pixels);
  const auto O = static_cast<Eigen::Index>(out_ch);

  BasicTensor<T> y(Shape{batch, out_ch, out_h, out_w});
  std::vector<T> cols(patch * pixels);
  detail::ConstMatrixMap<T> wmat(wv.data(), O, P);
  const T* bv = bias.value().data();
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(xv.data() + n * channels * height * width, channels, height, width, kernel,
                   attrs.stride, attrs.pad, out_h, out_w, cols.data());
    detail::MatrixMap<T> out(y.data() + n * out_ch * pixels, O, Q);
    out.noalias() = wmat * detail::ConstMatrixMap<T>(cols.data(), P, Q);
    for (std::size_t o = 0; o < out_ch; ++o) out.row(static_cast<Eigen::Index>(o)).array() += bv[o];
  }

  return tape.record(
      OpKind::Conv2d, {x, weight, bias}, std::move(y), [=](const BackwardArgs<T>& args) {
        const BasicTensor<T>& in = *args.in[0];
        detail::ConstMatrixMap<T> w(args.in[1]->data(), O, P);
        BasicTensor<T>* gx = args.grad_in[0];
        BasicTensor<T>* gw = args.grad_in[1];
        BasicTensor<T>* gb = args.grad_in[2];
        std::vector<T> col_buf(patch * pixels);
        for (std::size_t n = 0; n < batch; ++n) {
          detail::ConstMatrixMap<T> g(args.grad_out.data() + n * out_ch * pixels, O, Q);
          if (gb) {
            for (std::size_t o = 0; o < out_ch; ++o) (*gb)[o] += g.row(static_cast<Eigen::Index>(o)).sum();
          }
          if (gw) {
            detail::im2col(in.data() + n * channels * height * width, channels, height, width,
                           kernel, attrs.stride, attrs.pad, out_h, out_w, col_buf.data());
            detail::MatrixMap<T>(gw->data(), O, P).noalias() +=
                g * detail::ConstMatrixMap<T>(col_buf.data(), P, Q).transpose();
          }
          if (gx) {
            detail::MatrixMap<T>(col_buf.data(), P, Q).noalias() = w.transpose() * g;
            detail::col2im(col_buf.data(), channels, height, width, kernel, attrs.stride,
                           attrs.pad, out_h, out_w, gx->data() + n * channels * height * width);
          }
        }
      });
}

/// Non-overlapping-or-strided max pooling over (N,C,H,W); ties go to the
/// first element in row-major window order.
template <class T>
Var<T> max_pool2d(Var<T> x, std::size_t window, std::size_t stride) {
  const BasicTensor<T>& xv = x.value();
  detail::require_rank(xv, 4, "max_pool2d");
  const std::size_t planes = xv.dim(0) * xv.dim(1), height = xv.dim(2), width = xv.dim(3);
  if (window == 0 || stride == 0 || window > height || window > width) {
    throw ShapeError("max_pool2d: window does not fit input " + shape_string(xv.shape()));
  }
  const std::size_t out_h = (height - window) / stride + 1;
  const std::size_t out_w = (width - window) / stride + 1;
  BasicTensor<T> y(Shape{xv.dim(0), xv.dim(1), out_h, out_w});
  std::vector<std::size_t> arg(y.size());
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = xv.data() + p * height * width;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        std::size_t best = (oy * stride) * width + ox * stride;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = (oy * stride + i) * width + ox * stride + j;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (p * out_h + oy) * out_w + ox;
        arg[o] = p * height * width + best;
        y[o] = src[best];
      }
    }
  }
  return x.tape()->record(OpKind::MaxPool2d, {x}, std::move(y),
                          [arg = std::move(arg)](const BackwardArgs<T>& b) {
                            for (std::size_t o = 0; o < arg.size(); ++o) {
                              (*b.grad_in[0])[arg[o]] += b.grad_out[o];
                            }
                          });
}

/// Per-channel statistics of one batch (biased variance).
template <class T>
struct BatchStatistics {
  std::vector<T> mean;
  std::vector<T> variance;
  std::size_t count = 0;
};

/// Batch normalization with statistics of the current batch (training mode).
/// The batch statistics are written to `stats` so the caller can update its
/// running averages.
template <class T>
Var<T> batch_norm_train(Var<T> x, Var<T> gamma, Var<T> beta, std::type_identity_t<T> eps,
                        std::type_identity_t<BatchStatistics<T>>* stats = nullptr) {
  Tape<T>& tape = detail::tape_of(x, gamma);
  detail::tape_of(x, beta);
  const BasicTensor<T>& xv = x.value();
  const auto layout = detail::ChannelLayout::of(xv);
  const Shape channel_shape{layout.channels};
  if (gamma.value().shape() != channel_shape || beta.value().shape() != channel_shape) {
    throw ShapeError("batch_norm: gamma/beta must have shape " + shape_string(channel_shape));
  }
  const std::size_t count = layout.batch * layout.spatial;
  std::vector<T> mu(layout.channels, T{0}), inv_std(layout.channels), var(layout.channels, T{0});
  for (std::size_t c = 0; c < layout.channels; ++c) {
    T acc{0};
    for (std::size_t n = 0; n < layout.batch; ++n)
      for (std::size_t s = 0; s < layout.spatial; ++s) acc += xv[layout.index(n, c, s)];
    mu[c] = acc / static_cast<T>(count);
    T sq{0};
    for (std::size_t n = 0; n < layout.batch; ++n)
      for (std::size_t s = 0; s < layout.spatial; ++s) {
        const T d = xv[layout.index(n, c, s)] - mu[c];
        sq += d * d;
      }
    var[c] = sq / static_cast<T>(count);
    inv_std[c] = T{1} / std::sqrt(var[c] + eps);
  }
  if (stats) *stats = BatchStatistics<T>{mu, var, count};

  const T* g = gamma.value().data();
  const T* bt = beta.value().data();
  BasicTensor<T> y(xv.shape());
  for (std::size_t n = 0; n < layout.batch; ++n)
    for (std::size_t c = 0; c < layout.channels; ++c)
      for (std::size_t s = 0; s < layout.spatial; ++s) {
        const std::size_t i = layout.index(n, c, s);
        y[i] = g[c] * (xv[i] - mu[c]) * inv_std[c] + bt[c];
      }

  return tape.record(
      OpKind::BatchNorm, {x, gamma, beta}, std::move(y),
      [layout, count, mu = std::move(mu), inv_std = std::move(inv_std)](const BackwardArgs<T>& b) {
        const BasicTensor<T>& in = *b.in[0];
        const T* gam = b.in[1]->data();
        const BasicTensor<T>& dy = b.grad_out;
        const T m = static_cast<T>(count);
        for (std::size_t c = 0; c < layout.channels; ++c) {
          T sum_dy{0}, sum_dy_xhat{0};
          for (std::size_t n = 0; n < layout.batch; ++n)
            for (std::size_t s = 0; s < layout.spatial; ++s) {
              const std::size_t i = layout.index(n, c, s);
              sum_dy += dy[i];
              sum_dy_xhat += dy[i] * (in[i] - mu[c]) * inv_std[c];
            }
          if (b.grad_in[1]) (*b.grad_in[1])[c] += sum_dy_xhat;
          if (b.grad_in[2]) (*b.grad_in[2])[c] += sum_dy;
          if (BasicTensor<T>* gx = b.grad_in[0]) {
            const T k = gam[c] * inv_std[c];
            for (std::size_t n = 0; n < layout.batch; ++n)
              for (std::size_t s = 0; s < layout.spatial; ++s) {
                const std::size_t i = layout.index(n, c, s);
                const T xhat = (in[i] - mu[c]) * inv_std[c];
                (*gx)[i] += k * (dy[i] - sum_dy / m - xhat * sum_dy_xhat / m);
              }
          }
        }
      });
}

/// Batch normalization with fixed (running) statistics: inference mode.
/// Each sample is normalized independently of the rest of the batch.
template <class T>
Var<T> batch_norm_infer(Var<T> x, Var<T> gamma, Var<T> beta, std::span<const std::type_identity_t<T>> running_mean,
                        std::span<const std::type_identity_t<T>> running_var, std::type_identity_t<T> eps) {
  Tape<T>& tape = detail::tape_of(x, gamma);
  detail::tape_of(x, beta);
  const BasicTensor<T>& xv = x.value();
  const auto layout = detail::ChannelLayout::of(xv);
  const Shape channel_shape{layout.channels};
  if (gamma.value().shape() != channel_shape || beta.value().shape() != channel_shape ||
      running_mean.size() != layout.channels || running_var.size() != layout.channels) {
    throw ShapeError("batch_norm: parameters must have shape " + shape_string(channel_shape));
  }
  std::vector<T> mu(running_mean.begin(), running_mean.end());
  std::vector<T> inv_std(layout.channels);
  for (std::size_t c = 0; c < layout.channels; ++c) inv_std[c] = T{1} / std::sqrt(running_var[c] + eps);
  const T* g = gamma.value().data();
  const T* bt = beta.value().data();
  BasicTensor<T> y(xv.shape());
  for (std::size_t n = 0; n < layout.batch; ++n)
    for (std::size_t c = 0; c < layout.channels; ++c)
      for (std::size_t s = 0; s < layout.spatial; ++s) {
        const std::size_t i = layout.index(n, c, s);
        y[i] = g[c] * (xv[i] - mu[c]) * inv_std[c] + bt[c];
      }
  return tape.record(
      OpKind::BatchNorm, {x, gamma, beta}, std::move(y),
      [layout, mu = std::move(mu), inv_std = std::move(inv_std)](const BackwardArgs<T>& b) {
        const BasicTensor<T>& in = *b.in[0];
        const T* gam = b.in[1]->data();
        for (std::size_t n = 0; n < layout.batch; ++n)
          for (std::size_t c = 0; c < layout.channels; ++c)
            for (std::size_t s = 0; s < layout.spatial; ++s) {
              const std::size_t i = layout.index(n, c, s);
              const T dy = b.grad_out[i];
              if (b.grad_in[0]) (*b.grad_in[0])[i] += dy * gam[c] * inv_std[c];
              if (b.grad_in[1]) (*b.grad_in[1])[c] += dy * (in[i] - mu[c]) * inv_std[c];
              if (b.grad_in[2]) (*b.grad_in[2])[c] += dy;
            }
      });
}

}  // namespace fimguard
