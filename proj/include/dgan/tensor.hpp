#pragma once

// Dense tensors with define-by-run reverse-mode differentiation.
//
// Every op that receives at least one input with requires_grad() set (and
// runs while grad mode is enabled) links its result to those inputs and
// stores a backward rule. backward() orders the reachable graph
// topologically and replays the rules from the loss back to the leaves.

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace dgan {

/// Thrown when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a caller breaks an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Shape {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims) {
    if (dims.size() > kMaxRank) throw DimensionError("rank > 4 is not supported");
    for (auto d : dims) push(d);
  }
  explicit Shape(std::span<const std::size_t> dims) {
    if (dims.size() > kMaxRank) throw DimensionError("rank > 4 is not supported");
    for (auto d : dims) push(d);
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }
  std::span<const std::size_t> dims() const { return {dims_.data(), rank_}; }

  bool operator==(const Shape& o) const {
    return rank_ == o.rank_ && std::equal(dims_.begin(), dims_.begin() + rank_, o.dims_.begin());
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ']';
    return os.str();
  }

 private:
  void push(std::size_t d) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
    dims_[rank_++] = d;
  }

  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

namespace detail {

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Sets graph recording on or off for its lifetime.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = enabled; }
  ~GradModeGuard() { detail::grad_mode_flag() = previous_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<NodeT>()) {
    if (shape.numel() != values.size())
      throw DimensionError("shape " + shape.str() + " holds " + std::to_string(shape.numel()) +
                           " values, got " + std::to_string(values.size()));
    node_->shape = shape;
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return BasicTensor(shape, std::vector<T>(shape.numel(), T(0)), requires_grad);
  }
  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    return BasicTensor(shape, std::vector<T>(shape.numel(), value), requires_grad);
  }
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.rank(); }
  std::size_t dim(std::size_t i) const { return node_->shape[i]; }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// In-place access for optimizers and initializers; never use on op outputs
  /// that are still part of a live graph.
  std::span<T> mutable_data() { return node_->data; }
  std::vector<T> values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void clear_grad() { std::vector<T>().swap(node_->grad); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  /// Same values, no history.
  BasicTensor detach() const { return BasicTensor(shape(), node_->data, false); }
  BasicTensor clone() const { return BasicTensor(shape(), node_->data, requires_grad()); }

  BasicTensor reshape(Shape s) const;

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

using Tensor = BasicTensor<float>;

/// Builds an op result and, when grad mode is on and an input tracks
/// gradients, wires the backward rule. The rule receives the result node
/// (whose grad is populated) and must accumulate into its parents via
/// accumulate_grad().
template <class T>
BasicTensor<T> make_result(Shape shape, std::vector<T> values, const char* op,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           std::function<void(detail::Node<T>&)> rule) {
  BasicTensor<T> out(shape, std::move(values));
#ifndef NDEBUG
  auto all_finite = [](std::span<const T> d) {
    return std::all_of(d.begin(), d.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
  };
  bool inputs_finite = true;
  for (auto* in : inputs) inputs_finite = inputs_finite && all_finite(in->data());
  assert(!inputs_finite || all_finite(out.data()) || !"non-finite output from finite inputs");
#endif
  out.node()->op = op;
  if (!grad_enabled()) return out;
  bool tracked = false;
  for (auto* in : inputs) tracked = tracked || in->requires_grad();
  if (!tracked) return out;
  auto* node = out.node();
  node->requires_grad = true;
  for (auto* in : inputs) node->parents.push_back(in->node_ptr());
  node->backward = std::move(rule);
  return out;
}

template <class T>
inline std::vector<T>* grad_sink(detail::Node<T>* parent) {
  return parent->requires_grad ? &parent->ensure_grad() : nullptr;
}

template <class T>
BasicTensor<T> BasicTensor<T>::reshape(Shape s) const {
  if (s.numel() != numel())
    throw DimensionError("cannot reshape " + shape().str() + " to " + s.str());
  auto* in = node();
  return make_result<T>(s, node_->data, "reshape", {this}, [in](detail::Node<T>& self) {
    if (auto* g = grad_sink(in))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

/// Populates grad buffers of every requires_grad leaf reachable from `loss`.
/// Leaf gradients accumulate across calls; intermediate buffers are freed.
template <class T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      NodeT* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward(*n);
    if (n != loss.node()) std::vector<T>().swap(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops

namespace detail {

template <class T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                         b.shape().str());
}

template <class T, class F>
std::vector<T> zip(const BasicTensor<T>& a, const BasicTensor<T>& b, F f) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

template <class T, class F>
std::vector<T> map(const BasicTensor<T>& a, F f) {
  std::vector<T> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace detail

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto *pa = a.node(), *pb = b.node();
  return make_result<T>(a.shape(), detail::zip(a, b, [](T x, T y) { return x + y; }), "add",
                        {&a, &b}, [pa, pb](detail::Node<T>& self) {
                          for (auto* p : {pa, pb})
                            if (auto* g = grad_sink(p))
                              for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                        });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto *pa = a.node(), *pb = b.node();
  return make_result<T>(a.shape(), detail::zip(a, b, [](T x, T y) { return x - y; }), "sub",
                        {&a, &b}, [pa, pb](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                          if (auto* g = grad_sink(pb))
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
                        });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto *pa = a.node(), *pb = b.node();
  return make_result<T>(a.shape(), detail::zip(a, b, [](T x, T y) { return x * y; }), "mul",
                        {&a, &b}, [pa, pb](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i)
                              (*g)[i] += self.grad[i] * pb->data[i];
                          if (auto* g = grad_sink(pb))
                            for (std::size_t i = 0; i < g->size(); ++i)
                              (*g)[i] += self.grad[i] * pa->data[i];
                        });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  auto* pa = a.node();
  return make_result<T>(a.shape(), detail::map(a, [s](T x) { return x * s; }), "scale", {&a},
                        [pa, s](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * s;
                        });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T s) {
  auto* pa = a.node();
  return make_result<T>(a.shape(), detail::map(a, [s](T x) { return x + s; }), "add_scalar", {&a},
                        [pa](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                        });
}

/// s - a
template <class T>
BasicTensor<T> rsub_scalar(T s, const BasicTensor<T>& a) {
  auto* pa = a.node();
  return make_result<T>(a.shape(), detail::map(a, [s](T x) { return s - x; }), "rsub_scalar",
                        {&a}, [pa](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
                        });
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T acc = 0;
  for (auto v : a.data()) acc += v;
  auto* pa = a.node();
  return make_result<T>(Shape{1}, {acc}, "sum", {&a}, [pa](detail::Node<T>& self) {
    if (auto* g = grad_sink(pa))
      for (auto& v : *g) v += self.grad[0];
  });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  T acc = 0;
  for (auto v : a.data()) acc += v;
  const T inv = T(1) / static_cast<T>(a.numel());
  auto* pa = a.node();
  return make_result<T>(Shape{1}, {acc * inv}, "mean", {&a}, [pa, inv](detail::Node<T>& self) {
    if (auto* g = grad_sink(pa))
      for (auto& v : *g) v += self.grad[0] * inv;
  });
}

/// Mean over every axis but the first: [N, ...] -> [N].
template <class T>
BasicTensor<T> sample_mean(const BasicTensor<T>& a) {
  const std::size_t n = a.dim(0);
  const std::size_t per = a.numel() / n;
  const T inv = T(1) / static_cast<T>(per);
  std::vector<T> out(n, T(0));
  auto x = a.data();
  for (std::size_t b = 0; b < n; ++b) {
    T acc = 0;
    for (std::size_t i = 0; i < per; ++i) acc += x[b * per + i];
    out[b] = acc * inv;
  }
  auto* pa = a.node();
  return make_result<T>(Shape{n}, std::move(out), "sample_mean", {&a},
                        [pa, per, inv](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i)
                              (*g)[i] += self.grad[i / per] * inv;
                        });
}

/// Subgradient 0 at the origin.
template <class T>
BasicTensor<T> abs(const BasicTensor<T>& a) {
  auto* pa = a.node();
  return make_result<T>(a.shape(), detail::map(a, [](T x) { return std::abs(x); }), "abs", {&a},
                        [pa](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i) {
                              const T x = pa->data[i];
                              (*g)[i] += x > 0 ? self.grad[i] : (x < 0 ? -self.grad[i] : T(0));
                            }
                        });
}

template <class T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  for (auto v : a.data())
    if (v <= 0) throw ContractError("log: non-positive input " + std::to_string(v));  // NaN passes through
  auto* pa = a.node();
  return make_result<T>(a.shape(), detail::map(a, [](T x) { return std::log(x); }), "log", {&a},
                        [pa](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i)
                              (*g)[i] += self.grad[i] / pa->data[i];
                        });
}

/// Clamps into [lo, hi]; gradient passes only where the input was inside.
template <class T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  auto* pa = a.node();
  return make_result<T>(a.shape(), detail::map(a, [=](T x) { return std::clamp(x, lo, hi); }),
                        "clamp", {&a}, [pa, lo, hi](detail::Node<T>& self) {
                          if (auto* g = grad_sink(pa))
                            for (std::size_t i = 0; i < g->size(); ++i) {
                              const T x = pa->data[i];
                              if (x >= lo && x <= hi) (*g)[i] += self.grad[i];
                            }
                        });
}

/// Concatenates rank-4 tensors along the channel axis.
template <class T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: no inputs");
  const auto& s0 = parts[0].shape();
  if (s0.rank() != 4) throw DimensionError("concat_channels expects rank-4, got " + s0.str());
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.rank() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw DimensionError("concat_channels: incompatible shapes " + s0.str() + " and " + s.str());
    channels += s[1];
  }
  const std::size_t n = s0[0], hw = s0[2] * s0[3];
  std::vector<T> out(n * channels * hw);
  std::vector<std::size_t> offsets;
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    offsets.push_back(c0);
    const std::size_t c = p.dim(1);
    auto src = p.data();
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(src.begin() + b * c * hw, c * hw, out.begin() + (b * channels + c0) * hw);
    c0 += c;
  }

  BasicTensor<T> result(Shape{n, channels, s0[2], s0[3]}, std::move(out));
  result.node()->op = "concat_channels";
  if (!grad_enabled()) return result;
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || p.requires_grad();
  if (!tracked) return result;
  auto* node = result.node();
  node->requires_grad = true;
  std::vector<detail::Node<T>*> raw;
  for (const auto& p : parts) {
    node->parents.push_back(p.node_ptr());
    raw.push_back(p.node());
  }
  node->backward = [raw, offsets, n, channels, hw](detail::Node<T>& self) {
    for (std::size_t k = 0; k < raw.size(); ++k) {
      auto* g = grad_sink(raw[k]);
      if (!g) continue;
      const std::size_t c = raw[k]->shape[1];
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < c * hw; ++i)
          (*g)[b * c * hw + i] += self.grad[(b * channels + offsets[k]) * hw + i];
    }
  };
  return result;
}

/// Zero-pads the two spatial axes of a rank-4 tensor.
template <class T>
BasicTensor<T> pad2d(const BasicTensor<T>& a, std::size_t top, std::size_t bottom,
                     std::size_t left, std::size_t right) {
  if (a.rank() != 4) throw DimensionError("pad2d expects rank-4, got " + a.shape().str());
  const std::size_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t ho = h + top + bottom, wo = w + left + right;
  std::vector<T> out(n * c * ho * wo, T(0));
  auto x = a.data();
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(x.begin() + (p * h + i) * w, w, out.begin() + (p * ho + i + top) * wo + left);
  auto* pa = a.node();
  return make_result<T>(Shape{n, c, ho, wo}, std::move(out), "pad2d", {&a},
                        [=](detail::Node<T>& self) {
                          auto* g = grad_sink(pa);
                          if (!g) return;
                          for (std::size_t p = 0; p < n * c; ++p)
                            for (std::size_t i = 0; i < h; ++i)
                              for (std::size_t j = 0; j < w; ++j)
                                (*g)[(p * h + i) * w + j] +=
                                    self.grad[(p * ho + i + top) * wo + j + left];
                        });
}

}  // namespace dgan
