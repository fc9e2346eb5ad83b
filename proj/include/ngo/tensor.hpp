#pragma once

// Reverse-mode automatic differentiation on dense row-major tensors.
// Values are single-assignment: every op allocates a fresh node, gradients
// accumulate additively into leaves, and resetting gradients is explicit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ngo {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("tensor extent must be positive, got " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph construction for the current thread while alive.
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until a backward pass (or zero_grad) touches it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;
  std::string name;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

template <class S>
class Tensor {
 public:
  using Node = TensorNode<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), S(0), requires_grad);
  }
  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(static_cast<std::size_t>(shape_numel(shape)), v);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }
  static Tensor scalar(S v, bool requires_grad = false) {
    return from_data(Shape{}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::vector<S>& value() { return node_->value; }
  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& grad() { return node_->grad; }
  const std::vector<S>& grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  const std::string& name() const { return node_->name; }
  Tensor& set_name(std::string n) {
    node_->name = std::move(n);
    return *this;
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, shape is " + shape_str(shape()));
    return node_->value[0];
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <class S>
Tensor<S> make_op(Shape shape, std::vector<S> value, std::vector<Tensor<S>> parents,
                  std::function<void(TensorNode<S>&)> bwd) {
  auto n = std::make_shared<TensorNode<S>>();
  if (static_cast<std::int64_t>(value.size()) != shape_numel(shape))
    throw ShapeError("op produced value of wrong size for shape " + shape_str(shape));
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  if (grad_enabled()) {
    for (const auto& p : parents) rg = rg || p.node()->requires_grad;
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::move(bwd);
  }
  return Tensor<S>(std::move(n));
}

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.ptr();
  auto bn = b.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
    }
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.ptr();
  auto bn = b.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
    }
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.ptr();
  auto bn = b.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a, b}, [an, bn](TensorNode<S>& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c;
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an, c](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * c;
  });
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > S(0) ? a.value()[i] : S(0);
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (an->value[i] > S(0)) an->grad[i] += n.grad[i];
  });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    S x = a.value()[i];
    if (x >= S(0)) {
      S e = std::exp(-x);
      out[i] = S(1) / (S(1) + e);
    } else {
      S e = std::exp(x);
      out[i] = e / (S(1) + e);
    }
  }
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      S y = n.value[i];
      an->grad[i] += n.grad[i] * y * (S(1) - y);
    }
  });
}

template <class S>
Tensor<S> tanh(const Tensor<S>& a) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.value()[i]);
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      S y = n.value[i];
      an->grad[i] += n.grad[i] * (S(1) - y * y);
    }
  });
}

template <class S>
Tensor<S> sin(const Tensor<S>& a) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(a.value()[i]);
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * std::cos(an->value[i]);
  });
}

template <class S>
Tensor<S> cos(const Tensor<S>& a) {
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::cos(a.value()[i]);
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] -= n.grad[i] * std::sin(an->value[i]);
  });
}

// Wraps each element into (-pi, pi]; the shift is locally constant so the
// gradient passes through unchanged.
template <class S>
Tensor<S> wrap_angle(const Tensor<S>& a) {
  constexpr double kPi = 3.14159265358979323846;
  std::vector<S> out(a.value().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = static_cast<double>(a.value()[i]);
    if (x > -kPi && x <= kPi) {
      out[i] = a.value()[i];
    } else {
      double w = std::remainder(x, 2.0 * kPi);
      if (w <= -kPi) w += 2.0 * kPi;
      out[i] = static_cast<S>(w);
    }
  }
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  double acc = 0;
  for (S v : a.value()) acc += static_cast<double>(v);
  auto an = a.ptr();
  return detail::make_op<S>(Shape{}, {static_cast<S>(acc)}, {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += n.grad[0];
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  double acc = 0;
  for (S v : a.value()) acc += static_cast<double>(v);
  const double inv = 1.0 / static_cast<double>(a.numel());
  auto an = a.ptr();
  return detail::make_op<S>(Shape{}, {static_cast<S>(acc * inv)}, {a}, [an, inv](TensorNode<S>& n) {
    an->ensure_grad();
    const S g = static_cast<S>(static_cast<double>(n.grad[0]) * inv);
    for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
}

template <class S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.shape() != b.shape())
    throw ShapeError("dot: need equal-length vectors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  double acc = 0;
  for (std::size_t i = 0; i < a.value().size(); ++i)
    acc += static_cast<double>(a.value()[i]) * static_cast<double>(b.value()[i]);
  auto an = a.ptr();
  auto bn = b.ptr();
  return detail::make_op<S>(Shape{}, {static_cast<S>(acc)}, {a, b}, [an, bn](TensorNode<S>& n) {
    const S g = n.grad[0];
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += g * an->value[i];
    }
  });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
void softmax_row(const S* x, S* y, int n) {
  S mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double z = 0;
  for (int i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    z += static_cast<double>(y[i]);
  }
  const S inv = static_cast<S>(1.0 / z);
  for (int i = 0; i < n; ++i) y[i] *= inv;
}

template <class S>
void softmax_row_backward(const S* y, const S* gy, S* gx, int n) {
  double s = 0;
  for (int i = 0; i < n; ++i) s += static_cast<double>(gy[i]) * static_cast<double>(y[i]);
  for (int i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - static_cast<S>(s));
}
}  // namespace detail

template <class S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.rank() != 1) throw ShapeError("softmax: expected rank-1 input, got " + shape_str(a.shape()));
  const int n = a.dim(0);
  std::vector<S> out(static_cast<std::size_t>(n));
  detail::softmax_row(a.value().data(), out.data(), n);
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an, n](TensorNode<S>& node) {
    an->ensure_grad();
    detail::softmax_row_backward(node.value.data(), node.grad.data(), an->grad.data(), n);
  });
}

// Row-wise softmax on a [R, C] matrix; each output row sums to 1.
template <class S>
Tensor<S> softmax_rows(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeError("softmax_rows: expected rank-2 input, got " + shape_str(a.shape()));
  const int r = a.dim(0), c = a.dim(1);
  std::vector<S> out(a.value().size());
  for (int i = 0; i < r; ++i)
    detail::softmax_row(a.value().data() + static_cast<std::size_t>(i) * c,
                        out.data() + static_cast<std::size_t>(i) * c, c);
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an, r, c](TensorNode<S>& node) {
    an->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * c;
      detail::softmax_row_backward(node.value.data() + off, node.grad.data() + off,
                                   an->grad.data() + off, c);
    }
  });
}

// Linear row normalization alpha_u = x_u / sum(x); rows whose sum has
// magnitude below `fallback_tol` become uniform 1/C (with zero gradient).
template <class S>
Tensor<S> row_normalize_linear(const Tensor<S>& a, double fallback_tol = 1e-6) {
  if (a.rank() != 2) throw ShapeError("row_normalize_linear: expected rank-2 input");
  const int r = a.dim(0), c = a.dim(1);
  std::vector<S> out(a.value().size());
  auto fallback = std::make_shared<std::vector<char>>(static_cast<std::size_t>(r), char(0));
  auto rowsum = std::make_shared<std::vector<double>>(static_cast<std::size_t>(r), 0.0);
  for (int i = 0; i < r; ++i) {
    const S* x = a.value().data() + static_cast<std::size_t>(i) * c;
    double s = 0;
    for (int j = 0; j < c; ++j) s += static_cast<double>(x[j]);
    (*rowsum)[static_cast<std::size_t>(i)] = s;
    S* y = out.data() + static_cast<std::size_t>(i) * c;
    if (std::abs(s) < fallback_tol) {
      (*fallback)[static_cast<std::size_t>(i)] = 1;
      const S u = static_cast<S>(1.0 / c);
      for (int j = 0; j < c; ++j) y[j] = u;
    } else {
      const S inv = static_cast<S>(1.0 / s);
      for (int j = 0; j < c; ++j) y[j] = x[j] * inv;
    }
  }
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a},
                            [an, r, c, fallback, rowsum](TensorNode<S>& node) {
    an->ensure_grad();
    for (int i = 0; i < r; ++i) {
      if ((*fallback)[static_cast<std::size_t>(i)]) continue;
      const std::size_t off = static_cast<std::size_t>(i) * c;
      const S* y = node.value.data() + off;
      const S* gy = node.grad.data() + off;
      S* gx = an->grad.data() + off;
      double gysum = 0;
      for (int j = 0; j < c; ++j) gysum += static_cast<double>(gy[j]) * static_cast<double>(y[j]);
      const double inv = 1.0 / (*rowsum)[static_cast<std::size_t>(i)];
      for (int j = 0; j < c; ++j)
        gx[j] += static_cast<S>((static_cast<double>(gy[j]) - gysum) * inv);
    }
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  std::vector<S> out = a.value();
  auto an = a.ptr();
  return detail::make_op<S>(std::move(new_shape), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
}

namespace detail {
// Decomposes a shape around `axis` into [outer, extent, inner] so axis-wise
// ops reduce to three nested loops on row-major data.
inline void axis_split(const Shape& s, int axis, std::int64_t& outer, std::int64_t& extent,
                       std::int64_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  extent = s[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) inner *= s[static_cast<std::size_t>(i)];
}
}  // namespace detail

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  std::int64_t outer, e0, inner;
  detail::axis_split(s0, axis, outer, e0, inner);
  std::int64_t total_extent = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s0.size()))
      throw ShapeError("concat: rank mismatch between inputs");
    for (int d = 0; d < p.rank(); ++d)
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != s0[static_cast<std::size_t>(d)])
        throw ShapeError("concat: off-axis extents differ, " + shape_str(p.shape()) + " vs " +
                         shape_str(s0));
    total_extent += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(total_extent);
  std::vector<S> out(static_cast<std::size_t>(outer * total_extent * inner));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t ep = p.dim(axis);
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * ep * inner, ep * inner,
                  out.data() + (o * total_extent + offset) * inner);
    offset += ep;
  }
  std::vector<std::shared_ptr<TensorNode<S>>> pnodes;
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    pnodes.push_back(p.ptr());
    extents.push_back(p.dim(axis));
  }
  return detail::make_op<S>(std::move(out_shape), std::move(out), parts,
                            [pnodes, extents, outer, inner, total_extent](TensorNode<S>& n) {
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < pnodes.size(); ++k) {
      const std::int64_t ep = extents[k];
      if (pnodes[k]->requires_grad) {
        pnodes[k]->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          const S* src = n.grad.data() + (o * total_extent + offset) * inner;
          S* dst = pnodes[k]->grad.data() + o * ep * inner;
          for (std::int64_t i = 0; i < ep * inner; ++i) dst[i] += src[i];
        }
      }
      offset += ep;
    }
  });
}

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, int begin, int end) {
  std::int64_t outer, extent, inner;
  detail::axis_split(a.shape(), axis, outer, extent, inner);
  if (begin < 0 || end > extent || begin >= end)
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for extent " + std::to_string(extent));
  const std::int64_t e = end - begin;
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = static_cast<int>(e);
  std::vector<S> out(static_cast<std::size_t>(outer * e * inner));
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(a.value().data() + (o * extent + begin) * inner, e * inner, out.data() + o * e * inner);
  auto an = a.ptr();
  return detail::make_op<S>(std::move(out_shape), std::move(out), {a},
                            [an, outer, extent, inner, begin, e](TensorNode<S>& n) {
    an->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o) {
      const S* src = n.grad.data() + o * e * inner;
      S* dst = an->grad.data() + (o * extent + begin) * inner;
      for (std::int64_t i = 0; i < e * inner; ++i) dst[i] += src[i];
    }
  });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank-2 input, got " + shape_str(a.shape()));
  const int r = a.dim(0), c = a.dim(1);
  std::vector<S> out(a.value().size());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = a.value()[static_cast<std::size_t>(i) * c + j];
  auto an = a.ptr();
  return detail::make_op<S>(Shape{c, r}, std::move(out), {a}, [an, r, c](TensorNode<S>& n) {
    an->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<std::size_t>(i) * c + j] += n.grad[static_cast<std::size_t>(j) * r + i];
  });
}

// ---------------------------------------------------------------------------
// sequence ops (rank-1)
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> cumsum(const Tensor<S>& a) {
  if (a.rank() != 1) throw ShapeError("cumsum: expected rank-1 input");
  std::vector<S> out(a.value().size());
  S acc = S(0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    acc += a.value()[i];
    out[i] = acc;
  }
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an](TensorNode<S>& n) {
    an->ensure_grad();
    S acc = S(0);
    for (std::int64_t i = static_cast<std::int64_t>(n.grad.size()) - 1; i >= 0; --i) {
      acc += n.grad[static_cast<std::size_t>(i)];
      an->grad[static_cast<std::size_t>(i)] += acc;
    }
  });
}

// out[0] = 0, out[t] = a[t-1]
template <class S>
Tensor<S> shift_right(const Tensor<S>& a) {
  if (a.rank() != 1) throw ShapeError("shift_right: expected rank-1 input");
  const std::size_t n = a.value().size();
  std::vector<S> out(n, S(0));
  for (std::size_t i = 1; i < n; ++i) out[i] = a.value()[i - 1];
  auto an = a.ptr();
  return detail::make_op<S>(a.shape(), std::move(out), {a}, [an, n](TensorNode<S>& node) {
    an->ensure_grad();
    for (std::size_t i = 1; i < n; ++i) an->grad[i - 1] += node.grad[i];
  });
}

// out[j] = a[offset + j*stride]
template <class S>
Tensor<S> downsample(const Tensor<S>& a, int offset, int stride) {
  if (a.rank() != 1) throw ShapeError("downsample: expected rank-1 input");
  if (stride <= 0 || offset < 0 || offset >= a.dim(0))
    throw ShapeError("downsample: bad offset/stride");
  const int n = (a.dim(0) - offset + stride - 1) / stride;
  std::vector<S> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = a.value()[static_cast<std::size_t>(offset + j * stride)];
  auto an = a.ptr();
  return detail::make_op<S>(Shape{n}, std::move(out), {a}, [an, offset, stride, n](TensorNode<S>& node) {
    an->ensure_grad();
    for (int j = 0; j < n; ++j)
      an->grad[static_cast<std::size_t>(offset + j * stride)] += node.grad[static_cast<std::size_t>(j)];
  });
}

// ---------------------------------------------------------------------------
// linear / matmul
// ---------------------------------------------------------------------------

// x:[N,Din] (or [Din]), W:[Din,Dout], b:[Dout] -> [N,Dout] (or [Dout])
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& W, const Tensor<S>& b) {
  if (W.rank() != 2) throw ShapeError("linear: weight must be rank-2, got " + shape_str(W.shape()));
  const int din = W.dim(0), dout = W.dim(1);
  if (b.rank() != 1 || b.dim(0) != dout)
    throw ShapeError("linear: bias shape " + shape_str(b.shape()) + " does not match Dout=" +
                     std::to_string(dout));
  const bool vec = x.rank() == 1;
  if ((vec && x.dim(0) != din) || (!vec && (x.rank() != 2 || x.dim(1) != din)))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(W.shape()));
  const int n = vec ? 1 : x.dim(0);
  std::vector<S> out(static_cast<std::size_t>(n) * dout);
  const S* xp = x.value().data();
  const S* wp = W.value().data();
  const S* bp = b.value().data();
  for (int r = 0; r < n; ++r) {
    S* orow = out.data() + static_cast<std::size_t>(r) * dout;
    for (int j = 0; j < dout; ++j) orow[j] = bp[j];
    const S* xrow = xp + static_cast<std::size_t>(r) * din;
    for (int i = 0; i < din; ++i) {
      const S xv = xrow[i];
      const S* wrow = wp + static_cast<std::size_t>(i) * dout;
      for (int j = 0; j < dout; ++j) orow[j] += xv * wrow[j];
    }
  }
  Shape out_shape = vec ? Shape{dout} : Shape{n, dout};
  auto xn = x.ptr();
  auto wn = W.ptr();
  auto bn = b.ptr();
  return detail::make_op<S>(std::move(out_shape), std::move(out), {x, W, b},
                            [xn, wn, bn, n, din, dout](TensorNode<S>& node) {
    const S* g = node.grad.data();
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int r = 0; r < n; ++r)
        for (int j = 0; j < dout; ++j) bn->grad[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(r) * dout + j];
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (int r = 0; r < n; ++r) {
        const S* xrow = xn->value.data() + static_cast<std::size_t>(r) * din;
        const S* grow = g + static_cast<std::size_t>(r) * dout;
        for (int i = 0; i < din; ++i) {
          const S xv = xrow[i];
          S* wrow = wn->grad.data() + static_cast<std::size_t>(i) * dout;
          for (int j = 0; j < dout; ++j) wrow[j] += xv * grow[j];
        }
      }
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int r = 0; r < n; ++r) {
        S* xrow = xn->grad.data() + static_cast<std::size_t>(r) * din;
        const S* grow = g + static_cast<std::size_t>(r) * dout;
        for (int i = 0; i < din; ++i) {
          const S* wrow = wn->value.data() + static_cast<std::size_t>(i) * dout;
          double acc = 0;
          for (int j = 0; j < dout; ++j) acc += static_cast<double>(wrow[j]) * static_cast<double>(grow[j]);
          xrow[i] += static_cast<S>(acc);
        }
      }
    }
  });
}

// a:[M,K] * b:[K,N] -> [M,N]
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
  for (int i = 0; i < m; ++i) {
    S* orow = out.data() + static_cast<std::size_t>(i) * n;
    const S* arow = a.value().data() + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b.value().data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto an = a.ptr();
  auto bn = b.ptr();
  return detail::make_op<S>(Shape{m, n}, std::move(out), {a, b}, [an, bn, m, k, n](TensorNode<S>& node) {
    const S* g = node.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          const S* brow = bn->value.data() + static_cast<std::size_t>(p) * n;
          const S* grow = g + static_cast<std::size_t>(i) * n;
          double acc = 0;
          for (int j = 0; j < n; ++j) acc += static_cast<double>(brow[j]) * static_cast<double>(grow[j]);
          an->grad[static_cast<std::size_t>(i) * k + p] += static_cast<S>(acc);
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < m; ++i) {
        const S* arow = an->value.data() + static_cast<std::size_t>(i) * k;
        const S* grow = g + static_cast<std::size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
          const S av = arow[p];
          S* brow = bn->grad.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// conv1d / maxpool1d
// ---------------------------------------------------------------------------

// Cross-correlation with zero padding. x:[Cin,T] or [N,Cin,T], W:[Cout,Cin,K],
// b:[Cout]; T_out = floor((T + 2*padding - K)/stride) + 1.
template <class S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& W, const Tensor<S>& b, int stride = 1,
                 int padding = 0) {
  if (W.rank() != 3) throw ShapeError("conv1d: weight must be [Cout,Cin,K], got " + shape_str(W.shape()));
  const int cout = W.dim(0), cin = W.dim(1), k = W.dim(2);
  if (b.rank() != 1 || b.dim(0) != cout)
    throw ShapeError("conv1d: bias shape " + shape_str(b.shape()) + " does not match Cout");
  if (stride <= 0 || padding < 0) throw ShapeError("conv1d: stride must be positive, padding non-negative");
  const bool batched = x.rank() == 3;
  if (!batched && x.rank() != 2) throw ShapeError("conv1d: input must be rank 2 or 3, got " + shape_str(x.shape()));
  const int n = batched ? x.dim(0) : 1;
  const int xc = batched ? x.dim(1) : x.dim(0);
  const int t = batched ? x.dim(2) : x.dim(1);
  if (xc != cin)
    throw ShapeError("conv1d: input channels " + std::to_string(xc) + " != weight Cin " + std::to_string(cin));
  if (t + 2 * padding < k)
    throw ShapeError("conv1d: kernel " + std::to_string(k) + " exceeds padded length " +
                     std::to_string(t + 2 * padding));
  const int tout = (t + 2 * padding - k) / stride + 1;

  std::vector<S> out(static_cast<std::size_t>(n) * cout * tout);
  const S* xp = x.value().data();
  const S* wp = W.value().data();
  const S* bp = b.value().data();
  for (int bi = 0; bi < n; ++bi) {
    const S* xb = xp + static_cast<std::size_t>(bi) * cin * t;
    S* ob = out.data() + static_cast<std::size_t>(bi) * cout * tout;
    for (int co = 0; co < cout; ++co) {
      S* orow = ob + static_cast<std::size_t>(co) * tout;
      std::fill_n(orow, tout, bp[co]);
      for (int ci = 0; ci < cin; ++ci) {
        const S* xrow = xb + static_cast<std::size_t>(ci) * t;
        const S* wrow = wp + (static_cast<std::size_t>(co) * cin + ci) * k;
        for (int kk = 0; kk < k; ++kk) {
          const S wv = wrow[kk];
          // valid output range for this tap: 0 <= to*stride + kk - padding < t
          int lo = 0;
          if (kk < padding) lo = (padding - kk + stride - 1) / stride;
          int hi = tout;  // exclusive
          {
            const int max_to = (t - 1 - kk + padding) / stride;
            hi = std::min(hi, max_to + 1);
          }
          const S* xoff = xrow + (static_cast<std::int64_t>(lo) * stride + kk - padding);
          if (stride == 1) {
            for (int to = lo; to < hi; ++to) orow[to] += wv * xoff[to - lo];
          } else {
            for (int to = lo; to < hi; ++to) orow[to] += wv * xoff[static_cast<std::int64_t>(to - lo) * stride];
          }
        }
      }
    }
  }

  Shape out_shape = batched ? Shape{n, cout, tout} : Shape{cout, tout};
  auto xn = x.ptr();
  auto wn = W.ptr();
  auto bn = b.ptr();
  return detail::make_op<S>(std::move(out_shape), std::move(out), {x, W, b},
                            [xn, wn, bn, n, cin, cout, k, t, tout, stride, padding](TensorNode<S>& node) {
    const S* g = node.grad.data();
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int bi = 0; bi < n; ++bi)
        for (int co = 0; co < cout; ++co) {
          const S* grow = g + (static_cast<std::size_t>(bi) * cout + co) * tout;
          double acc = 0;
          for (int to = 0; to < tout; ++to) acc += static_cast<double>(grow[to]);
          bn->grad[static_cast<std::size_t>(co)] += static_cast<S>(acc);
        }
    }
    const bool need_w = wn->requires_grad;
    const bool need_x = xn->requires_grad;
    if (need_w) wn->ensure_grad();
    if (need_x) xn->ensure_grad();
    if (!need_w && !need_x) return;
    for (int bi = 0; bi < n; ++bi) {
      const S* xb = xn->value.data() + static_cast<std::size_t>(bi) * cin * t;
      S* gxb = need_x ? xn->grad.data() + static_cast<std::size_t>(bi) * cin * t : nullptr;
      const S* gb = g + static_cast<std::size_t>(bi) * cout * tout;
      for (int co = 0; co < cout; ++co) {
        const S* grow = gb + static_cast<std::size_t>(co) * tout;
        for (int ci = 0; ci < cin; ++ci) {
          const S* xrow = xb + static_cast<std::size_t>(ci) * t;
          const std::size_t woff = (static_cast<std::size_t>(co) * cin + ci) * k;
          for (int kk = 0; kk < k; ++kk) {
            int lo = 0;
            if (kk < padding) lo = (padding - kk + stride - 1) / stride;
            int hi = tout;
            {
              const int max_to = (t - 1 - kk + padding) / stride;
              hi = std::min(hi, max_to + 1);
            }
            const std::int64_t base = static_cast<std::int64_t>(lo) * stride + kk - padding;
            if (need_w) {
              const S* xoff = xrow + base;
              double acc = 0;
              if (stride == 1) {
                for (int to = lo; to < hi; ++to) acc += static_cast<double>(grow[to]) * static_cast<double>(xoff[to - lo]);
              } else {
                for (int to = lo; to < hi; ++to)
                  acc += static_cast<double>(grow[to]) * static_cast<double>(xoff[static_cast<std::int64_t>(to - lo) * stride]);
              }
              wn->grad[woff + static_cast<std::size_t>(kk)] += static_cast<S>(acc);
            }
            if (need_x) {
              const S wv = wn->value[woff + static_cast<std::size_t>(kk)];
              S* gxoff = gxb + static_cast<std::size_t>(ci) * t + base;
              if (stride == 1) {
                for (int to = lo; to < hi; ++to) gxoff[to - lo] += wv * grow[to];
              } else {
                for (int to = lo; to < hi; ++to) gxoff[static_cast<std::int64_t>(to - lo) * stride] += wv * grow[to];
              }
            }
          }
        }
      }
    }
  });
}

// x:[C,T] -> [C,T/stride]; ties route the gradient to the lower index.
template <class S>
Tensor<S> maxpool1d(const Tensor<S>& x, int k = 2, int stride = 2) {
  if (x.rank() != 2) throw ShapeError("maxpool1d: expected [C,T] input, got " + shape_str(x.shape()));
  if (k <= 0 || stride <= 0) throw ShapeError("maxpool1d: window and stride must be positive");
  const int c = x.dim(0), t = x.dim(1);
  if (t < k || (t - k) % stride != 0)
    throw ShapeError("maxpool1d: length " + std::to_string(t) + " not divisible by window " +
                     std::to_string(k) + "/stride " + std::to_string(stride));
  const int tout = (t - k) / stride + 1;
  std::vector<S> out(static_cast<std::size_t>(c) * tout);
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(c) * tout);
  for (int ci = 0; ci < c; ++ci) {
    const S* xrow = x.value().data() + static_cast<std::size_t>(ci) * t;
    for (int to = 0; to < tout; ++to) {
      int best = to * stride;
      S bv = xrow[best];
      for (int kk = 1; kk < k; ++kk) {
        const int idx = to * stride + kk;
        if (xrow[idx] > bv) {
          bv = xrow[idx];
          best = idx;
        }
      }
      out[static_cast<std::size_t>(ci) * tout + to] = bv;
      (*argmax)[static_cast<std::size_t>(ci) * tout + to] = best;
    }
  }
  auto xn = x.ptr();
  return detail::make_op<S>(Shape{c, tout}, std::move(out), {x}, [xn, argmax, c, t, tout](TensorNode<S>& node) {
    xn->ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int to = 0; to < tout; ++to)
        xn->grad[static_cast<std::size_t>(ci) * t + (*argmax)[static_cast<std::size_t>(ci) * tout + to]] +=
            node.grad[static_cast<std::size_t>(ci) * tout + to];
  });
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

// Reverse-topological traversal from a scalar loss. Interior gradients are
// reset per call; leaf gradients accumulate until explicitly zeroed.
template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  TensorNode<S>* root = loss.node();
  if (!root->requires_grad) return;  // constant loss: nothing depends on parameters

  std::vector<TensorNode<S>*> order;
  std::unordered_set<TensorNode<S>*> visited;
  std::vector<std::pair<TensorNode<S>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode<S>* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // interior grads are transient; reset them so repeated backward calls on
  // the same graph double only the leaves
  for (TensorNode<S>* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), S(0));
  root->ensure_grad();
  root->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

}  // namespace ngo
