#pragma once

// Named parameter collections, the Adam optimizer, and a central-difference
// gradient checker.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ngo/rng.hpp"
#include "ngo/tensor.hpp"

namespace ngo {

// Ordered map name -> parameter tensor; iteration follows insertion order.
template <class S>
class ParamSet {
 public:
  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    t.set_name(name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return items_[it->second].second;
  }
  const Tensor<S>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return items_[it->second].second;
  }

  std::size_t size() const { return items_.size(); }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [k, t] : items_) n += t.numel();
    return n;
  }

  void set_requires_grad(bool rg) {
    for (auto& [k, t] : items_) t.set_requires_grad(rg);
  }

 private:
  std::vector<std::pair<std::string, Tensor<S>>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <class S>
void zero_grad(ParamSet<S>& params) {
  for (auto& [name, t] : params) {
    t.node()->ensure_grad();
    std::fill(t.grad().begin(), t.grad().end(), S(0));
  }
}

// Backward pass scoped to a parameter set: parameters the loss does not reach
// keep a zero gradient rather than an absent one.
template <class S>
void backward(const Tensor<S>& loss, ParamSet<S>& params) {
  for (auto& [name, t] : params) t.node()->ensure_grad();
  backward(loss);
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers, aligned with the ParamSet's insertion order.
template <class S>
struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::vector<std::vector<S>> m;
  std::vector<std::vector<S>> v;

  AdamState() = default;
  AdamState(const ParamSet<S>& params, AdamConfig c) : cfg(c) {
    for (const auto& [name, p] : params) {
      m.emplace_back(p.numel(), S(0));
      v.emplace_back(p.numel(), S(0));
    }
  }
};

// Standard Adam with bias correction. Pure function of (params, grads, state).
template <class S>
void adam_step(ParamSet<S>& params, AdamState<S>& state) {
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameter set");
  state.t += 1;
  const double b1 = state.cfg.beta1;
  const double b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  std::size_t pi = 0;
  for (auto& [name, p] : params) {
    if (p.grad().size() != p.value().size())
      throw std::runtime_error("adam_step: missing gradient for parameter " + name);
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    S* pv = p.value().data();
    const S* g = p.grad().data();
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = static_cast<S>(b1 * m[i] + (1.0 - b1) * g[i]);
      v[i] = static_cast<S>(b2 * v[i] + (1.0 - b2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      pv[i] = static_cast<S>(pv[i] - state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps));
    }
    ++pi;
  }
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences against the analytic gradient of a scalar-valued graph
// builder. Relative error is |a-n| / max(|a|,|n|,1e-8), maximized over every
// checked element. `max_elems_per_param` < 0 checks all elements.
template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& f, ParamSet<S>& params, double eps,
                           std::int64_t max_elems_per_param = -1) {
  zero_grad(params);
  Tensor<S> loss = f();
  if (loss.numel() != 1) throw ShapeError("grad_check: builder must return a scalar loss");
  backward(loss);

  std::vector<std::vector<S>> analytic;
  for (const auto& [name, p] : params) analytic.push_back(p.grad());

  GradCheckReport rep;
  std::size_t pi = 0;
  for (auto& [name, p] : params) {
    const std::int64_t n = p.numel();
    std::int64_t step = 1;
    if (max_elems_per_param > 0 && n > max_elems_per_param) step = n / max_elems_per_param;
    for (std::int64_t i = 0; i < n; i += step) {
      S* slot = &p.value()[static_cast<std::size_t>(i)];
      const S old = *slot;
      const S vp = static_cast<S>(old + static_cast<S>(eps));
      const S vm = static_cast<S>(old - static_cast<S>(eps));
      double lp, lm;
      {
        NoGradGuard ng;
        *slot = vp;
        lp = static_cast<double>(f().item());
        *slot = vm;
        lm = static_cast<double>(f().item());
        *slot = old;
      }
      const double denom = static_cast<double>(vp) - static_cast<double>(vm);
      const double num = (lp - lm) / denom;
      const double ana = static_cast<double>(analytic[pi][static_cast<std::size_t>(i)]);
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
    ++pi;
  }
  return rep;
}

// He-style initialization helpers used by the network modules.
template <class S>
Tensor<S> init_normal(Shape shape, double stddev, Rng& rng, bool requires_grad = true) {
  std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<S>(rng.normal() * stddev);
  return Tensor<S>::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace ngo
