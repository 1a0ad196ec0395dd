#pragma once

// Named parameter storage with Adam state, plus a binder that exposes
// parameters as tape inputs and harvests their gradients after backward().
// std::map keeps iteration order deterministic everywhere (updates, norm
// computation, serialization).

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "lsf/ad.hpp"
#include "lsf/errors.hpp"
#include "lsf/rng.hpp"

namespace lsf {

template <class S>
struct ParamEntry {
  ad::Mat<S> value;
  ad::Mat<S> grad;
  ad::Mat<S> m;  // Adam first moment
  ad::Mat<S> v;  // Adam second moment
};

template <class S>
class ParamTree {
 public:
  ad::Mat<S>& declare(const std::string& name, Eigen::Index rows,
                      Eigen::Index cols) {
    if (entries_.count(name))
      throw InputError("parameter declared twice: " + name);
    ParamEntry<S>& e = entries_[name];
    e.value = ad::Mat<S>::Zero(rows, cols);
    e.grad = ad::Mat<S>::Zero(rows, cols);
    e.m = ad::Mat<S>::Zero(rows, cols);
    e.v = ad::Mat<S>::Zero(rows, cols);
    return e.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  ParamEntry<S>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InputError("unknown parameter: " + name);
    return it->second;
  }
  const ParamEntry<S>& at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw InputError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, ParamEntry<S>>& entries() { return entries_; }
  const std::map<std::string, ParamEntry<S>>& entries() const {
    return entries_;
  }

  size_t count() const { return entries_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [k, e] : entries_) e.grad.setZero();
  }

  double grad_norm() const {
    double s = 0;
    for (const auto& [k, e] : entries_)
      s += static_cast<double>(e.grad.template cast<double>().squaredNorm());
    return std::sqrt(s);
  }

  // Scales all gradients so the global norm is at most cap.
  void clip_grad_norm(double cap) {
    double n = grad_norm();
    if (n > cap && n > 0) {
      S f = S(cap / n);
      for (auto& [k, e] : entries_) e.grad *= f;
    }
  }

  // One Adam update. t is the 1-based step number.
  void adam_step(double lr, long t, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [k, e] : entries_) {
      e.m = S(beta1) * e.m + S(1 - beta1) * e.grad;
      e.v = (S(beta2) * e.v.array() +
             S(1 - beta2) * e.grad.array() * e.grad.array())
                .matrix();
      ad::Mat<S> mhat = e.m / S(bc1);
      ad::Mat<S> vhat = e.v / S(bc2);
      e.value.array() -=
          S(lr) * mhat.array() / (vhat.array().sqrt() + S(eps));
    }
  }

  template <class T>
  ParamTree<T> cast() const {
    ParamTree<T> out;
    for (const auto& [k, e] : entries_) {
      auto& oe = out.entries()[k];
      oe.value = e.value.template cast<T>();
      oe.grad = e.grad.template cast<T>();
      oe.m = e.m.template cast<T>();
      oe.v = e.v.template cast<T>();
    }
    return out;
  }

 private:
  std::map<std::string, ParamEntry<S>> entries_;
};

// Binds parameters into a tape as gradient-tracked inputs. Each parameter
// becomes at most one node per tape, so repeated uses share the node and
// gradients accumulate there. harvest() adds node grads into ParamTree grads.
template <class S>
class ParamBinder {
 public:
  ParamBinder(ad::Tape<S>& tape, ParamTree<S>& tree)
      : tape_(tape), tree_(tree) {}

  ad::Var<S> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ad::Var<S> v = tape_.input(tree_.at(name).value, true);
    bound_.emplace(name, v);
    return v;
  }

  void harvest() {
    for (const auto& [name, var] : bound_)
      tree_.at(name).grad += tape_.grad(var);
  }

  ad::Tape<S>& tape() { return tape_; }

 private:
  ad::Tape<S>& tape_;
  ParamTree<S>& tree_;
  std::map<std::string, ad::Var<S>> bound_;
};

// Initializers. All draws go through the deterministic Rng so parameter
// initialization is reproducible from the seed alone.

template <class S>
void init_uniform(ad::Mat<S>& m, Rng& rng, double lo, double hi) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = S(rng.uniform(lo, hi));
}

template <class S>
void init_normal(ad::Mat<S>& m, Rng& rng, double std_dev) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = S(rng.normal() * std_dev);
}

// Fan-in scaled (He-style) init for a (fan_in x fan_out) weight.
template <class S>
void init_fanin(ad::Mat<S>& m, Rng& rng) {
  double s = 1.0 / std::sqrt(static_cast<double>(m.rows()));
  init_uniform(m, rng, -s, s);
}

}  // namespace lsf
