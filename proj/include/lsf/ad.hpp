#pragma once

// Reverse-mode automatic differentiation on dense Eigen matrices.
//
// A Tape owns a DAG of matrix-valued nodes. Ops are free functions that append
// nodes and return lightweight Var handles. backward() seeds a scalar root and
// accumulates gradients in reverse creation order. Templated on the scalar so
// gradient checks run in double while training runs in float.

#include <Eigen/Dense>
#include <Eigen/LU>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lsf/errors.hpp"

namespace lsf::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

#define LSF_CHECK(cond, msg) \
  do {                       \
    if (!(cond)) throw std::logic_error(std::string("ad: ") + (msg)); \
  } while (0)

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<S>& val() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

template <class S>
class Tape {
 public:
  // Backward callback: (tape, upstream gradient, own node id).
  using BackFn = std::function<void(Tape<S>&, const Mat<S>&, int)>;

  Var<S> input(Mat<S> v, bool needs_grad = false) {
    return push(std::move(v), {}, nullptr, needs_grad);
  }

  Var<S> constant(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return input(std::move(m), false);
  }

  Var<S> push(Mat<S> v, std::vector<int> parents, BackFn back,
              bool force_needs_grad = false) {
    bool ng = force_needs_grad;
    for (int p : parents) ng = ng || nodes_[p].needs_grad;
    nodes_.push_back(Node{std::move(v), std::move(parents), std::move(back), ng});
    grads_.emplace_back();
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<S>& val(int id) const { return nodes_[id].v; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  // Gradient of the last backward() root w.r.t. node id (zeros if untouched).
  Mat<S> grad(const Var<S>& x) const {
    if (grads_[x.id].size() == 0)
      return Mat<S>::Zero(nodes_[x.id].v.rows(), nodes_[x.id].v.cols());
    return grads_[x.id];
  }

  void accumulate(int id, const Mat<S>& g) {
    if (!nodes_[id].needs_grad) return;
    LSF_CHECK(g.rows() == nodes_[id].v.rows() && g.cols() == nodes_[id].v.cols(),
              "gradient shape mismatch");
    if (grads_[id].size() == 0)
      grads_[id] = g;
    else
      grads_[id] += g;
  }

  void backward(const Var<S>& root) {
    LSF_CHECK(root.tape == this, "root from another tape");
    LSF_CHECK(nodes_[root.id].v.rows() == 1 && nodes_[root.id].v.cols() == 1,
              "backward root must be scalar");
    for (auto& g : grads_) g.resize(0, 0);
    Mat<S> seed(1, 1);
    seed(0, 0) = S(1);
    grads_[root.id] = seed;
    for (int i = root.id; i >= 0; --i) {
      if (grads_[i].size() == 0 || !nodes_[i].back || !nodes_[i].needs_grad)
        continue;
      nodes_[i].back(*this, grads_[i], i);
    }
  }

  size_t size() const { return nodes_.size(); }

  size_t value_bytes() const {
    size_t b = 0;
    for (const auto& n : nodes_) b += sizeof(S) * n.v.size();
    return b;
  }

  // Frees all nodes. Outstanding Vars become invalid.
  void reset() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  struct Node {
    Mat<S> v;
    std::vector<int> parents;
    BackFn back;
    bool needs_grad;
  };
  std::vector<Node> nodes_;
  std::vector<Mat<S>> grads_;
};

template <class S>
const Mat<S>& Var<S>::val() const {
  return tape->val(id);
}

namespace detail {
template <class S>
Tape<S>& same_tape(const Var<S>& a, const Var<S>& b) {
  LSF_CHECK(a.tape == b.tape, "vars from different tapes");
  return *a.tape;
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  LSF_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "add shape");
  Mat<S> v = a.val() + b.val();
  int ia = a.id, ib = b.id;
  return t.push(std::move(v), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g, int) {
                  t.accumulate(ia, g);
                  t.accumulate(ib, g);
                });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  LSF_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape");
  Mat<S> v = a.val() - b.val();
  int ia = a.id, ib = b.id;
  return t.push(std::move(v), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g, int) {
                  t.accumulate(ia, g);
                  t.accumulate(ib, Mat<S>(-g));
                });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  LSF_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape");
  Mat<S> v = a.val().cwiseProduct(b.val());
  int ia = a.id, ib = b.id;
  return t.push(std::move(v), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g, int) {
                  if (t.needs_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.val(ib)));
                  if (t.needs_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.val(ia)));
                });
}

template <class S>
Var<S> div(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  LSF_CHECK(a.rows() == b.rows() && a.cols() == b.cols(), "div shape");
  Mat<S> v = a.val().cwiseQuotient(b.val());
  int ia = a.id, ib = b.id;
  return t.push(std::move(v), {ia, ib},
                [ia, ib](Tape<S>& t, const Mat<S>& g, int self) {
                  if (t.needs_grad(ia))
                    t.accumulate(ia, g.cwiseQuotient(t.val(ib)));
                  if (t.needs_grad(ib))
                    t.accumulate(ib, Mat<S>(-g.cwiseProduct(t.val(self))
                                                 .cwiseQuotient(t.val(ib))));
                });
}

template <class S>
Var<S> scale(Var<S> a, double s) {
  Mat<S> v = a.val() * S(s);
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia, s](Tape<S>& t, const Mat<S>& g, int) {
                        t.accumulate(ia, Mat<S>(g * S(s)));
                      });
}

template <class S>
Var<S> add_const(Var<S> a, double c) {
  Mat<S> v = a.val();
  v.array() += S(c);
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int) {
                        t.accumulate(ia, g);
                      });
}

template <class S>
Var<S> neg(Var<S> a) {
  return scale(a, -1.0);
}

template <class S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <class S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <class S>
Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

template <class S>
Var<S> matmul(Var<S> a, Var<S> b, bool trans_a = false, bool trans_b = false) {
  auto& t = detail::same_tape(a, b);
  const Mat<S>& A = a.val();
  const Mat<S>& B = b.val();
  Eigen::Index ak = trans_a ? A.rows() : A.cols();
  Eigen::Index bk = trans_b ? B.cols() : B.rows();
  LSF_CHECK(ak == bk, "matmul inner dim");
  Mat<S> v;
  if (!trans_a && !trans_b) v.noalias() = A * B;
  else if (trans_a && !trans_b) v.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) v.noalias() = A * B.transpose();
  else v.noalias() = A.transpose() * B.transpose();
  int ia = a.id, ib = b.id;
  return t.push(std::move(v), {ia, ib},
                [ia, ib, trans_a, trans_b](Tape<S>& t, const Mat<S>& g, int) {
                  const Mat<S>& A = t.val(ia);
                  const Mat<S>& B = t.val(ib);
                  if (t.needs_grad(ia)) {
                    Mat<S> ga;
                    if (!trans_a && !trans_b) ga.noalias() = g * B.transpose();
                    else if (!trans_a && trans_b) ga.noalias() = g * B;
                    else if (trans_a && !trans_b) ga.noalias() = B * g.transpose();
                    else ga.noalias() = B.transpose() * g.transpose();
                    t.accumulate(ia, ga);
                  }
                  if (t.needs_grad(ib)) {
                    Mat<S> gb;
                    if (!trans_a && !trans_b) gb.noalias() = A.transpose() * g;
                    else if (!trans_a && trans_b) gb.noalias() = g.transpose() * A;
                    else if (trans_a && !trans_b) gb.noalias() = A * g;
                    else gb.noalias() = g.transpose() * A.transpose();
                    t.accumulate(ib, gb);
                  }
                });
}

template <class S>
Var<S> transpose(Var<S> a) {
  Mat<S> v = a.val().transpose();
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int) {
                        t.accumulate(ia, Mat<S>(g.transpose()));
                      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Var<S> sum_all(Var<S> a) {
  Mat<S> v(1, 1);
  v(0, 0) = a.val().sum();
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int) {
                        t.accumulate(ia, Mat<S>(Mat<S>::Constant(
                                             t.val(ia).rows(), t.val(ia).cols(),
                                             g(0, 0))));
                      });
}

template <class S>
Var<S> mean_all(Var<S> a) {
  double n = static_cast<double>(a.rows() * a.cols());
  return scale(sum_all(a), 1.0 / n);
}

// Row sums: (n x m) -> (n x 1).
template <class S>
Var<S> rowsum(Var<S> a) {
  Mat<S> v = a.val().rowwise().sum();
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int) {
                        t.accumulate(
                            ia, Mat<S>(g * Mat<S>::Ones(1, t.val(ia).cols())));
                      });
}

// Column sums: (n x m) -> (1 x m).
template <class S>
Var<S> colsum(Var<S> a) {
  Mat<S> v = a.val().colwise().sum();
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int) {
                        t.accumulate(
                            ia, Mat<S>(Mat<S>::Ones(t.val(ia).rows(), 1) * g));
                      });
}

// Column means: (n x m) -> (1 x m).
template <class S>
Var<S> colmean(Var<S> a) {
  return scale(colsum(a), 1.0 / static_cast<double>(a.rows()));
}

// ---------------------------------------------------------------------------
// Broadcasts
// ---------------------------------------------------------------------------

template <class S>
Var<S> add_rowvec(Var<S> a, Var<S> r) {
  auto& t = detail::same_tape(a, r);
  LSF_CHECK(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec shape");
  Mat<S> v = a.val();
  v.rowwise() += r.val().row(0);
  int ia = a.id, ir = r.id;
  return t.push(std::move(v), {ia, ir},
                [ia, ir](Tape<S>& t, const Mat<S>& g, int) {
                  t.accumulate(ia, g);
                  t.accumulate(ir, Mat<S>(g.colwise().sum()));
                });
}

template <class S>
Var<S> mul_rowvec(Var<S> a, Var<S> r) {
  auto& t = detail::same_tape(a, r);
  LSF_CHECK(r.rows() == 1 && r.cols() == a.cols(), "mul_rowvec shape");
  Mat<S> v = a.val();
  v.array().rowwise() *= r.val().array().row(0);
  int ia = a.id, ir = r.id;
  return t.push(std::move(v), {ia, ir},
                [ia, ir](Tape<S>& t, const Mat<S>& g, int) {
                  if (t.needs_grad(ia)) {
                    Mat<S> ga = g;
                    ga.array().rowwise() *= t.val(ir).array().row(0);
                    t.accumulate(ia, ga);
                  }
                  if (t.needs_grad(ir))
                    t.accumulate(ir,
                                 Mat<S>(g.cwiseProduct(t.val(ia)).colwise().sum()));
                });
}

template <class S>
Var<S> add_colvec(Var<S> a, Var<S> c) {
  auto& t = detail::same_tape(a, c);
  LSF_CHECK(c.cols() == 1 && c.rows() == a.rows(), "add_colvec shape");
  Mat<S> v = a.val();
  v.colwise() += c.val().col(0);
  int ia = a.id, ic = c.id;
  return t.push(std::move(v), {ia, ic},
                [ia, ic](Tape<S>& t, const Mat<S>& g, int) {
                  t.accumulate(ia, g);
                  t.accumulate(ic, Mat<S>(g.rowwise().sum()));
                });
}

template <class S>
Var<S> mul_colvec(Var<S> a, Var<S> c) {
  auto& t = detail::same_tape(a, c);
  LSF_CHECK(c.cols() == 1 && c.rows() == a.rows(), "mul_colvec shape");
  Mat<S> v = a.val();
  v.array().colwise() *= c.val().array().col(0);
  int ia = a.id, ic = c.id;
  return t.push(std::move(v), {ia, ic},
                [ia, ic](Tape<S>& t, const Mat<S>& g, int) {
                  if (t.needs_grad(ia)) {
                    Mat<S> ga = g;
                    ga.array().colwise() *= t.val(ic).array().col(0);
                    t.accumulate(ia, ga);
                  }
                  if (t.needs_grad(ic))
                    t.accumulate(ic,
                                 Mat<S>(g.cwiseProduct(t.val(ia)).rowwise().sum()));
                });
}

template <class S>
Var<S> div_colvec(Var<S> a, Var<S> c) {
  auto& t = detail::same_tape(a, c);
  LSF_CHECK(c.cols() == 1 && c.rows() == a.rows(), "div_colvec shape");
  Mat<S> v = a.val();
  v.array().colwise() /= c.val().array().col(0);
  int ia = a.id, ic = c.id;
  return t.push(std::move(v), {ia, ic},
                [ia, ic](Tape<S>& t, const Mat<S>& g, int self) {
                  if (t.needs_grad(ia)) {
                    Mat<S> ga = g;
                    ga.array().colwise() /= t.val(ic).array().col(0);
                    t.accumulate(ia, ga);
                  }
                  if (t.needs_grad(ic)) {
                    Mat<S> gy = g.cwiseProduct(t.val(self));
                    gy.array().colwise() /= t.val(ic).array().col(0);
                    t.accumulate(ic, Mat<S>(-gy.rowwise().sum()));
                  }
                });
}

// Replicate a 1 x m row n times.
template <class S>
Var<S> broadcast_rows(Var<S> r, Eigen::Index n) {
  LSF_CHECK(r.rows() == 1, "broadcast_rows wants a row");
  Mat<S> v = r.val().replicate(n, 1);
  int ir = r.id;
  return r.tape->push(std::move(v), {ir},
                      [ir](Tape<S>& t, const Mat<S>& g, int) {
                        t.accumulate(ir, Mat<S>(g.colwise().sum()));
                      });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {
// df receives (x, y) where y = f(x).
template <class S, class F, class DF>
Var<S> unary(Var<S> a, F f, DF df) {
  const Mat<S>& x0 = a.val();
  Mat<S> v(x0.rows(), x0.cols());
  for (Eigen::Index j = 0; j < x0.cols(); ++j)
    for (Eigen::Index i = 0; i < x0.rows(); ++i) v(i, j) = f(x0(i, j));
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia, df](Tape<S>& t, const Mat<S>& g, int self) {
                        const Mat<S>& x = t.val(ia);
                        const Mat<S>& y = t.val(self);
                        Mat<S> ga(x.rows(), x.cols());
                        for (Eigen::Index j = 0; j < x.cols(); ++j)
                          for (Eigen::Index i = 0; i < x.rows(); ++i)
                            ga(i, j) = g(i, j) * df(x(i, j), y(i, j));
                        t.accumulate(ia, ga);
                      });
}
}  // namespace detail

template <class S>
Var<S> exp(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::exp(x); }, [](S, S y) { return y; });
}

template <class S>
Var<S> log(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::log(x); }, [](S x, S) { return S(1) / x; });
}

template <class S>
Var<S> sqrt(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::sqrt(x); }, [](S, S y) { return S(0.5) / y; });
}

template <class S>
Var<S> sin(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::sin(x); }, [](S x, S) { return std::cos(x); });
}

template <class S>
Var<S> cos(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::cos(x); }, [](S x, S) { return -std::sin(x); });
}

template <class S>
Var<S> tanh(Var<S> a) {
  return detail::unary(
      a, [](S x) { return std::tanh(x); }, [](S, S y) { return S(1) - y * y; });
}

namespace detail {
template <class S>
S sigmoid_scalar(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}
}  // namespace detail

template <class S>
Var<S> sigmoid(Var<S> a) {
  return detail::unary(
      a, [](S x) { return detail::sigmoid_scalar(x); },
      [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Var<S> relu(Var<S> a) {
  return detail::unary(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

template <class S>
Var<S> gelu(Var<S> a) {
  // Exact gelu: x * Phi(x).
  return detail::unary(
      a,
      [](S x) {
        return S(0.5) * x * (S(1) + S(std::erf(static_cast<double>(x) /
                                               1.4142135623730951)));
      },
      [](S x, S) {
        double xd = static_cast<double>(x);
        double phi = 0.5 * (1 + std::erf(xd / 1.4142135623730951));
        double pdf = std::exp(-0.5 * xd * xd) / 2.5066282746310002;
        return S(phi + xd * pdf);
      });
}

template <class S>
Var<S> swish(Var<S> a) {
  return detail::unary(
      a, [](S x) { return x * detail::sigmoid_scalar(x); },
      [](S x, S) {
        S s = detail::sigmoid_scalar(x);
        return s + x * s * (S(1) - s);
      });
}

template <class S>
Var<S> softplus(Var<S> a) {
  return detail::unary(
      a,
      [](S x) {
        if (x > S(30)) return x;
        if (x < S(-30)) return std::exp(x);
        return S(std::log1p(std::exp(x)));
      },
      [](S x, S) { return detail::sigmoid_scalar(x); });
}

template <class S>
Var<S> clamp_min(Var<S> a, double c) {
  return detail::unary(
      a, [c](S x) { return x > S(c) ? x : S(c); },
      [c](S x, S) { return x > S(c) ? S(1) : S(0); });
}

template <class S>
Var<S> square(Var<S> a) {
  return detail::unary(
      a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

// ---------------------------------------------------------------------------
// Concatenation / slicing / row selection
// ---------------------------------------------------------------------------

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  LSF_CHECK(!parts.empty(), "concat_cols empty");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index n = parts[0].rows(), m = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    LSF_CHECK(p.tape == &t, "concat_cols tapes");
    LSF_CHECK(p.rows() == n, "concat_cols rows");
    m += p.cols();
    ids.push_back(p.id);
  }
  Mat<S> v(n, m);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.val();
    c += p.cols();
  }
  return t.push(std::move(v), ids, [ids](Tape<S>& t, const Mat<S>& g, int) {
    Eigen::Index c = 0;
    for (int id : ids) {
      Eigen::Index w = t.val(id).cols();
      t.accumulate(id, Mat<S>(g.middleCols(c, w)));
      c += w;
    }
  });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  LSF_CHECK(!parts.empty(), "concat_rows empty");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index m = parts[0].cols(), n = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    LSF_CHECK(p.tape == &t, "concat_rows tapes");
    LSF_CHECK(p.cols() == m, "concat_rows cols");
    n += p.rows();
    ids.push_back(p.id);
  }
  Mat<S> v(n, m);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.val();
    r += p.rows();
  }
  return t.push(std::move(v), ids, [ids](Tape<S>& t, const Mat<S>& g, int) {
    Eigen::Index r = 0;
    for (int id : ids) {
      Eigen::Index h = t.val(id).rows();
      t.accumulate(id, Mat<S>(g.middleRows(r, h)));
      r += h;
    }
  });
}

template <class S>
Var<S> slice_cols(Var<S> a, Eigen::Index c0, Eigen::Index n) {
  LSF_CHECK(c0 >= 0 && n >= 0 && c0 + n <= a.cols(), "slice_cols range");
  Mat<S> v = a.val().middleCols(c0, n);
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia, c0, n](Tape<S>& t, const Mat<S>& g, int) {
                        Mat<S> ga =
                            Mat<S>::Zero(t.val(ia).rows(), t.val(ia).cols());
                        ga.middleCols(c0, n) = g;
                        t.accumulate(ia, ga);
                      });
}

template <class S>
Var<S> slice_rows(Var<S> a, Eigen::Index r0, Eigen::Index n) {
  LSF_CHECK(r0 >= 0 && n >= 0 && r0 + n <= a.rows(), "slice_rows range");
  Mat<S> v = a.val().middleRows(r0, n);
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia, r0, n](Tape<S>& t, const Mat<S>& g, int) {
                        Mat<S> ga =
                            Mat<S>::Zero(t.val(ia).rows(), t.val(ia).cols());
                        ga.middleRows(r0, n) = g;
                        t.accumulate(ia, ga);
                      });
}

template <class S>
Var<S> gather_rows(Var<S> a, std::vector<int> idx) {
  for (int i : idx)
    LSF_CHECK(i >= 0 && i < a.rows(), "gather_rows index");
  Mat<S> v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t r = 0; r < idx.size(); ++r) v.row(r) = a.val().row(idx[r]);
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia, idx = std::move(idx)](Tape<S>& t, const Mat<S>& g,
                                                 int) {
                        Mat<S> ga =
                            Mat<S>::Zero(t.val(ia).rows(), t.val(ia).cols());
                        for (size_t r = 0; r < idx.size(); ++r)
                          ga.row(idx[r]) += g.row(r);
                        t.accumulate(ia, ga);
                      });
}

// Row-interleave G matrices of shape (P x d) into (P*G x d):
// output row p*G + j comes from parts[j] row p.
template <class S>
Var<S> interleave_rows(const std::vector<Var<S>>& parts) {
  LSF_CHECK(!parts.empty(), "interleave_rows empty");
  Tape<S>& t = *parts[0].tape;
  Eigen::Index p = parts[0].rows(), d = parts[0].cols();
  std::vector<int> ids;
  for (const auto& m : parts) {
    LSF_CHECK(m.tape == &t && m.rows() == p && m.cols() == d,
              "interleave_rows shape");
    ids.push_back(m.id);
  }
  Eigen::Index G = static_cast<Eigen::Index>(parts.size());
  Mat<S> v(p * G, d);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < G; ++j) v.row(i * G + j) = parts[j].val().row(i);
  return t.push(std::move(v), ids, [ids, p](Tape<S>& t, const Mat<S>& g, int) {
    Eigen::Index G = static_cast<Eigen::Index>(ids.size());
    for (Eigen::Index j = 0; j < G; ++j) {
      if (!t.needs_grad(ids[j])) continue;
      Mat<S> gj(p, g.cols());
      for (Eigen::Index i = 0; i < p; ++i) gj.row(i) = g.row(i * G + j);
      t.accumulate(ids[j], gj);
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise softmax and normalizations
// ---------------------------------------------------------------------------

template <class S>
Var<S> softmax_rows(Var<S> a) {
  const Mat<S>& x = a.val();
  Mat<S> v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S mx = x.row(i).maxCoeff();
    Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(i).array() - mx).exp();
    v.row(i) = (e / e.sum()).matrix();
  }
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int self) {
                        const Mat<S>& y = t.val(self);
                        Mat<S> gy = g.cwiseProduct(y);
                        Eigen::Matrix<S, Eigen::Dynamic, 1> s =
                            gy.rowwise().sum();
                        Mat<S> ga =
                            gy - (y.array().colwise() * s.array()).matrix();
                        t.accumulate(ia, ga);
                      });
}

template <class S>
Var<S> layernorm_rows(Var<S> a, double eps = 1e-5) {
  const Mat<S>& x = a.val();
  Eigen::Index n = x.rows(), m = x.cols();
  Mat<S> y(n, m);
  auto isd = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    S mu = x.row(i).mean();
    S var = (x.row(i).array() - mu).square().mean();
    S s = S(1) / std::sqrt(var + S(eps));
    (*isd)(i) = s;
    y.row(i) = ((x.row(i).array() - mu) * s).matrix();
  }
  int ia = a.id;
  return a.tape->push(std::move(y), {ia},
                      [ia, isd](Tape<S>& t, const Mat<S>& g, int self) {
                        const Mat<S>& y = t.val(self);
                        Mat<S> ga(y.rows(), y.cols());
                        for (Eigen::Index i = 0; i < y.rows(); ++i) {
                          S gmean = g.row(i).mean();
                          S gymean = g.row(i).cwiseProduct(y.row(i)).mean();
                          ga.row(i) = ((g.row(i).array() - gmean -
                                        y.row(i).array() * gymean) *
                                       (*isd)(i))
                                          .matrix();
                        }
                        t.accumulate(ia, ga);
                      });
}

// Group normalization over an (H*W x C) feature map: statistics per channel
// group, taken over all pixels. Affine is applied externally if wanted.
template <class S>
Var<S> groupnorm(Var<S> a, int groups, double eps = 1e-5) {
  const Mat<S>& x = a.val();
  Eigen::Index C = x.cols();
  LSF_CHECK(groups > 0 && C % groups == 0, "groupnorm channels % groups");
  Eigen::Index gc = C / groups;
  Mat<S> y(x.rows(), C);
  auto isd = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(groups);
  for (int g = 0; g < groups; ++g) {
    auto blk = x.middleCols(g * gc, gc);
    S mu = blk.mean();
    S var = (blk.array() - mu).square().mean();
    S s = S(1) / std::sqrt(var + S(eps));
    (*isd)(g) = s;
    y.middleCols(g * gc, gc) = ((blk.array() - mu) * s).matrix();
  }
  int ia = a.id;
  return a.tape->push(
      std::move(y), {ia},
      [ia, isd, groups, gc](Tape<S>& t, const Mat<S>& g, int self) {
        const Mat<S>& y = t.val(self);
        Mat<S> ga(y.rows(), y.cols());
        double cnt = static_cast<double>(y.rows()) * static_cast<double>(gc);
        for (int gi = 0; gi < groups; ++gi) {
          auto yb = y.middleCols(gi * gc, gc);
          auto gb = g.middleCols(gi * gc, gc);
          S gmean = gb.sum() / S(cnt);
          S gymean = gb.cwiseProduct(yb).sum() / S(cnt);
          ga.middleCols(gi * gc, gc) =
              ((gb.array() - gmean - yb.array() * gymean) * (*isd)(gi)).matrix();
        }
        t.accumulate(ia, ga);
      });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------
//
// Multi-head scaled dot-product attention over already-projected q/k/v.
// Two key layouts:
//   shared  (grouped == false): k, v have M rows; every query row attends to
//           the same M keys (context tokens / latents shared by all queries).
//   grouped (grouped == true): k, v have q.rows()*G rows; query row p attends
//           to rows [p*G, (p+1)*G) (per-point token sets).
// mask (optional): entries 1 = blocked, shape (q.rows x M|G). Blocked logits
// get -1e9 added before the softmax. A fully blocked row raises NumericError.

template <class S>
Var<S> attention(Var<S> q, Var<S> k, Var<S> v, int heads, bool grouped,
                 const Mat<S>* mask = nullptr) {
  auto& t = detail::same_tape(q, k);
  LSF_CHECK(v.tape == &t, "attention tapes");
  const Mat<S>& Q = q.val();
  const Mat<S>& K = k.val();
  const Mat<S>& V = v.val();
  Eigen::Index P = Q.rows(), d = Q.cols();
  LSF_CHECK(K.cols() == d && V.cols() == d, "attention dims");
  LSF_CHECK(heads > 0 && d % heads == 0, "attention heads");
  LSF_CHECK(K.rows() == V.rows(), "attention k/v rows");
  Eigen::Index dh = d / heads;
  Eigen::Index G;
  if (grouped) {
    LSF_CHECK(P > 0 && K.rows() % P == 0, "attention grouped rows");
    G = K.rows() / P;
  } else {
    G = K.rows();
  }
  if (mask) {
    LSF_CHECK(mask->rows() == P && mask->cols() == G, "attention mask shape");
    for (Eigen::Index i = 0; i < P; ++i) {
      bool any_open = false;
      for (Eigen::Index j = 0; j < G; ++j)
        if ((*mask)(i, j) == S(0)) {
          any_open = true;
          break;
        }
      if (!any_open)
        throw NumericError("attention: every key masked for a query row");
    }
  }
  S inv_sqrt = S(1.0 / std::sqrt(static_cast<double>(dh)));

  // Softmax weights per head, side by side: (P x G*heads).
  auto W = std::make_shared<Mat<S>>(P, G * heads);
  Mat<S> out(P, d);
  Mat<S> logits(P, G);
  for (int h = 0; h < heads; ++h) {
    auto Qh = Q.middleCols(h * dh, dh);
    auto Kh = K.middleCols(h * dh, dh);
    auto Vh = V.middleCols(h * dh, dh);
    if (!grouped) {
      logits.noalias() = Qh * Kh.transpose();
      logits *= inv_sqrt;
    } else {
      for (Eigen::Index p = 0; p < P; ++p)
        logits.row(p).noalias() =
            Qh.row(p) * Kh.middleRows(p * G, G).transpose() * inv_sqrt;
    }
    if (mask) logits += (*mask) * S(-1e9);
    for (Eigen::Index p = 0; p < P; ++p) {
      S mx = logits.row(p).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> e = (logits.row(p).array() - mx).exp();
      W->block(p, h * G, 1, G) = (e / e.sum()).matrix();
    }
    if (!grouped) {
      out.middleCols(h * dh, dh).noalias() = W->middleCols(h * G, G) * Vh;
    } else {
      for (Eigen::Index p = 0; p < P; ++p)
        out.block(p, h * dh, 1, dh).noalias() =
            W->block(p, h * G, 1, G) * Vh.middleRows(p * G, G);
    }
  }

  int iq = q.id, ik = k.id, iv = v.id;
  return t.push(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, W, heads, dh, G, grouped, inv_sqrt](Tape<S>& t,
                                                       const Mat<S>& g, int) {
        const Mat<S>& Q = t.val(iq);
        const Mat<S>& K = t.val(ik);
        const Mat<S>& V = t.val(iv);
        Eigen::Index P = Q.rows();
        Mat<S> gQ = Mat<S>::Zero(Q.rows(), Q.cols());
        Mat<S> gK = Mat<S>::Zero(K.rows(), K.cols());
        Mat<S> gV = Mat<S>::Zero(V.rows(), V.cols());
        for (int h = 0; h < heads; ++h) {
          auto Qh = Q.middleCols(h * dh, dh);
          auto Kh = K.middleCols(h * dh, dh);
          auto Vh = V.middleCols(h * dh, dh);
          auto Wh = W->middleCols(h * G, G);
          auto gh = g.middleCols(h * dh, dh);
          if (!grouped) {
            Mat<S> dW;
            dW.noalias() = gh * Vh.transpose();  // P x G
            gV.middleCols(h * dh, dh).noalias() += Wh.transpose() * gh;
            Eigen::Matrix<S, Eigen::Dynamic, 1> srow =
                dW.cwiseProduct(Wh).rowwise().sum();
            Mat<S> dL = dW;
            dL.array().colwise() -= srow.array();
            dL = dL.cwiseProduct(Wh) * inv_sqrt;
            gQ.middleCols(h * dh, dh).noalias() += dL * Kh;
            gK.middleCols(h * dh, dh).noalias() += dL.transpose() * Qh;
          } else {
            for (Eigen::Index p = 0; p < P; ++p) {
              auto Kp = Kh.middleRows(p * G, G);
              auto Vp = Vh.middleRows(p * G, G);
              auto Wp = Wh.row(p);
              auto gp = gh.row(p);
              Eigen::Matrix<S, 1, Eigen::Dynamic> dW = gp * Vp.transpose();
              gV.block(p * G, h * dh, G, dh).noalias() += Wp.transpose() * gp;
              S srow = dW.cwiseProduct(Wp).sum();
              Eigen::Matrix<S, 1, Eigen::Dynamic> dL =
                  ((dW.array() - srow) * Wp.array()).matrix() * inv_sqrt;
              gQ.block(p, h * dh, 1, dh).noalias() += dL * Kp;
              gK.block(p * G, h * dh, G, dh).noalias() +=
                  dL.transpose() * Qh.row(p);
            }
          }
        }
        t.accumulate(iq, gQ);
        t.accumulate(ik, gK);
        t.accumulate(iv, gV);
      });
}

// ---------------------------------------------------------------------------
// Exclusive cumulative sum along rows: y(i,j) = sum_{k<j} x(i,k)
// ---------------------------------------------------------------------------

template <class S>
Var<S> cumsum_exclusive_rows(Var<S> a) {
  const Mat<S>& x = a.val();
  Mat<S> v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S acc = S(0);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      v(i, j) = acc;
      acc += x(i, j);
    }
  }
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int) {
                        const Mat<S>& x = t.val(ia);
                        Mat<S> ga(x.rows(), x.cols());
                        for (Eigen::Index i = 0; i < x.rows(); ++i) {
                          S acc = S(0);
                          for (Eigen::Index j = x.cols() - 1; j >= 0; --j) {
                            ga(i, j) = acc;
                            acc += g(i, j);
                          }
                        }
                        t.accumulate(ia, ga);
                      });
}

// ---------------------------------------------------------------------------
// Row-major reinterpretation to a new shape with the same element count
// ---------------------------------------------------------------------------

template <class S>
Var<S> reshape(Var<S> a, Eigen::Index r, Eigen::Index c) {
  LSF_CHECK(r > 0 && c > 0 && a.rows() * a.cols() == r * c, "reshape size");
  const Mat<S>& x = a.val();
  Eigen::Index q = x.cols();
  Mat<S> v(r, c);
  for (Eigen::Index f = 0; f < r * c; ++f)
    v(f / c, f % c) = x(f / q, f % q);
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia, c](Tape<S>& t, const Mat<S>& g, int) {
                        const Mat<S>& x = t.val(ia);
                        Eigen::Index q = x.cols();
                        Mat<S> ga(x.rows(), q);
                        for (Eigen::Index f = 0; f < g.rows() * c; ++f)
                          ga(f / q, f % q) = g(f / c, f % c);
                        t.accumulate(ia, ga);
                      });
}

// ---------------------------------------------------------------------------
// Convolution / resampling on (H*W x C) feature maps, row index = y*W + x
// ---------------------------------------------------------------------------

namespace detail {
// im2col for a 3x3 kernel with padding 1. Column layout: (ky*3+kx)*Cin + c.
template <class S>
Mat<S> im2col3x3(const Mat<S>& x, int H, int W, int stride, int* Ho_out,
                 int* Wo_out) {
  int Cin = static_cast<int>(x.cols());
  int Ho = (H - 1) / stride + 1;
  int Wo = (W - 1) / stride + 1;
  *Ho_out = Ho;
  *Wo_out = Wo;
  Mat<S> cols = Mat<S>::Zero(static_cast<Eigen::Index>(Ho) * Wo, 9 * Cin);
  for (int yo = 0; yo < Ho; ++yo) {
    for (int xo = 0; xo < Wo; ++xo) {
      Eigen::Index r = static_cast<Eigen::Index>(yo) * Wo + xo;
      for (int ky = 0; ky < 3; ++ky) {
        int yi = yo * stride + ky - 1;
        if (yi < 0 || yi >= H) continue;
        for (int kx = 0; kx < 3; ++kx) {
          int xi = xo * stride + kx - 1;
          if (xi < 0 || xi >= W) continue;
          cols.block(r, (ky * 3 + kx) * Cin, 1, Cin) =
              x.row(static_cast<Eigen::Index>(yi) * W + xi);
        }
      }
    }
  }
  return cols;
}
}  // namespace detail

// 3x3 convolution, padding 1, stride 1 or 2. x: (H*W x Cin), w: (9*Cin x Cout).
// Output: (Ho*Wo x Cout) with Ho = ceil(H/stride).
template <class S>
Var<S> conv3x3(Var<S> x, int H, int W, Var<S> w, int stride = 1) {
  auto& t = detail::same_tape(x, w);
  LSF_CHECK(x.rows() == static_cast<Eigen::Index>(H) * W, "conv3x3 HW");
  LSF_CHECK(stride == 1 || stride == 2, "conv3x3 stride");
  LSF_CHECK(w.rows() == 9 * x.cols(), "conv3x3 kernel rows");
  int Ho, Wo;
  auto cols = std::make_shared<Mat<S>>(
      detail::im2col3x3(x.val(), H, W, stride, &Ho, &Wo));
  Mat<S> v;
  v.noalias() = (*cols) * w.val();
  int ix = x.id, iw = w.id;
  int Cin = static_cast<int>(x.cols());
  return t.push(
      std::move(v), {ix, iw},
      [ix, iw, cols, H, W, Ho, Wo, stride, Cin](Tape<S>& t, const Mat<S>& g,
                                                int) {
        if (t.needs_grad(iw)) t.accumulate(iw, Mat<S>(cols->transpose() * g));
        if (!t.needs_grad(ix)) return;
        Mat<S> dcols;
        dcols.noalias() = g * t.val(iw).transpose();
        Mat<S> gx = Mat<S>::Zero(static_cast<Eigen::Index>(H) * W, Cin);
        for (int yo = 0; yo < Ho; ++yo) {
          for (int xo = 0; xo < Wo; ++xo) {
            Eigen::Index r = static_cast<Eigen::Index>(yo) * Wo + xo;
            for (int ky = 0; ky < 3; ++ky) {
              int yi = yo * stride + ky - 1;
              if (yi < 0 || yi >= H) continue;
              for (int kx = 0; kx < 3; ++kx) {
                int xi = xo * stride + kx - 1;
                if (xi < 0 || xi >= W) continue;
                gx.row(static_cast<Eigen::Index>(yi) * W + xi) +=
                    dcols.block(r, (ky * 3 + kx) * Cin, 1, Cin);
              }
            }
          }
        }
        t.accumulate(ix, gx);
      });
}

namespace detail {
struct BilinearTap {
  Eigen::Index i00, i01, i10, i11;
  double wx, wy;
};

inline BilinearTap bilinear_tap(double u, double v, int W, int H) {
  // Continuous coords in pixel units; cell (ix, iy) has center (ix+.5, iy+.5).
  double fx = u - 0.5, fy = v - 0.5;
  double flx = std::floor(fx), fly = std::floor(fy);
  int x0 = static_cast<int>(flx), y0 = static_cast<int>(fly);
  double wx = fx - flx, wy = fy - fly;
  auto cx = [&](int x) { return std::min(std::max(x, 0), W - 1); };
  auto cy = [&](int y) { return std::min(std::max(y, 0), H - 1); };
  BilinearTap tp;
  tp.i00 = static_cast<Eigen::Index>(cy(y0)) * W + cx(x0);
  tp.i01 = static_cast<Eigen::Index>(cy(y0)) * W + cx(x0 + 1);
  tp.i10 = static_cast<Eigen::Index>(cy(y0 + 1)) * W + cx(x0);
  tp.i11 = static_cast<Eigen::Index>(cy(y0 + 1)) * W + cx(x0 + 1);
  tp.wx = wx;
  tp.wy = wy;
  return tp;
}
}  // namespace detail

// Bilinear resize of an (H*W x C) map to (H2*W2 x C), half-pixel aligned.
template <class S>
Var<S> bilinear_resize(Var<S> x, int H, int W, int H2, int W2) {
  LSF_CHECK(x.rows() == static_cast<Eigen::Index>(H) * W, "bilinear_resize HW");
  const Mat<S>& in = x.val();
  Mat<S> v(static_cast<Eigen::Index>(H2) * W2, in.cols());
  double sx = static_cast<double>(W) / W2, sy = static_cast<double>(H) / H2;
  for (int y = 0; y < H2; ++y) {
    for (int xo = 0; xo < W2; ++xo) {
      double u = (xo + 0.5) * sx, vv = (y + 0.5) * sy;
      auto tp = detail::bilinear_tap(u, vv, W, H);
      v.row(static_cast<Eigen::Index>(y) * W2 + xo) =
          in.row(tp.i00) * S((1 - tp.wx) * (1 - tp.wy)) +
          in.row(tp.i01) * S(tp.wx * (1 - tp.wy)) +
          in.row(tp.i10) * S((1 - tp.wx) * tp.wy) +
          in.row(tp.i11) * S(tp.wx * tp.wy);
    }
  }
  int ix = x.id;
  return x.tape->push(
      std::move(v), {ix},
      [ix, H, W, H2, W2](Tape<S>& t, const Mat<S>& g, int) {
        Mat<S> gx =
            Mat<S>::Zero(static_cast<Eigen::Index>(H) * W, t.val(ix).cols());
        double sx = static_cast<double>(W) / W2;
        double sy = static_cast<double>(H) / H2;
        for (int y = 0; y < H2; ++y) {
          for (int xo = 0; xo < W2; ++xo) {
            double u = (xo + 0.5) * sx, vv = (y + 0.5) * sy;
            auto tp = detail::bilinear_tap(u, vv, W, H);
            auto gr = g.row(static_cast<Eigen::Index>(y) * W2 + xo);
            gx.row(tp.i00) += gr * S((1 - tp.wx) * (1 - tp.wy));
            gx.row(tp.i01) += gr * S(tp.wx * (1 - tp.wy));
            gx.row(tp.i10) += gr * S((1 - tp.wx) * tp.wy);
            gx.row(tp.i11) += gr * S(tp.wx * tp.wy);
          }
        }
        t.accumulate(ix, gx);
      });
}

// Bilinear sampling of an (H*W x C) map at continuous uv (P x 2, pixel units,
// col 0 = u/x, col 1 = v/y). Differentiable in the map and in uv.
template <class S>
Var<S> bilinear_gather(Var<S> map, int H, int W, Var<S> uv) {
  auto& t = detail::same_tape(map, uv);
  LSF_CHECK(map.rows() == static_cast<Eigen::Index>(H) * W, "bilinear_gather HW");
  LSF_CHECK(uv.cols() == 2, "bilinear_gather uv cols");
  const Mat<S>& F = map.val();
  const Mat<S>& P = uv.val();
  Eigen::Index n = P.rows(), C = F.cols();
  Mat<S> v(n, C);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto tp = detail::bilinear_tap(static_cast<double>(P(i, 0)),
                                   static_cast<double>(P(i, 1)), W, H);
    v.row(i) = F.row(tp.i00) * S((1 - tp.wx) * (1 - tp.wy)) +
               F.row(tp.i01) * S(tp.wx * (1 - tp.wy)) +
               F.row(tp.i10) * S((1 - tp.wx) * tp.wy) +
               F.row(tp.i11) * S(tp.wx * tp.wy);
  }
  int im = map.id, ip = uv.id;
  return t.push(
      std::move(v), {im, ip},
      [im, ip, H, W](Tape<S>& t, const Mat<S>& g, int) {
        const Mat<S>& F = t.val(im);
        const Mat<S>& P = t.val(ip);
        Eigen::Index n = P.rows();
        bool need_map = t.needs_grad(im), need_uv = t.needs_grad(ip);
        Mat<S> gm, gp;
        if (need_map) gm = Mat<S>::Zero(F.rows(), F.cols());
        if (need_uv) gp = Mat<S>::Zero(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
          auto tp = detail::bilinear_tap(static_cast<double>(P(i, 0)),
                                         static_cast<double>(P(i, 1)), W, H);
          auto gr = g.row(i);
          if (need_map) {
            gm.row(tp.i00) += gr * S((1 - tp.wx) * (1 - tp.wy));
            gm.row(tp.i01) += gr * S(tp.wx * (1 - tp.wy));
            gm.row(tp.i10) += gr * S((1 - tp.wx) * tp.wy);
            gm.row(tp.i11) += gr * S(tp.wx * tp.wy);
          }
          if (need_uv) {
            Eigen::Matrix<S, 1, Eigen::Dynamic> du =
                (F.row(tp.i01) - F.row(tp.i00)) * S(1 - tp.wy) +
                (F.row(tp.i11) - F.row(tp.i10)) * S(tp.wy);
            Eigen::Matrix<S, 1, Eigen::Dynamic> dv =
                (F.row(tp.i10) - F.row(tp.i00)) * S(1 - tp.wx) +
                (F.row(tp.i11) - F.row(tp.i01)) * S(tp.wx);
            gp(i, 0) = gr.cwiseProduct(du).sum();
            gp(i, 1) = gr.cwiseProduct(dv).sum();
          }
        }
        if (need_map) t.accumulate(im, gm);
        if (need_uv) t.accumulate(ip, gp);
      });
}

// ---------------------------------------------------------------------------
// Linear-algebra ops for flows
// ---------------------------------------------------------------------------

// log |det A| for square A. Error on (numerically) singular input.
template <class S>
Var<S> logabsdet(Var<S> a) {
  const Mat<S>& A = a.val();
  LSF_CHECK(A.rows() == A.cols(), "logabsdet square");
  Eigen::PartialPivLU<Mat<S>> lu(A);
  S ld = S(0);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    S u = lu.matrixLU()(i, i);
    if (std::abs(static_cast<double>(u)) < 1e-280)
      throw NumericError("logabsdet: singular matrix");
    ld += std::log(std::abs(u));
  }
  Mat<S> v(1, 1);
  v(0, 0) = ld;
  int ia = a.id;
  return a.tape->push(std::move(v), {ia},
                      [ia](Tape<S>& t, const Mat<S>& g, int) {
                        Mat<S> inv = t.val(ia).inverse();
                        t.accumulate(ia, Mat<S>(g(0, 0) * inv.transpose()));
                      });
}

// Y such that Y * A = X (i.e. Y = X * A^{-1}).
template <class S>
Var<S> solve_right(Var<S> x, Var<S> a) {
  auto& t = detail::same_tape(x, a);
  const Mat<S>& A = a.val();
  LSF_CHECK(A.rows() == A.cols() && x.cols() == A.rows(), "solve_right dims");
  Eigen::PartialPivLU<Mat<S>> lu(A.transpose());
  Mat<S> y = lu.solve(x.val().transpose()).transpose();
  if (!y.allFinite()) throw NumericError("solve_right: singular matrix");
  int ix = x.id, ia = a.id;
  return t.push(std::move(y), {ix, ia},
                [ix, ia](Tape<S>& t, const Mat<S>& g, int self) {
                  Eigen::PartialPivLU<Mat<S>> lu(t.val(ia));
                  // gX = G A^{-T}; gA = -Y^T gX.
                  Mat<S> gx = lu.solve(g.transpose()).transpose();
                  t.accumulate(ix, gx);
                  if (t.needs_grad(ia))
                    t.accumulate(ia, Mat<S>(-t.val(self).transpose() * gx));
                });
}

// ---------------------------------------------------------------------------
// Circular (sin/cos) positional encoding
// ---------------------------------------------------------------------------

// For each entry p of x emits sin(2^L pi p), cos(2^L pi p), L = lmin..lmax.
// Output columns grouped per input column:
// [col0: (sin,cos)_lmin .. (sin,cos)_lmax, col1: ...].
template <class S>
Var<S> circular_encode(Var<S> x, int lmin, int lmax) {
  LSF_CHECK(lmax >= lmin, "circular_encode range");
  const Mat<S>& in = x.val();
  int nf = lmax - lmin + 1;
  Eigen::Index n = in.rows(), m = in.cols();
  Mat<S> v(n, m * 2 * nf);
  std::vector<double> freq(nf);
  for (int l = 0; l < nf; ++l)
    freq[l] = std::pow(2.0, lmin + l) * 3.14159265358979323846;
  for (Eigen::Index c = 0; c < m; ++c)
    for (int l = 0; l < nf; ++l)
      for (Eigen::Index i = 0; i < n; ++i) {
        double a = freq[l] * static_cast<double>(in(i, c));
        v(i, c * 2 * nf + 2 * l) = S(std::sin(a));
        v(i, c * 2 * nf + 2 * l + 1) = S(std::cos(a));
      }
  int ix = x.id;
  return x.tape->push(
      std::move(v), {ix},
      [ix, nf, freq](Tape<S>& t, const Mat<S>& g, int) {
        const Mat<S>& in = t.val(ix);
        Mat<S> gx = Mat<S>::Zero(in.rows(), in.cols());
        for (Eigen::Index c = 0; c < in.cols(); ++c)
          for (int l = 0; l < nf; ++l)
            for (Eigen::Index i = 0; i < in.rows(); ++i) {
              double a = freq[l] * static_cast<double>(in(i, c));
              gx(i, c) += S(freq[l]) *
                          (g(i, c * 2 * nf + 2 * l) * S(std::cos(a)) -
                           g(i, c * 2 * nf + 2 * l + 1) * S(std::sin(a)));
            }
        t.accumulate(ix, gx);
      });
}

}  // namespace lsf::ad
