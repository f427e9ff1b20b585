// Copyright 2026 The Forge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "forge/common.hpp"
#include "forge/tensor.hpp"

namespace forge {

template <typename T>
class Graph;

// Lightweight handle to a node inside a Graph. Cheap to copy.
template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  const Tensor<T>& grad() const;
  size_t rows() const { return value().rows(); }
  size_t cols() const { return value().cols(); }
};

// Reverse-mode automatic differentiation tape.
//
// Operations execute eagerly and append one record each, so insertion order
// is a topological order of the computation. backward() walks the records in
// reverse, accumulating gradients into every node that requires them.
// Executing the same operations on the same inputs reproduces bit-identical
// values: every kernel is a fixed-order sequential loop.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;       // allocated lazily on first accumulation
    bool requires_grad = false;
    bool grad_set = false;
    const char* op = "";
    BackwardFn backward;  // empty for leaves/constants
  };

  // Leaf node; gradients accumulate into it when requires_grad is true.
  Var<T> input(Tensor<T> value, bool requires_grad) {
    return emit("input", std::move(value), requires_grad, {});
  }

  // Leaf node that never receives gradients.
  Var<T> constant(Tensor<T> value) {
    return emit("const", std::move(value), false, {});
  }

  Var<T> emit(const char* op, Tensor<T> value, bool requires_grad,
              BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>{this, int(nodes_.size()) - 1};
  }

  const Node& node(int id) const { return nodes_[size_t(id)]; }
  Node& node(int id) { return nodes_[size_t(id)]; }
  size_t size() const { return nodes_.size(); }

  bool wants_grad(int id) const { return nodes_[size_t(id)].requires_grad; }

  // grad(target) += delta
  void accumulate(int id, const Tensor<T>& delta) {
    Node& n = nodes_[size_t(id)];
    if (!n.requires_grad) return;
    FORGE_SHAPE_CHECK(delta.same_shape(n.value),
                      "grad accumulate: delta ", delta.shape_str(),
                      " vs value ", n.value.shape_str(), " at op ", n.op);
    if (!n.grad_set) {
      n.grad = Tensor<T>(n.value.rows(), n.value.cols());
      n.grad_set = true;
    }
    T* g = n.grad.data_mut();
    const T* d = delta.data();
    for (size_t i = 0; i < delta.size(); ++i) g[i] += d[i];
  }

  // Reverse sweep from a scalar loss. Gradients of all reachable nodes with
  // requires_grad are populated; node values are left untouched.
  void backward(Var<T> loss) {
    FORGE_CHECK(loss.g == this, "backward: loss belongs to another graph");
    Node& root = nodes_[size_t(loss.id)];
    FORGE_SHAPE_CHECK(root.value.is_scalar(), "backward: loss is ",
                      root.value.shape_str(), ", expected a [1,1] scalar");
    FORGE_CHECK(root.requires_grad,
                "backward: loss does not depend on any trainable input");
    accumulate(loss.id, Tensor<T>::scalar(T(1)));
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (!n.requires_grad || !n.grad_set) continue;
      if (n.backward) n.backward(*this);
    }
  }

  // Gradient of a leaf after backward(); zeros if it never received one.
  Tensor<T> grad_of(Var<T> v) const {
    const Node& n = nodes_[size_t(v.id)];
    if (!n.grad_set) return Tensor<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return g->node(id).value;
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return g->node(id).grad;
}

// ---------------------------------------------------------------------------
// Dense kernels. Fixed loop order (i, l, j) so reductions are deterministic.
// ---------------------------------------------------------------------------

namespace detail {

// Wraps a backward closure only when some input actually needs gradients.
template <typename T, typename F>
typename Graph<T>::BackwardFn maybe_backward(bool needs, F&& f) {
  if (needs) return typename Graph<T>::BackwardFn(std::forward<F>(f));
  return {};
}

// C(m,n) += A(m,k) * B(k,n)
template <typename T>
void gemm_nn_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (size_t l = 0; l < k; ++l) {
      const T av = arow[l];
      if (av == T(0)) continue;
      const T* brow = b + l * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m,n) += A(m,k) * B(n,k)^T
template <typename T>
void gemm_nt_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      crow[j] += acc;
    }
  }
}

// C(k,n) += A(m,k)^T * B(m,n)
template <typename T>
void gemm_tn_acc(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t l = 0; l < m; ++l) {
    const T* arow = a + l * k;
    const T* brow = b + l * n;
    for (size_t i = 0; i < k; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Sum `src` (r,c) down to shape (tr,tc) where tr in {r,1} and tc in {c,1}.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& src, size_t tr, size_t tc) {
  if (src.rows() == tr && src.cols() == tc) return src;
  Tensor<T> out(tr, tc);
  T* o = out.data_mut();
  const T* s = src.data();
  for (size_t i = 0; i < src.rows(); ++i)
    for (size_t j = 0; j < src.cols(); ++j)
      o[(tr == 1 ? 0 : i) * tc + (tc == 1 ? 0 : j)] += s[i * src.cols() + j];
  return out;
}

inline bool broadcast_dim_ok(size_t a, size_t b) { return a == b || a == 1 || b == 1; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations with (r,c)|(1,c)|(r,1)|(1,1) broadcasting.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename FwdFn, typename DaFn, typename DbFn>
Var<T> binary_op(const char* name, Var<T> a, Var<T> b, FwdFn fwd, DaFn da,
                 DbFn db) {
  FORGE_CHECK(a.g == b.g, name, ": operands belong to different graphs");
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  FORGE_SHAPE_CHECK(broadcast_dim_ok(av.rows(), bv.rows()) &&
                        broadcast_dim_ok(av.cols(), bv.cols()),
                    name, ": lhs ", av.shape_str(), " rhs ", bv.shape_str());
  const size_t r = std::max(av.rows(), bv.rows());
  const size_t c = std::max(av.cols(), bv.cols());
  Tensor<T> out(r, c);
  {
    T* o = out.data_mut();
    const T* pa = av.data();
    const T* pb = bv.data();
    for (size_t i = 0; i < r; ++i) {
      const size_t ai = av.rows() == 1 ? 0 : i;
      const size_t bi = bv.rows() == 1 ? 0 : i;
      for (size_t j = 0; j < c; ++j) {
        const size_t aj = av.cols() == 1 ? 0 : j;
        const size_t bj = bv.cols() == 1 ? 0 : j;
        o[i * c + j] = fwd(pa[ai * av.cols() + aj], pb[bi * bv.cols() + bj]);
      }
    }
  }
  const bool needs = g.wants_grad(a.id) || g.wants_grad(b.id);
  const int aid = a.id, bid = b.id, rid = int(g.size());
  auto back = [aid, bid, rid, av, bv, da, db](Graph<T>& gg) {
    const Tensor<T>& up = gg.node(rid).grad;
    const size_t rr = up.rows(), cc = up.cols();
    const T* u = up.data();
    const T* pa = av.data();
    const T* pb = bv.data();
    auto expand = [&](auto dfn) {
      Tensor<T> d(rr, cc);
      T* dd = d.data_mut();
      for (size_t i = 0; i < rr; ++i) {
        const size_t ai = av.rows() == 1 ? 0 : i;
        const size_t bi = bv.rows() == 1 ? 0 : i;
        for (size_t j = 0; j < cc; ++j) {
          const size_t aj = av.cols() == 1 ? 0 : j;
          const size_t bj = bv.cols() == 1 ? 0 : j;
          dd[i * cc + j] = dfn(pa[ai * av.cols() + aj],
                               pb[bi * bv.cols() + bj], u[i * cc + j]);
        }
      }
      return d;
    };
    if (gg.wants_grad(aid))
      gg.accumulate(aid, reduce_to(expand(da), av.rows(), av.cols()));
    if (gg.wants_grad(bid))
      gg.accumulate(bid, reduce_to(expand(db), bv.rows(), bv.cols()));
  };
  return g.emit(name, std::move(out), needs, detail::maybe_backward<T>(needs, back));
}

template <typename T, typename FwdFn, typename DerivFn>
Var<T> unary_op(const char* name, Var<T> a, FwdFn fwd, DerivFn deriv) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.rows(), av.cols());
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < av.size(); ++i) o[i] = fwd(p[i]);
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  Tensor<T> yv = out;  // cheap shared copy for the closure
  auto back = [aid, rid, av, yv, deriv](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> d(up.rows(), up.cols());
    T* dd = d.data_mut();
    const T* u = up.data();
    const T* x = av.data();
    const T* y = yv.data();
    for (size_t i = 0; i < up.size(); ++i) dd[i] = u[i] * deriv(x[i], y[i]);
    gg.accumulate(aid, d);
  };
  return g.emit(name, std::move(out), needs, detail::maybe_backward<T>(needs, back));
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T u) { return u; }, [](T, T, T u) { return u; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T u) { return u; }, [](T, T, T u) { return -u; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T u) { return u * y; }, [](T x, T, T u) { return u * x; });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return detail::unary_op<T>(
      "scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return detail::unary_op<T>(
      "sigmoid", a,
      [](T x) {
        // Saturating-safe logistic.
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// log(sigmoid(x)) computed without overflow for |x| up to 1e30-scale inputs.
template <typename T>
Var<T> log_sigmoid(Var<T> a) {
  return detail::unary_op<T>(
      "log_sigmoid", a,
      [](T x) {
        if (x >= T(0)) return -std::log1p(std::exp(-x));
        return x - std::log1p(std::exp(x));
      },
      [](T x, T) {
        // d/dx log sigmoid(x) = sigmoid(-x)
        if (x <= T(0)) return T(1) / (T(1) + std::exp(x));
        const T e = std::exp(-x);
        return e / (T(1) + e);
      });
}

template <typename T>
Var<T> silu(Var<T> a) {
  return detail::unary_op<T>(
      "silu", a,
      [](T x) {
        const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                              : std::exp(x) / (T(1) + std::exp(x));
        return x * s;
      },
      [](T x, T) {
        const T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                              : std::exp(x) / (T(1) + std::exp(x));
        return s + x * s * (T(1) - s);
      });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary_op<T>(
      "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return detail::unary_op<T>(
      "log", a, [](T x) { return std::log(x); },
      [](T x, T) { return T(1) / x; });
}

// ---------------------------------------------------------------------------
// Matrix operations.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  FORGE_CHECK(a.g == b.g, "matmul: operands belong to different graphs");
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  FORGE_SHAPE_CHECK(av.cols() == bv.rows(), "matmul: lhs ", av.shape_str(),
                    " rhs ", bv.shape_str());
  const size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor<T> out(m, n);
  detail::gemm_nn_acc(av.data(), bv.data(), out.data_mut(), m, k, n);
  const bool needs = g.wants_grad(a.id) || g.wants_grad(b.id);
  const int aid = a.id, bid = b.id, rid = int(g.size());
  auto back = [aid, bid, rid, av, bv, m, k, n](Graph<T>& gg) {
    const Tensor<T>& up = gg.node(rid).grad;
    if (gg.wants_grad(aid)) {
      Tensor<T> da(m, k);  // dA = G * B^T
      detail::gemm_nt_acc(up.data(), bv.data(), da.data_mut(), m, n, k);
      gg.accumulate(aid, da);
    }
    if (gg.wants_grad(bid)) {
      Tensor<T> db(k, n);  // dB = A^T * G
      detail::gemm_tn_acc(av.data(), up.data(), db.data_mut(), m, k, n);
      gg.accumulate(bid, db);
    }
  };
  return g.emit("matmul", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const size_t r = av.rows(), c = av.cols();
  Tensor<T> out(c, r);
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) o[j * r + i] = p[i * c + j];
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  auto back = [aid, rid, r, c](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> d(r, c);
    T* dd = d.data_mut();
    const T* u = up.data();
    for (size_t i = 0; i < c; ++i)
      for (size_t j = 0; j < r; ++j) dd[j * c + i] = u[i * r + j];
    gg.accumulate(aid, d);
  };
  return g.emit("transpose", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// ---------------------------------------------------------------------------
// Reductions.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_all(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  T acc = T(0);
  const T* p = av.data();
  for (size_t i = 0; i < av.size(); ++i) acc += p[i];
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  auto back = [aid, rid, av](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const T u = gg.node(rid).grad.item();
    gg.accumulate(aid, Tensor<T>::full(av.rows(), av.cols(), u));
  };
  return g.emit("sum", Tensor<T>::scalar(acc), needs,
                detail::maybe_backward<T>(needs, back));
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  FORGE_SHAPE_CHECK(a.value().size() > 0, "mean: empty tensor");
  return scale(sum_all(a), T(1) / T(a.value().size()));
}

// Column means: (n,d) -> (1,d).
template <typename T>
Var<T> mean_rows(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const size_t n = av.rows(), d = av.cols();
  FORGE_SHAPE_CHECK(n > 0, "mean_rows: empty tensor");
  Tensor<T> out(1, d);
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) o[j] += p[i * d + j];
    for (size_t j = 0; j < d; ++j) o[j] /= T(n);
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  auto back = [aid, rid, n, d](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> dt(n, d);
    T* dd = dt.data_mut();
    const T* u = up.data();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) dd[i * d + j] = u[j] / T(n);
    gg.accumulate(aid, dt);
  };
  return g.emit("mean_rows", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// ---------------------------------------------------------------------------
// Row-wise softmax family.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const size_t n = av.rows(), d = av.cols();
  FORGE_SHAPE_CHECK(d > 0, "softmax: empty rows");
  Tensor<T> out(n, d);
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < n; ++i) {
      const T* row = p + i * d;
      T mx = row[0];
      for (size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
      T z = T(0);
      for (size_t j = 0; j < d; ++j) {
        o[i * d + j] = std::exp(row[j] - mx);
        z += o[i * d + j];
      }
      for (size_t j = 0; j < d; ++j) o[i * d + j] /= z;
    }
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  Tensor<T> yv = out;
  auto back = [aid, rid, yv, n, d](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> dt(n, d);
    T* dd = dt.data_mut();
    const T* u = up.data();
    const T* y = yv.data();
    for (size_t i = 0; i < n; ++i) {
      T s = T(0);
      for (size_t j = 0; j < d; ++j) s += u[i * d + j] * y[i * d + j];
      for (size_t j = 0; j < d; ++j)
        dd[i * d + j] = y[i * d + j] * (u[i * d + j] - s);
    }
    gg.accumulate(aid, dt);
  };
  return g.emit("softmax", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// Row-wise log(sum(exp(x))): (n,d) -> (n,1). Stable via max subtraction.
template <typename T>
Var<T> logsumexp_rows(Var<T> a) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const size_t n = av.rows(), d = av.cols();
  FORGE_SHAPE_CHECK(d > 0, "logsumexp: empty rows");
  Tensor<T> out(n, 1);
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < n; ++i) {
      const T* row = p + i * d;
      T mx = row[0];
      for (size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
      T z = T(0);
      for (size_t j = 0; j < d; ++j) z += std::exp(row[j] - mx);
      o[i] = mx + std::log(z);
    }
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  Tensor<T> lse = out;
  auto back = [aid, rid, av, lse, n, d](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> dt(n, d);
    T* dd = dt.data_mut();
    const T* u = up.data();
    const T* x = av.data();
    const T* l = lse.data();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j)
        dd[i * d + j] = u[i] * std::exp(x[i * d + j] - l[i]);
    gg.accumulate(aid, dt);
  };
  return g.emit("logsumexp", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// out[i] = a[i, ids[i]]: (n,V) -> (n,1). Used to pick target-class logits.
template <typename T>
Var<T> select_index(Var<T> a, std::vector<int> ids) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const size_t n = av.rows(), v = av.cols();
  FORGE_SHAPE_CHECK(ids.size() == n, "select_index: ", ids.size(),
                    " ids for ", n, " rows");
  for (const int id : ids)
    FORGE_CHECK(id >= 0 && size_t(id) < v, "select_index: id ", id,
                " out of range [0,", v, ")");
  Tensor<T> out(n, 1);
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < n; ++i) o[i] = p[i * v + size_t(ids[i])];
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  auto back = [aid, rid, ids, n, v](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> dt(n, v);
    T* dd = dt.data_mut();
    const T* u = up.data();
    for (size_t i = 0; i < n; ++i) dd[i * v + size_t(ids[i])] = u[i];
    gg.accumulate(aid, dt);
  };
  return g.emit("select_index", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// ---------------------------------------------------------------------------
// Structural operations.
// ---------------------------------------------------------------------------

// Row gather: out[i] = a[idx[i]]. Duplicate indices accumulate gradient.
template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<int> idx) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const size_t n = av.rows(), d = av.cols(), m = idx.size();
  for (const int i : idx)
    FORGE_CHECK(i >= 0 && size_t(i) < n, "gather: row ", i,
                " out of range [0,", n, ")");
  Tensor<T> out(m, d);
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < m; ++i)
      std::copy(p + size_t(idx[i]) * d, p + (size_t(idx[i]) + 1) * d, o + i * d);
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  auto back = [aid, rid, idx, n, d, m](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> dt(n, d);
    T* dd = dt.data_mut();
    const T* u = up.data();
    for (size_t i = 0; i < m; ++i) {
      T* row = dd + size_t(idx[i]) * d;
      const T* urow = u + i * d;
      for (size_t j = 0; j < d; ++j) row[j] += urow[j];
    }
    gg.accumulate(aid, dt);
  };
  return g.emit("gather", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  FORGE_CHECK(!parts.empty(), "concat: no inputs");
  Graph<T>& g = *parts[0].g;
  const size_t d = parts[0].value().cols();
  size_t n = 0;
  bool needs = false;
  for (const auto& p : parts) {
    FORGE_CHECK(p.g == &g, "concat: operands belong to different graphs");
    FORGE_SHAPE_CHECK(p.value().cols() == d, "concat: row width ",
                      p.value().cols(), " differs from ", d);
    n += p.value().rows();
    needs = needs || g.wants_grad(p.id);
  }
  Tensor<T> out(n, d);
  {
    T* o = out.data_mut();
    size_t at = 0;
    for (const auto& p : parts) {
      const Tensor<T>& pv = p.value();
      std::copy(pv.data(), pv.data() + pv.size(), o + at * d);
      at += pv.rows();
    }
  }
  std::vector<std::pair<int, size_t>> spans;  // (node id, row count)
  for (const auto& p : parts) spans.emplace_back(p.id, p.value().rows());
  const int rid = int(g.size());
  auto back = [spans, rid, d](Graph<T>& gg) {
    const Tensor<T>& up = gg.node(rid).grad;
    const T* u = up.data();
    size_t at = 0;
    for (const auto& [pid, rows] : spans) {
      if (gg.wants_grad(pid)) {
        Tensor<T> dt(rows, d);
        std::copy(u + at * d, u + (at + rows) * d, dt.data_mut());
        gg.accumulate(pid, dt);
      }
      at += rows;
    }
  };
  return g.emit("concat", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// Column slice [start, start+len).
template <typename T>
Var<T> slice_cols(Var<T> a, size_t start, size_t len) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = a.value();
  const size_t n = av.rows(), d = av.cols();
  FORGE_SHAPE_CHECK(start + len <= d, "slice_cols: [", start, ",", start + len,
                    ") out of range for ", av.shape_str());
  Tensor<T> out(n, len);
  {
    T* o = out.data_mut();
    const T* p = av.data();
    for (size_t i = 0; i < n; ++i)
      std::copy(p + i * d + start, p + i * d + start + len, o + i * len);
  }
  const bool needs = g.wants_grad(a.id);
  const int aid = a.id, rid = int(g.size());
  auto back = [aid, rid, start, len, n, d](Graph<T>& gg) {
    if (!gg.wants_grad(aid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    Tensor<T> dt(n, d);
    T* dd = dt.data_mut();
    const T* u = up.data();
    for (size_t i = 0; i < n; ++i)
      std::copy(u + i * len, u + (i + 1) * len, dd + i * d + start);
    gg.accumulate(aid, dt);
  };
  return g.emit("slice_cols", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  FORGE_CHECK(!parts.empty(), "concat_cols: no inputs");
  Graph<T>& g = *parts[0].g;
  const size_t n = parts[0].value().rows();
  size_t d = 0;
  bool needs = false;
  for (const auto& p : parts) {
    FORGE_CHECK(p.g == &g, "concat_cols: operands belong to different graphs");
    FORGE_SHAPE_CHECK(p.value().rows() == n, "concat_cols: row count ",
                      p.value().rows(), " differs from ", n);
    d += p.value().cols();
    needs = needs || g.wants_grad(p.id);
  }
  Tensor<T> out(n, d);
  {
    T* o = out.data_mut();
    size_t at = 0;
    for (const auto& p : parts) {
      const Tensor<T>& pv = p.value();
      const size_t pc = pv.cols();
      for (size_t i = 0; i < n; ++i)
        std::copy(pv.data() + i * pc, pv.data() + (i + 1) * pc,
                  o + i * d + at);
      at += pc;
    }
  }
  std::vector<std::pair<int, size_t>> spans;
  for (const auto& p : parts) spans.emplace_back(p.id, p.value().cols());
  const int rid = int(g.size());
  auto back = [spans, rid, n, d](Graph<T>& gg) {
    const Tensor<T>& up = gg.node(rid).grad;
    const T* u = up.data();
    size_t at = 0;
    for (const auto& [pid, pc] : spans) {
      if (gg.wants_grad(pid)) {
        Tensor<T> dt(n, pc);
        T* dd = dt.data_mut();
        for (size_t i = 0; i < n; ++i)
          std::copy(u + i * d + at, u + i * d + at + pc, dd + i * pc);
        gg.accumulate(pid, dt);
      }
      at += pc;
    }
  };
  return g.emit("concat_cols", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// ---------------------------------------------------------------------------
// Fused normalization layers.
// ---------------------------------------------------------------------------

// Per-row layer normalization with learnable scale and shift:
//   y = (x - mean) / sqrt(var + eps) * gamma + beta
// gamma and beta are (1,d).
template <typename T>
Var<T> layernorm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  FORGE_CHECK(x.g == gamma.g && x.g == beta.g,
              "layernorm: operands belong to different graphs");
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  const size_t n = xv.rows(), d = xv.cols();
  FORGE_SHAPE_CHECK(gamma.value().rows() == 1 && gamma.value().cols() == d,
                    "layernorm: gamma ", gamma.value().shape_str(),
                    " for input ", xv.shape_str());
  FORGE_SHAPE_CHECK(beta.value().rows() == 1 && beta.value().cols() == d,
                    "layernorm: beta ", beta.value().shape_str(),
                    " for input ", xv.shape_str());
  Tensor<T> xhat(n, d);
  Tensor<T> inv_std(n, 1);
  Tensor<T> out(n, d);
  {
    const T* p = xv.data();
    const T* gm = gamma.value().data();
    const T* bt = beta.value().data();
    T* xh = xhat.data_mut();
    T* is = inv_std.data_mut();
    T* o = out.data_mut();
    for (size_t i = 0; i < n; ++i) {
      const T* row = p + i * d;
      T mean = T(0);
      for (size_t j = 0; j < d; ++j) mean += row[j];
      mean /= T(d);
      T var = T(0);
      for (size_t j = 0; j < d; ++j) {
        const T c = row[j] - mean;
        var += c * c;
      }
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + eps);
      is[i] = inv;
      for (size_t j = 0; j < d; ++j) {
        xh[i * d + j] = (row[j] - mean) * inv;
        o[i * d + j] = xh[i * d + j] * gm[j] + bt[j];
      }
    }
  }
  const bool needs = g.wants_grad(x.id) || g.wants_grad(gamma.id) ||
                     g.wants_grad(beta.id);
  const int xid = x.id, gid = gamma.id, bid = beta.id, rid = int(g.size());
  Tensor<T> gv = gamma.value();
  auto back = [xid, gid, bid, rid, xhat, inv_std, gv, n, d](Graph<T>& gg) {
    const Tensor<T>& up = gg.node(rid).grad;
    const T* u = up.data();
    const T* xh = xhat.data();
    const T* is = inv_std.data();
    const T* gm = gv.data();
    if (gg.wants_grad(gid)) {
      Tensor<T> dg(1, d);
      T* p = dg.data_mut();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) p[j] += u[i * d + j] * xh[i * d + j];
      gg.accumulate(gid, dg);
    }
    if (gg.wants_grad(bid)) {
      Tensor<T> db(1, d);
      T* p = db.data_mut();
      for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < d; ++j) p[j] += u[i * d + j];
      gg.accumulate(bid, db);
    }
    if (gg.wants_grad(xid)) {
      Tensor<T> dx(n, d);
      T* p = dx.data_mut();
      for (size_t i = 0; i < n; ++i) {
        T m1 = T(0), m2 = T(0);  // means of dxhat and dxhat*xhat
        for (size_t j = 0; j < d; ++j) {
          const T dxh = u[i * d + j] * gm[j];
          m1 += dxh;
          m2 += dxh * xh[i * d + j];
        }
        m1 /= T(d);
        m2 /= T(d);
        for (size_t j = 0; j < d; ++j) {
          const T dxh = u[i * d + j] * gm[j];
          p[i * d + j] = (dxh - m1 - xh[i * d + j] * m2) * is[i];
        }
      }
      gg.accumulate(xid, dx);
    }
  };
  return g.emit("layernorm", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// Per-row L2 normalization: y = x / sqrt(sum(x^2) + tiny). The tiny constant
// only guards all-zero rows; for unit-scale inputs the output norm is 1 to
// within 1e-6.
template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  const size_t n = xv.rows(), d = xv.cols();
  Tensor<T> out(n, d);
  Tensor<T> inv_norm(n, 1);
  {
    const T* p = xv.data();
    T* o = out.data_mut();
    T* iv = inv_norm.data_mut();
    for (size_t i = 0; i < n; ++i) {
      T s = T(0);
      for (size_t j = 0; j < d; ++j) s += p[i * d + j] * p[i * d + j];
      const T inv = T(1) / std::sqrt(s + T(1e-24));
      iv[i] = inv;
      for (size_t j = 0; j < d; ++j) o[i * d + j] = p[i * d + j] * inv;
    }
  }
  const bool needs = g.wants_grad(x.id);
  const int xid = x.id, rid = int(g.size());
  Tensor<T> yv = out;
  auto back = [xid, rid, yv, inv_norm, n, d](Graph<T>& gg) {
    if (!gg.wants_grad(xid)) return;
    const Tensor<T>& up = gg.node(rid).grad;
    const T* u = up.data();
    const T* y = yv.data();
    const T* iv = inv_norm.data();
    Tensor<T> dx(n, d);
    T* p = dx.data_mut();
    for (size_t i = 0; i < n; ++i) {
      T dot = T(0);
      for (size_t j = 0; j < d; ++j) dot += u[i * d + j] * y[i * d + j];
      for (size_t j = 0; j < d; ++j)
        p[i * d + j] = (u[i * d + j] - y[i * d + j] * dot) * iv[i];
    }
    gg.accumulate(xid, dx);
  };
  return g.emit("l2_normalize", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// ---------------------------------------------------------------------------
// Rotary position encoding over a 2-D grid.
// ---------------------------------------------------------------------------

struct GridPos {
  int row = 0;
  int col = 0;
};

// Precomputed rotation table for one token sequence and one head width.
// Feature pairs (2k, 2k+1) rotate by angle pos * theta_k where
// theta_k = base^(-2k / (dim/2)) over per-axis pair index k. The first half
// of the pairs rotates by the row coordinate, the second half by the column.
// Shared by every layer and head of a forward pass (same width, positions).
struct RopeTable {
  size_t tokens = 0;
  size_t dim = 0;             // per-head feature count; divisible by 4
  std::vector<double> cosv;   // tokens x dim/2
  std::vector<double> sinv;

  static std::shared_ptr<RopeTable> build(std::span<const GridPos> positions,
                                          size_t dim, double base) {
    FORGE_CHECK(dim % 4 == 0, "rope: head dim ", dim, " not divisible by 4");
    auto t = std::make_shared<RopeTable>();
    t->tokens = positions.size();
    t->dim = dim;
    const size_t pairs = dim / 2;
    const size_t axis_pairs = dim / 4;
    t->cosv.resize(t->tokens * pairs);
    t->sinv.resize(t->tokens * pairs);
    std::vector<double> theta(axis_pairs);
    for (size_t k = 0; k < axis_pairs; ++k)
      theta[k] = std::pow(base, -2.0 * double(k) / double(dim / 2));
    for (size_t i = 0; i < t->tokens; ++i) {
      for (size_t k = 0; k < pairs; ++k) {
        const double coord = k < axis_pairs ? double(positions[i].row)
                                            : double(positions[i].col);
        const double angle = coord * theta[k < axis_pairs ? k : k - axis_pairs];
        t->cosv[i * pairs + k] = std::cos(angle);
        t->sinv[i * pairs + k] = std::sin(angle);
      }
    }
    return t;
  }
};

namespace detail {
// dir=+1 applies the rotation, dir=-1 its inverse (transpose).
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, const RopeTable& table, int dir) {
  const size_t n = x.rows(), d = x.cols();
  const size_t pairs = d / 2;
  Tensor<T> out(n, d);
  const T* p = x.data();
  T* o = out.data_mut();
  for (size_t i = 0; i < n; ++i) {
    for (size_t k = 0; k < pairs; ++k) {
      const T c = T(table.cosv[i * pairs + k]);
      const T s = T(dir) * T(table.sinv[i * pairs + k]);
      const T a = p[i * d + 2 * k];
      const T b = p[i * d + 2 * k + 1];
      o[i * d + 2 * k] = a * c - b * s;
      o[i * d + 2 * k + 1] = a * s + b * c;
    }
  }
  return out;
}
}  // namespace detail

// Rotate token features (n, dim) by their grid positions. Pure rotation:
// norms are preserved and q/k dot products depend only on relative offsets.
template <typename T>
Var<T> rope2d(Var<T> x, std::shared_ptr<RopeTable> table) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = x.value();
  FORGE_SHAPE_CHECK(xv.rows() == table->tokens && xv.cols() == table->dim,
                    "rope: input ", xv.shape_str(), " vs table [",
                    table->tokens, ",", table->dim, "]");
  Tensor<T> out = detail::rope_apply(xv, *table, +1);
  const bool needs = g.wants_grad(x.id);
  const int xid = x.id, rid = int(g.size());
  auto back = [xid, rid, table](Graph<T>& gg) {
    if (!gg.wants_grad(xid)) return;
    gg.accumulate(xid, detail::rope_apply(gg.node(rid).grad, *table, -1));
  };
  return g.emit("rope", std::move(out), needs,
                detail::maybe_backward<T>(needs, back));
}

// ---------------------------------------------------------------------------
// Gradient checking.
// ---------------------------------------------------------------------------

// Compares the reverse-mode gradient of fn (a scalar-valued function of one
// tensor input, expressed as graph operations) against central finite
// differences. Returns the max over coordinates of
//   |analytic - numeric| / max(1, |analytic|).
template <typename T>
T grad_check(const std::function<Var<T>(Graph<T>&, Var<T>)>& fn,
             const Tensor<T>& x, T eps = T(1e-5)) {
  Tensor<T> analytic;
  {
    Graph<T> g;
    Var<T> in = g.input(x.clone(), true);
    Var<T> loss = fn(g, in);
    FORGE_SHAPE_CHECK(loss.value().is_scalar(), "grad_check: fn returned ",
                      loss.value().shape_str(), ", expected a scalar");
    FORGE_CHECK(std::isfinite(double(loss.value().item())),
                "grad_check: fn value is not finite");
    g.backward(loss);
    analytic = g.grad_of(in);
  }
  auto eval = [&fn](const Tensor<T>& pt) {
    Graph<T> g;
    Var<T> in = g.input(pt.clone(), false);
    return fn(g, in).value().item();
  };
  T worst = T(0);
  Tensor<T> probe = x.clone();
  T* p = probe.data_mut();
  const T* a = analytic.data();
  for (size_t i = 0; i < probe.size(); ++i) {
    const T keep = p[i];
    p[i] = keep + eps;
    const T up = eval(probe);
    p[i] = keep - eps;
    const T dn = eval(probe);
    p[i] = keep;
    const T numeric = (up - dn) / (T(2) * eps);
    const T denom = std::max(T(1), std::abs(a[i]));
    worst = std::max(worst, std::abs(a[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace forge
