#pragma once

// Minimal reverse-mode differentiable-operations layer: dense tensors with
// analytic gradients for every op, checked against finite differences in the
// test suite. Single-threaded per tape; tensors are immutable once written.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tdos/errors.hpp"
#include "tdos/rng.hpp"

namespace tdos {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Gradients;
struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One graph node: value plus the closure that routes an upstream gradient to
// the parents. The executed-op record replayed by GradTape::backward.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(const std::vector<double>&, Gradients&)> backward_op;
};

class Tensor {
 public:
  Tensor() : node_(std::make_shared<TensorNode>()) {
    node_->shape = {1};
    node_->value = {0.0};
  }

  static Tensor make(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), 0.0);
    return make(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape), v);
    return make(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false) {
    std::vector<double> d(shape_numel(shape));
    for (double& x : d) x = rng.normal(0.0, stddev);
    return make(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return make({1}, {v}, requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  const std::vector<double>& data() const { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t numel() const { return node_->value.size(); }
  bool is_scalar() const { return node_->value.size() == 1; }
  double item() const {
    if (!is_scalar()) throw DimensionError("item() on non-scalar tensor");
    return node_->value[0];
  }
  int rows() const { return node_->shape.size() >= 1 ? node_->shape[0] : 1; }
  int cols() const {
    if (node_->shape.size() == 1) return node_->shape[0];
    if (node_->shape.size() == 2) return node_->shape[1];
    throw DimensionError("cols() on tensor of rank > 2");
  }
  double at(std::size_t i) const { return node_->value[i]; }

  // In-place parameter update; only valid for leaf tensors (optimizer use).
  void apply_update(const std::vector<double>& delta) {
    if (!node_->parents.empty())
      throw std::logic_error("apply_update on non-leaf tensor");
    if (delta.size() != node_->value.size())
      throw DimensionError("update size mismatch");
    for (std::size_t i = 0; i < delta.size(); ++i) node_->value[i] += delta[i];
  }
  void set_data(std::vector<double> v) {
    if (!node_->parents.empty())
      throw std::logic_error("set_data on non-leaf tensor");
    if (v.size() != node_->value.size())
      throw DimensionError("set_data size mismatch");
    node_->value = std::move(v);
  }

  const TensorNode* id() const { return node_.get(); }
  NodePtr node() const { return node_; }

  static Tensor from_node(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

// Gradient map produced by one backward pass. Tensors that never influenced
// the loss read back as zero.
class Gradients {
 public:
  void add(const TensorNode* node, const std::vector<double>& g) {
    auto it = store_.find(node);
    if (it == store_.end()) {
      store_.emplace(node, g);
    } else {
      auto& acc = it->second;
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  }

  bool has(const Tensor& t) const { return store_.count(t.id()) != 0; }

  std::vector<double> get(const Tensor& t) const {
    auto it = store_.find(t.id());
    if (it == store_.end()) return std::vector<double>(t.numel(), 0.0);
    return it->second;
  }

  const std::vector<double>* find(const TensorNode* node) const {
    auto it = store_.find(node);
    return it == store_.end() ? nullptr : &it->second;
  }

  // Merge another pass's gradients (batch accumulation across tapes).
  void merge(const Gradients& other) {
    for (const auto& [node, g] : other.store_) add(node, g);
  }

 private:
  std::unordered_map<const TensorNode*, std::vector<double>> store_;
};

namespace detail {

inline bool out_requires(const std::vector<NodePtr>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

inline Tensor make_op(Shape shape, std::vector<double> value,
                      std::vector<NodePtr> parents,
                      std::function<void(const std::vector<double>&, Gradients&)>
                          backward_op) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->requires_grad = out_requires(n->parents);
  if (n->requires_grad) n->backward_op = std::move(backward_op);
  return Tensor::from_node(std::move(n));
}

}  // namespace detail

// Reverse-mode engine: orders the recorded ops reachable from a scalar loss
// and replays their backward closures.
class GradTape {
 public:
  static Gradients backward(const Tensor& loss) {
    if (!loss.is_scalar())
      throw std::invalid_argument("backward requires a scalar loss");
    Gradients grads;
    if (!loss.requires_grad()) return grads;

    std::vector<const TensorNode*> order;
    std::unordered_set<const TensorNode*> seen;
    std::vector<std::pair<const TensorNode*, std::size_t>> stack;
    stack.emplace_back(loss.id(), 0);
    seen.insert(loss.id());
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        const TensorNode* p = node->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }

    grads.add(loss.id(), {1.0});
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const TensorNode* node = *it;
      if (!node->backward_op) continue;
      const std::vector<double>* g = grads.find(node);
      if (g == nullptr) continue;
      node->backward_op(*g, grads);
    }
    // Keep only leaf gradients: interior nodes die with their graph, and a
    // later graph can reuse their addresses, so their entries must not
    // outlive this call (merging across graphs would collide keys).
    Gradients leaves;
    for (const TensorNode* node : order)
      if (node->parents.empty())
        if (const std::vector<double>* g = grads.find(node))
          leaves.add(node, *g);
    return leaves;
  }
};

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) + b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_op(
      a.shape(), std::move(v), {an, bn},
      [an, bn](const std::vector<double>& g, Gradients& out) {
        if (an->requires_grad) out.add(an.get(), g);
        if (bn->requires_grad) out.add(bn.get(), g);
      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) - b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_op(
      a.shape(), std::move(v), {an, bn},
      [an, bn](const std::vector<double>& g, Gradients& out) {
        if (an->requires_grad) out.add(an.get(), g);
        if (bn->requires_grad) {
          std::vector<double> ng(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
          out.add(bn.get(), ng);
        }
      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_op(
      a.shape(), std::move(v), {an, bn},
      [an, bn](const std::vector<double>& g, Gradients& out) {
        if (an->requires_grad) {
          std::vector<double> ga(g.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] = g[i] * bn->value[i];
          out.add(an.get(), ga);
        }
        if (bn->requires_grad) {
          std::vector<double> gb(g.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            gb[i] = g[i] * an->value[i];
          out.add(bn.get(), gb);
        }
      });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.at(i) * c;
  auto an = a.node();
  return detail::make_op(a.shape(), std::move(v), {an},
                         [an, c](const std::vector<double>& g, Gradients& out) {
                           std::vector<double> ga(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             ga[i] = g[i] * c;
                           out.add(an.get(), ga);
                         });
}

inline Tensor sum(const Tensor& a) {
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
  auto an = a.node();
  return detail::make_op({1}, {s}, {an},
                         [an](const std::vector<double>& g, Gradients& out) {
                           out.add(an.get(),
                                   std::vector<double>(an->value.size(), g[0]));
                         });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double s = std::accumulate(a.data().begin(), a.data().end(), 0.0) * inv;
  auto an = a.node();
  return detail::make_op(
      {1}, {s}, {an}, [an, inv](const std::vector<double>& g, Gradients& out) {
        out.add(an.get(), std::vector<double>(an->value.size(), g[0] * inv));
      });
}

// Matrix views: rank-1 tensors are treated as a single row where needed.
inline std::pair<int, int> mat_dims(const Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw DimensionError(std::string(op) + ": expected rank <= 2, got " +
                       shape_str(s));
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  auto [m, k] = mat_dims(a, "matmul");
  auto [k2, n] = mat_dims(b, "matmul");
  if (k != k2)
    throw DimensionError("matmul: inner dimensions " + std::to_string(k) +
                         " vs " + std::to_string(k2));
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  const auto& A = a.data();
  const auto& B = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      const double aip = A[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[static_cast<std::size_t>(p) * n];
      double* crow = &v[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  auto an = a.node(), bn = b.node();
  const int M = m, K = k, N = n;
  return detail::make_op(
      Shape{M, N}, std::move(v), {an, bn},
      [an, bn, M, K, N](const std::vector<double>& g, Gradients& out) {
        if (an->requires_grad) {
          // dA = G * B^T
          std::vector<double> ga(static_cast<std::size_t>(M) * K, 0.0);
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
              const double gij = g[static_cast<std::size_t>(i) * N + j];
              if (gij == 0.0) continue;
              for (int p = 0; p < K; ++p)
                ga[static_cast<std::size_t>(i) * K + p] +=
                    gij * bn->value[static_cast<std::size_t>(p) * N + j];
            }
          out.add(an.get(), ga);
        }
        if (bn->requires_grad) {
          // dB = A^T * G
          std::vector<double> gb(static_cast<std::size_t>(K) * N, 0.0);
          for (int i = 0; i < M; ++i)
            for (int p = 0; p < K; ++p) {
              const double aip = an->value[static_cast<std::size_t>(i) * K + p];
              if (aip == 0.0) continue;
              const double* grow = &g[static_cast<std::size_t>(i) * N];
              double* brow = &gb[static_cast<std::size_t>(p) * N];
              for (int j = 0; j < N; ++j) brow[j] += aip * grow[j];
            }
          out.add(bn.get(), gb);
        }
      });
}

// A * B^T without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  auto [m, k] = mat_dims(a, "matmul_nt");
  auto [n, k2] = mat_dims(b, "matmul_nt");
  if (k != k2)
    throw DimensionError("matmul_nt: inner dimensions " + std::to_string(k) +
                         " vs " + std::to_string(k2));
  std::vector<double> v(static_cast<std::size_t>(m) * n, 0.0);
  const auto& A = a.data();
  const auto& B = b.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      const double* arow = &A[static_cast<std::size_t>(i) * k];
      const double* brow = &B[static_cast<std::size_t>(j) * k];
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      v[static_cast<std::size_t>(i) * n + j] = s;
    }
  auto an = a.node(), bn = b.node();
  const int M = m, K = k, N = n;
  return detail::make_op(
      Shape{M, N}, std::move(v), {an, bn},
      [an, bn, M, K, N](const std::vector<double>& g, Gradients& out) {
        if (an->requires_grad) {
          // dA = G * B
          std::vector<double> ga(static_cast<std::size_t>(M) * K, 0.0);
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
              const double gij = g[static_cast<std::size_t>(i) * N + j];
              if (gij == 0.0) continue;
              const double* brow = &bn->value[static_cast<std::size_t>(j) * K];
              double* arow = &ga[static_cast<std::size_t>(i) * K];
              for (int p = 0; p < K; ++p) arow[p] += gij * brow[p];
            }
          out.add(an.get(), ga);
        }
        if (bn->requires_grad) {
          // dB = G^T * A
          std::vector<double> gb(static_cast<std::size_t>(N) * K, 0.0);
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j) {
              const double gij = g[static_cast<std::size_t>(i) * N + j];
              if (gij == 0.0) continue;
              const double* arow = &an->value[static_cast<std::size_t>(i) * K];
              double* brow = &gb[static_cast<std::size_t>(j) * K];
              for (int p = 0; p < K; ++p) brow[p] += gij * arow[p];
            }
          out.add(bn.get(), gb);
        }
      });
}

inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  auto [m, n] = mat_dims(x, "add_rowvec");
  if (static_cast<int>(v.numel()) != n)
    throw DimensionError("add_rowvec: vector length mismatch");
  std::vector<double> out(x.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] =
          x.at(static_cast<std::size_t>(i) * n + j) + v.at(j);
  auto xn = x.node(), vn = v.node();
  const int M = m, N = n;
  return detail::make_op(
      x.shape(), std::move(out), {xn, vn},
      [xn, vn, M, N](const std::vector<double>& g, Gradients& out) {
        if (xn->requires_grad) out.add(xn.get(), g);
        if (vn->requires_grad) {
          std::vector<double> gv(static_cast<std::size_t>(N), 0.0);
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j)
              gv[j] += g[static_cast<std::size_t>(i) * N + j];
          out.add(vn.get(), gv);
        }
      });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: empty input");
  int n = mat_dims(parts[0], "concat_rows").second;
  int total = 0;
  std::vector<NodePtr> parents;
  for (const auto& p : parts) {
    auto [r, c] = mat_dims(p, "concat_rows");
    if (c != n) throw DimensionError("concat_rows: column mismatch");
    total += r;
    parents.push_back(p.node());
  }
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(total) * n);
  for (const auto& p : parts)
    v.insert(v.end(), p.data().begin(), p.data().end());
  const int N = n;
  auto plist = parents;
  return detail::make_op(
      Shape{total, N}, std::move(v), std::move(parents),
      [plist, N](const std::vector<double>& g, Gradients& out) {
        std::size_t off = 0;
        for (const auto& p : plist) {
          const std::size_t len = p->value.size();
          if (p->requires_grad)
            out.add(p.get(), std::vector<double>(g.begin() + off,
                                                 g.begin() + off + len));
          off += len;
        }
      });
}

inline Tensor slice_rows(const Tensor& x, int r0, int r1) {
  auto [m, n] = mat_dims(x, "slice_rows");
  if (r0 < 0 || r1 > m || r0 >= r1)
    throw IndexError("slice_rows: bad range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") for " + std::to_string(m) +
                     " rows");
  std::vector<double> v(x.data().begin() + static_cast<std::size_t>(r0) * n,
                        x.data().begin() + static_cast<std::size_t>(r1) * n);
  auto xn = x.node();
  const int N = n, R0 = r0;
  return detail::make_op(
      Shape{r1 - r0, n}, std::move(v), {xn},
      [xn, N, R0](const std::vector<double>& g, Gradients& out) {
        std::vector<double> gx(xn->value.size(), 0.0);
        std::copy(g.begin(), g.end(),
                  gx.begin() + static_cast<std::size_t>(R0) * N);
        out.add(xn.get(), gx);
      });
}

inline Tensor row(const Tensor& x, int i) {
  auto [m, n] = mat_dims(x, "row");
  if (i < 0 || i >= m) throw IndexError("row index out of range");
  std::vector<double> v(x.data().begin() + static_cast<std::size_t>(i) * n,
                        x.data().begin() + static_cast<std::size_t>(i + 1) * n);
  auto xn = x.node();
  const int N = n, I = i;
  return detail::make_op(Shape{n}, std::move(v), {xn},
                         [xn, N, I](const std::vector<double>& g,
                                    Gradients& out) {
                           std::vector<double> gx(xn->value.size(), 0.0);
                           std::copy(g.begin(), g.end(),
                                     gx.begin() + static_cast<std::size_t>(I) * N);
                           out.add(xn.get(), gx);
                         });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: element count mismatch");
  auto xn = x.node();
  return detail::make_op(std::move(shape), x.data(), {xn},
                         [xn](const std::vector<double>& g, Gradients& out) {
                           out.add(xn.get(), g);
                         });
}

inline Tensor mean_rows(const Tensor& x) {
  auto [m, n] = mat_dims(x, "mean_rows");
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[j] += x.at(static_cast<std::size_t>(i) * n + j);
  const double inv = 1.0 / m;
  for (double& t : v) t *= inv;
  auto xn = x.node();
  const int M = m, N = n;
  return detail::make_op(
      Shape{n}, std::move(v), {xn},
      [xn, M, N, inv](const std::vector<double>& g, Gradients& out) {
        std::vector<double> gx(xn->value.size());
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j)
            gx[static_cast<std::size_t>(i) * N + j] = g[j] * inv;
        out.add(xn.get(), gx);
      });
}

// Per-row scaling by a constant weight vector (one weight per row). Used for
// mask-gated blends; weights do not receive gradients.
inline Tensor scale_rows(const Tensor& x, const std::vector<double>& w) {
  auto [m, n] = mat_dims(x, "scale_rows");
  if (static_cast<int>(w.size()) != m)
    throw DimensionError("scale_rows: weight count " +
                         std::to_string(w.size()) + " vs rows " +
                         std::to_string(m));
  std::vector<double> v(x.numel());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<std::size_t>(i) * n + j] =
          x.at(static_cast<std::size_t>(i) * n + j) * w[i];
  auto xn = x.node();
  const int M = m, N = n;
  auto wc = w;
  return detail::make_op(
      x.shape(), std::move(v), {xn},
      [xn, M, N, wc](const std::vector<double>& g, Gradients& out) {
        std::vector<double> gx(g.size());
        for (int i = 0; i < M; ++i)
          for (int j = 0; j < N; ++j)
            gx[static_cast<std::size_t>(i) * N + j] =
                g[static_cast<std::size_t>(i) * N + j] * wc[i];
        out.add(xn.get(), gx);
      });
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xi = x.at(i);
    v[i] = 0.5 * xi * (1.0 + std::erf(xi * kInvSqrt2));
  }
  auto xn = x.node();
  return detail::make_op(
      x.shape(), std::move(v), {xn},
      [xn](const std::vector<double>& g, Gradients& out) {
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double xi = xn->value[i];
          const double cdf = 0.5 * (1.0 + std::erf(xi * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xi * xi);
          gx[i] = g[i] * (cdf + xi * pdf);
        }
        out.add(xn.get(), gx);
      });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double xi = x.at(i);
    v[i] = xi >= 0 ? 1.0 / (1.0 + std::exp(-xi))
                   : std::exp(xi) / (1.0 + std::exp(xi));
  }
  auto xn = x.node();
  auto y = v;  // saved activation
  return detail::make_op(x.shape(), std::move(v), {xn},
                         [xn, y](const std::vector<double>& g, Gradients& out) {
                           std::vector<double> gx(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] = g[i] * y[i] * (1.0 - y[i]);
                           out.add(xn.get(), gx);
                         });
}

inline Tensor softmax_rows(const Tensor& x) {
  auto [m, n] = mat_dims(x, "softmax_rows");
  std::vector<double> v(x.numel());
  for (int i = 0; i < m; ++i) {
    const double* xi = &x.data()[static_cast<std::size_t>(i) * n];
    double mx = xi[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    double* vi = &v[static_cast<std::size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      vi[j] = std::exp(xi[j] - mx);
      z += vi[j];
    }
    for (int j = 0; j < n; ++j) vi[j] /= z;
  }
  auto xn = x.node();
  auto y = v;
  const int M = m, N = n;
  return detail::make_op(
      x.shape(), std::move(v), {xn},
      [xn, y, M, N](const std::vector<double>& g, Gradients& out) {
        std::vector<double> gx(g.size());
        for (int i = 0; i < M; ++i) {
          const double* yi = &y[static_cast<std::size_t>(i) * N];
          const double* gi = &g[static_cast<std::size_t>(i) * N];
          double dotgy = 0.0;
          for (int j = 0; j < N; ++j) dotgy += gi[j] * yi[j];
          double* gxi = &gx[static_cast<std::size_t>(i) * N];
          for (int j = 0; j < N; ++j) gxi[j] = yi[j] * (gi[j] - dotgy);
        }
        out.add(xn.get(), gx);
      });
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps = 1e-5) {
  auto [m, n] = mat_dims(x, "layer_norm");
  if (static_cast<int>(gain.numel()) != n ||
      static_cast<int>(bias.numel()) != n)
    throw DimensionError("layer_norm: gain/bias length mismatch");
  std::vector<double> v(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_sigma(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* xi = &x.data()[static_cast<std::size_t>(i) * n];
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += xi[j];
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < n; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * n + j;
      xhat[idx] = (xi[j] - mu) * is;
      v[idx] = xhat[idx] * gain.at(j) + bias.at(j);
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  const int M = m, N = n;
  return detail::make_op(
      x.shape(), std::move(v), {xn, gn, bn},
      [xn, gn, bn, xhat, inv_sigma, M, N](const std::vector<double>& g,
                                          Gradients& out) {
        if (xn->requires_grad) {
          std::vector<double> gx(g.size());
          for (int i = 0; i < M; ++i) {
            const double* gi = &g[static_cast<std::size_t>(i) * N];
            const double* xh = &xhat[static_cast<std::size_t>(i) * N];
            double mean_gy = 0.0, mean_gyx = 0.0;
            for (int j = 0; j < N; ++j) {
              const double gy = gi[j] * gn->value[j];
              mean_gy += gy;
              mean_gyx += gy * xh[j];
            }
            mean_gy /= N;
            mean_gyx /= N;
            double* gxi = &gx[static_cast<std::size_t>(i) * N];
            for (int j = 0; j < N; ++j) {
              const double gy = gi[j] * gn->value[j];
              gxi[j] = (gy - mean_gy - xh[j] * mean_gyx) * inv_sigma[i];
            }
          }
          out.add(xn.get(), gx);
        }
        if (gn->requires_grad) {
          std::vector<double> gg(static_cast<std::size_t>(N), 0.0);
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j)
              gg[j] += g[static_cast<std::size_t>(i) * N + j] *
                       xhat[static_cast<std::size_t>(i) * N + j];
          out.add(gn.get(), gg);
        }
        if (bn->requires_grad) {
          std::vector<double> gb(static_cast<std::size_t>(N), 0.0);
          for (int i = 0; i < M; ++i)
            for (int j = 0; j < N; ++j)
              gb[j] += g[static_cast<std::size_t>(i) * N + j];
          out.add(bn.get(), gb);
        }
      });
}

// Unit L2 normalization of a vector.
inline Tensor normalize(const Tensor& x) {
  if (x.shape().size() != 1)
    throw DimensionError("normalize expects a rank-1 tensor");
  double nrm = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) nrm += x.at(i) * x.at(i);
  nrm = std::sqrt(nrm);
  if (nrm == 0.0) throw std::invalid_argument("normalize: zero vector");
  std::vector<double> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.at(i) / nrm;
  auto xn = x.node();
  auto y = v;
  return detail::make_op(
      x.shape(), std::move(v), {xn},
      [xn, y, nrm](const std::vector<double>& g, Gradients& out) {
        double gy = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
        std::vector<double> gx(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] = (g[i] - gy * y[i]) / nrm;
        out.add(xn.get(), gx);
      });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.at(i) * b.at(i);
  auto an = a.node(), bn = b.node();
  return detail::make_op(
      {1}, {s}, {an, bn},
      [an, bn](const std::vector<double>& g, Gradients& out) {
        if (an->requires_grad) {
          std::vector<double> ga(an->value.size());
          for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = g[0] * bn->value[i];
          out.add(an.get(), ga);
        }
        if (bn->requires_grad) {
          std::vector<double> gb(bn->value.size());
          for (std::size_t i = 0; i < gb.size(); ++i)
            gb[i] = g[0] * an->value[i];
          out.add(bn.get(), gb);
        }
      });
}

// ---------------------------------------------------------------------------
// Losses and distances
// ---------------------------------------------------------------------------

// Squared L2 distance.
inline Tensor l2_distance(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l2_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    s += d * d;
  }
  auto an = a.node(), bn = b.node();
  return detail::make_op(
      {1}, {s}, {an, bn},
      [an, bn](const std::vector<double>& g, Gradients& out) {
        if (an->requires_grad) {
          std::vector<double> ga(an->value.size());
          for (std::size_t i = 0; i < ga.size(); ++i)
            ga[i] = g[0] * 2.0 * (an->value[i] - bn->value[i]);
          out.add(an.get(), ga);
        }
        if (bn->requires_grad) {
          std::vector<double> gb(bn->value.size());
          for (std::size_t i = 0; i < gb.size(); ++i)
            gb[i] = g[0] * 2.0 * (bn->value[i] - an->value[i]);
          out.add(bn.get(), gb);
        }
      });
}

// Mean cross-entropy over rows of a logit matrix with integer targets.
inline Tensor cross_entropy(const Tensor& logits,
                            const std::vector<int>& targets) {
  auto [b, k] = mat_dims(logits, "cross_entropy");
  if (static_cast<int>(targets.size()) != b)
    throw DimensionError("cross_entropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= k)
      throw IndexError("cross_entropy: target " + std::to_string(t) +
                       " outside [0," + std::to_string(k) + ")");
  std::vector<double> probs(logits.numel());
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* xi = &logits.data()[static_cast<std::size_t>(i) * k];
    double mx = xi[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, xi[j]);
    double z = 0.0;
    double* pi = &probs[static_cast<std::size_t>(i) * k];
    for (int j = 0; j < k; ++j) {
      pi[j] = std::exp(xi[j] - mx);
      z += pi[j];
    }
    for (int j = 0; j < k; ++j) pi[j] /= z;
    loss -= std::log(std::max(pi[targets[i]], 1e-300));
  }
  loss /= b;
  auto ln = logits.node();
  const int B = b, K = k;
  auto tg = targets;
  return detail::make_op(
      {1}, {loss}, {ln},
      [ln, probs, tg, B, K](const std::vector<double>& g, Gradients& out) {
        std::vector<double> gl(probs.size());
        const double s = g[0] / B;
        for (int i = 0; i < B; ++i)
          for (int j = 0; j < K; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * K + j;
            gl[idx] = s * (probs[idx] - (j == tg[i] ? 1.0 : 0.0));
          }
        out.add(ln.get(), gl);
      });
}

// Mean binary cross-entropy with logits.
inline Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  check_same_shape(logits, targets, "bce_with_logits");
  const std::size_t n = logits.numel();
  std::vector<double> sig(n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.at(i);
    const double t = targets.at(i);
    sig[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
    loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  loss /= static_cast<double>(n);
  auto ln = logits.node(), tn = targets.node();
  return detail::make_op(
      {1}, {loss}, {ln, tn},
      [ln, tn, sig, n](const std::vector<double>& g, Gradients& out) {
        if (ln->requires_grad) {
          std::vector<double> gl(n);
          const double s = g[0] / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            gl[i] = s * (sig[i] - tn->value[i]);
          out.add(ln.get(), gl);
        }
      });
}

// Smoothed Dice loss: 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
inline Tensor dice_loss(const Tensor& pred, const Tensor& gt,
                        double eps = 1.0) {
  check_same_shape(pred, gt, "dice_loss");
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double p = pred.at(i);
    if (p < -1e-12 || p > 1.0 + 1e-12)
      throw std::invalid_argument("dice_loss: pred value outside [0,1]");
    inter += p * gt.at(i);
    sp += p;
    sg += gt.at(i);
  }
  const double denom = sp + sg + eps;
  const double numer = 2.0 * inter + eps;
  const double loss = 1.0 - numer / denom;
  auto pn = pred.node(), gn = gt.node();
  return detail::make_op(
      {1}, {loss}, {pn, gn},
      [pn, gn, numer, denom](const std::vector<double>& g, Gradients& out) {
        if (pn->requires_grad) {
          std::vector<double> gp(pn->value.size());
          for (std::size_t i = 0; i < gp.size(); ++i)
            gp[i] = g[0] * (-2.0 * gn->value[i] * denom + numer) /
                    (denom * denom);
          out.add(pn.get(), gp);
        }
        if (gn->requires_grad) {
          std::vector<double> gg(gn->value.size());
          for (std::size_t i = 0; i < gg.size(); ++i)
            gg[i] = g[0] * (-2.0 * pn->value[i] * denom + numer) /
                    (denom * denom);
          out.add(gn.get(), gg);
        }
      });
}

// ---------------------------------------------------------------------------
// Attention and bilinear resampling
// ---------------------------------------------------------------------------

// Scaled dot-product attention, single head: Softmax(Q K^T / sqrt(d)) V.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  auto [tq, d] = mat_dims(q, "attention");
  auto [tk, dk] = mat_dims(k, "attention");
  auto [tv, dv] = mat_dims(v, "attention");
  if (d == 0) throw std::invalid_argument("attention: d == 0");
  if (d != dk || tk != tv)
    throw DimensionError("attention: Q" + shape_str(q.shape()) + " K" +
                         shape_str(k.shape()) + " V" + shape_str(v.shape()));
  Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor weights = softmax_rows(scores);
  return matmul(weights, v);
}

// The attention weight matrix alone (for row-sum checks and diagnostics).
inline Tensor attention_weights(const Tensor& q, const Tensor& k) {
  auto [tq, d] = mat_dims(q, "attention_weights");
  auto [tk, dk] = mat_dims(k, "attention_weights");
  if (d == 0) throw std::invalid_argument("attention: d == 0");
  if (d != dk) throw DimensionError("attention_weights: inner dim mismatch");
  return softmax_rows(
      scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d))));
}

// Bilinear upsample of an h x w map to H x W (half-pixel centers).
inline Tensor upsample_bilinear(const Tensor& x, int H, int W) {
  auto [h, w] = mat_dims(x, "upsample_bilinear");
  if (H < h || W < w)
    throw DimensionError("upsample_bilinear: target smaller than source");
  struct Tap {
    int idx;
    double wgt;
  };
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<std::array<Tap, 4>> taps(hw);
  std::vector<double> v(hw);
  const double sy = static_cast<double>(h) / H;
  const double sx = static_cast<double>(w) / W;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const double fy = (i + 0.5) * sy - 0.5;
      const double fx = (j + 0.5) * sx - 0.5;
      const int y0 = static_cast<int>(std::floor(fy));
      const int x0 = static_cast<int>(std::floor(fx));
      const double dy = fy - y0;
      const double dx = fx - x0;
      auto clampi = [](int a, int lim) { return std::min(std::max(a, 0), lim - 1); };
      const int yc0 = clampi(y0, h), yc1 = clampi(y0 + 1, h);
      const int xc0 = clampi(x0, w), xc1 = clampi(x0 + 1, w);
      const std::size_t o = static_cast<std::size_t>(i) * W + j;
      taps[o] = {{{yc0 * w + xc0, (1 - dy) * (1 - dx)},
                  {yc0 * w + xc1, (1 - dy) * dx},
                  {yc1 * w + xc0, dy * (1 - dx)},
                  {yc1 * w + xc1, dy * dx}}};
      double s = 0.0;
      for (const auto& t : taps[o]) s += x.at(t.idx) * t.wgt;
      v[o] = s;
    }
  auto xn = x.node();
  return detail::make_op(
      Shape{H, W}, std::move(v), {xn},
      [xn, taps](const std::vector<double>& g, Gradients& out) {
        std::vector<double> gx(xn->value.size(), 0.0);
        for (std::size_t o = 0; o < g.size(); ++o)
          for (const auto& t : taps[o]) gx[t.idx] += g[o] * t.wgt;
        out.add(xn.get(), gx);
      });
}

inline bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t.at(i))) return false;
  return true;
}

}  // namespace tdos
