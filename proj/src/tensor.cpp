#include "blastlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <unordered_set>

namespace blastlab {

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

Tensor make_result(std::vector<int> shape, std::vector<double> val,
                   std::vector<Tensor::NodePtr> parents,
                   std::function<void(Tensor::Node&)> backprop) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& p : parents) any = any || (p && p->requires_grad);
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backprop = std::move(backprop);
    }
  }
  return Tensor(std::move(n));
}

}  // namespace

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void Tensor::Node::ensure_grad() {
  if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->val.assign(shape_numel(shape), 0.0);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->val[0];
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : node_->val)
    if (!std::isfinite(v)) return false;
  return true;
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- kernels ----------------------------------------------------------------

namespace kernels {

void gemm_nn(int m, int k, int n, const double* a, const double* b, double* c) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<std::size_t>(i) * k;
    double* cr = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

void gemm_nt(int m, int k, int n, const double* a, const double* b, double* c) {
  // c[i,j] = dot(a row i, b row j); four lanes keep the accumulation order fixed.
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<std::size_t>(i) * k;
    double* cr = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* br = b + static_cast<std::size_t>(j) * k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += ar[p] * br[p];
        s1 += ar[p + 1] * br[p + 1];
        s2 += ar[p + 2] * br[p + 2];
        s3 += ar[p + 3] * br[p + 3];
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; p < k; ++p) s += ar[p] * br[p];
      cr[j] += s;
    }
  }
}

void gemm_tn(int m, int k, int n, const double* a, const double* b, double* c) {
  for (int i = 0; i < m; ++i) {
    const double* ar = a + static_cast<std::size_t>(i) * k;
    const double* br = b + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      double* cr = c + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace kernels

// ---- operations --------------------------------------------------------------

Tensor matmul(const Tensor& x, const Tensor& w) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(x.shape()) + " @ " +
                     shape_str(w.shape()));
  }
  const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  kernels::gemm_nn(m, k, n, x.values().data(), w.values().data(), out.data());

  auto xn = x.shared_node();
  auto wn = w.shared_node();
  return make_result(
      {m, n}, std::move(out), {xn, wn}, [m, k, n, xn, wn](Tensor::Node& self) {
        if (xn->requires_grad) {
          xn->ensure_grad();
          kernels::gemm_nt(m, n, k, self.grad.data(), wn->val.data(), xn->grad.data());
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          kernels::gemm_tn(m, k, n, xn->val.data(), self.grad.data(), wn->grad.data());
        }
      });
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.rank() != 1 || x.dim(1) != b.dim(0)) {
    throw ShapeError("add_rowvec: shapes " + shape_str(x.shape()) + " + " +
                     shape_str(b.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += b.values()[j];

  auto xn = x.shared_node();
  auto bn = b.shared_node();
  return make_result({m, n}, std::move(out), {xn, bn}, [m, n, xn, bn](Tensor::Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) bn->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

namespace {

template <class Fwd, class Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                          Bwd bwd) {
  check_same_shape(a, b, name);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i], b.values()[i]);
  auto an = a.shared_node();
  auto bn = b.shared_node();
  return make_result(a.shape(), std::move(out), {an, bn}, [an, bn, bwd](Tensor::Node& self) {
    bwd(self, *an, *bn);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](Tensor::Node& self, Tensor::Node& an, Tensor::Node& bn) {
        if (an.requires_grad) {
          an.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i];
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] += self.grad[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](Tensor::Node& self, Tensor::Node& an, Tensor::Node& bn) {
        if (an.requires_grad) {
          an.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) an.grad[i] += self.grad[i];
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) bn.grad[i] -= self.grad[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](Tensor::Node& self, Tensor::Node& an, Tensor::Node& bn) {
        if (an.requires_grad) {
          an.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an.grad[i] += self.grad[i] * bn.val[i];
        }
        if (bn.requires_grad) {
          bn.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn.grad[i] += self.grad[i] * an.val[i];
        }
      });
}

namespace {

template <class Fwd, class Bwd>
Tensor unary_elementwise(const Tensor& x, Fwd fwd, Bwd bwd) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.values()[i]);
  auto xn = x.shared_node();
  return make_result(x.shape(), std::move(out), {xn}, [xn, bwd](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[i] += self.grad[i] * bwd(xn->val[i], self.val[i]);
  });
}

}  // namespace

Tensor affine(const Tensor& x, double alpha, double beta) {
  return unary_elementwise(
      x, [alpha, beta](double v) { return alpha * v + beta; },
      [alpha](double, double) { return alpha; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& x) {
  return unary_elementwise(x, [](double v) { return std::tanh(v); },
                           [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary_elementwise(x, [](double v) { return v > 0.0 ? v : 0.0; },
                           [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& x) {
  return unary_elementwise(
      x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

Tensor abs_op(const Tensor& x) {
  return unary_elementwise(x, [](double v) { return std::abs(v); },
                           [](double v, double) { return v >= 0.0 ? 1.0 : -1.0; });
}

Tensor square(const Tensor& x) {
  return unary_elementwise(x, [](double v) { return v * v; },
                           [](double v, double) { return 2.0 * v; });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  auto xn = x.shared_node();
  return make_result({1}, {s}, {xn}, [xn](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double g = self.grad[0];
    for (double& gv : xn->grad) gv += g;
  });
}

Tensor gather_cols(const Tensor& x, const std::vector<int>& idx) {
  if (x.rank() != 2 || static_cast<int>(idx.size()) != x.dim(0)) {
    throw ShapeError("gather_cols: need one index per row of " + shape_str(x.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    if (idx[static_cast<std::size_t>(i)] < 0 || idx[static_cast<std::size_t>(i)] >= n)
      throw ContractError("gather_cols: index out of range");
    out[static_cast<std::size_t>(i)] =
        x.values()[static_cast<std::size_t>(i) * n + idx[static_cast<std::size_t>(i)]];
  }
  auto xn = x.shared_node();
  auto indices = idx;
  return make_result({m}, std::move(out), {xn}, [m, n, xn, indices](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < m; ++i)
      xn->grad[static_cast<std::size_t>(i) * n + indices[static_cast<std::size_t>(i)]] +=
          self.grad[static_cast<std::size_t>(i)];
  });
}

Tensor stack_cols(const std::vector<Tensor>& cols) {
  if (cols.empty()) throw ContractError("stack_cols: empty input");
  const int m = cols[0].dim(0);
  const int k = static_cast<int>(cols.size());
  std::vector<double> out(static_cast<std::size_t>(m) * k);
  std::vector<Tensor::NodePtr> parents;
  parents.reserve(cols.size());
  for (int c = 0; c < k; ++c) {
    if (cols[static_cast<std::size_t>(c)].rank() != 1 ||
        cols[static_cast<std::size_t>(c)].dim(0) != m)
      throw ShapeError("stack_cols: columns must all be rank-1 of equal length");
    for (int i = 0; i < m; ++i)
      out[static_cast<std::size_t>(i) * k + c] =
          cols[static_cast<std::size_t>(c)].values()[static_cast<std::size_t>(i)];
    parents.push_back(cols[static_cast<std::size_t>(c)].shared_node());
  }
  auto ps = parents;
  return make_result({m, k}, std::move(out), std::move(parents),
                     [m, k, ps](Tensor::Node& self) {
                       for (int c = 0; c < k; ++c) {
                         auto& p = *ps[static_cast<std::size_t>(c)];
                         if (!p.requires_grad) continue;
                         p.ensure_grad();
                         for (int i = 0; i < m; ++i)
                           p.grad[static_cast<std::size_t>(i)] +=
                               self.grad[static_cast<std::size_t>(i) * k + c];
                       }
                     });
}

Tensor take_rows(const Tensor& x, int m2) {
  if (x.rank() != 2 || m2 > x.dim(0) || m2 <= 0)
    throw ShapeError("take_rows: cannot take " + std::to_string(m2) + " rows of " +
                     shape_str(x.shape()));
  const int n = x.dim(1);
  std::vector<double> out(x.values().begin(),
                          x.values().begin() + static_cast<std::size_t>(m2) * n);
  auto xn = x.shared_node();
  return make_result({m2, n}, std::move(out), {xn}, [xn](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

Tensor bmm_rows(const Tensor& x, const Tensor& w, int q) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(0) != w.dim(0) || x.dim(1) * q != w.dim(1)) {
    throw ShapeError("bmm_rows: shapes " + shape_str(x.shape()) + " x " +
                     shape_str(w.shape()) + " with q=" + std::to_string(q));
  }
  const int m = x.dim(0), p = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * q, 0.0);
  for (int r = 0; r < m; ++r) {
    const double* xr = x.values().data() + static_cast<std::size_t>(r) * p;
    const double* wr = w.values().data() + static_cast<std::size_t>(r) * p * q;
    double* orow = out.data() + static_cast<std::size_t>(r) * q;
    for (int i = 0; i < p; ++i) {
      const double xv = xr[i];
      const double* wb = wr + static_cast<std::size_t>(i) * q;
      for (int j = 0; j < q; ++j) orow[j] += xv * wb[j];
    }
  }
  auto xn = x.shared_node();
  auto wn = w.shared_node();
  return make_result({m, q}, std::move(out), {xn, wn}, [m, p, q, xn, wn](Tensor::Node& self) {
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    for (int r = 0; r < m; ++r) {
      const double* g = self.grad.data() + static_cast<std::size_t>(r) * q;
      const double* xr = xn->val.data() + static_cast<std::size_t>(r) * p;
      const double* wr = wn->val.data() + static_cast<std::size_t>(r) * p * q;
      for (int i = 0; i < p; ++i) {
        if (xn->requires_grad) {
          double s = 0.0;
          const double* wb = wr + static_cast<std::size_t>(i) * q;
          for (int j = 0; j < q; ++j) s += g[j] * wb[j];
          xn->grad[static_cast<std::size_t>(r) * p + i] += s;
        }
        if (wn->requires_grad) {
          double* gw = wn->grad.data() + static_cast<std::size_t>(r) * p * q +
                       static_cast<std::size_t>(i) * q;
          const double xv = xr[i];
          for (int j = 0; j < q; ++j) gw[j] += xv * g[j];
        }
      }
    }
  });
}

Tensor squeeze1(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != 1) throw ShapeError("squeeze1: need [m,1], got " + shape_str(x.shape()));
  const int m = x.dim(0);
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xn = x.shared_node();
  return make_result({m}, std::move(out), {xn}, [xn](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (n != x.numel())
    throw ShapeError("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  auto xn = x.shared_node();
  return make_result(std::move(shape), std::move(out), {xn}, [xn](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

Tensor row_sum(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("row_sum: need rank 2, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i)] += x.values()[static_cast<std::size_t>(i) * n + j];
  auto xn = x.shared_node();
  return make_result({m}, std::move(out), {xn}, [m, n, xn](Tensor::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < m; ++i) {
      const double g = self.grad[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j) xn->grad[static_cast<std::size_t>(i) * n + j] += g;
    }
  });
}

Tensor make_op(std::vector<int> shape, std::vector<double> val,
               std::vector<Tensor::NodePtr> parents,
               std::function<void(Tensor::Node&)> backprop) {
  return make_result(std::move(shape), std::move(val), std::move(parents),
                     std::move(backprop));
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order topological sort over the recorded graph.
  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> visited;
  std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Tensor::Node* p = node->parents[next].get();
      ++next;
      if (p && p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Tensor::Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
      // Interior node: values and gradients are dead once its backward ran
      // (children always retire first in reverse-topo order). Graph links
      // stay intact; they own parents that may still be pending.
      if (!n->parents.empty() && n->numel() > 1) {
        n->val = std::vector<double>();
        n->grad = std::vector<double>();
        n->backprop = nullptr;
      }
    }
  }
}

}  // namespace blastlab
