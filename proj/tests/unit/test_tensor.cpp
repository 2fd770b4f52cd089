#include <doctest.h>

#include <cmath>
#include <vector>

#include "blastlab/rng.hpp"
#include "blastlab/tensor.hpp"

using namespace blastlab;

namespace {

// Independent naive triple-loop matmul used as the oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("matmul identity case") {
  Tensor x = Tensor::from({1, 2}, {1, 2});
  Tensor w = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor y = matmul(x, w);
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 2.0);
}

TEST_CASE("linear forward hand arithmetic") {
  // [1,0] @ [[2,3],[5,7]] + [1,1] = [3,4]
  Tensor x = Tensor::from({1, 2}, {1, 0});
  Tensor w = Tensor::from({2, 2}, {2, 3, 5, 7});
  Tensor b = Tensor::from({2}, {1, 1});
  Tensor y = add_rowvec(matmul(x, w), b);
  CHECK(y.values()[0] == 3.0);
  CHECK(y.values()[1] == 4.0);
}

TEST_CASE("matmul matches naive triple-loop oracle") {
  Rng rng(42);
  auto av = random_vec(4 * 8, rng);
  auto bv = random_vec(8 * 3, rng);
  Tensor a = Tensor::from({4, 8}, av);
  Tensor b = Tensor::from({8, 3}, bv);
  Tensor c = matmul(a, b);
  auto expect = naive_matmul(av, bv, 4, 8, 3);
  for (std::size_t i = 0; i < expect.size(); ++i)
    CHECK(std::abs(c.values()[i] - expect[i]) <= 1e-12);
}

TEST_CASE("matmul shape mismatch raises") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("backward: loss = sum(W) gives all-ones gradient") {
  Tensor w = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor loss = sum(w);
  backward(loss);
  for (double g : w.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: zero-scaled loss gives zero gradients") {
  Rng rng(7);
  Tensor w = Tensor::from({3, 3}, random_vec(9, rng), true);
  Tensor x = Tensor::from({2, 3}, random_vec(6, rng));
  Tensor loss = affine(sum(square(matmul(x, w))), 0.0, 0.0);
  backward(loss);
  for (double g : w.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  CHECK_THROWS_AS(backward(square(w)), ContractError);
}

TEST_CASE("unreachable parameters keep zero gradients") {
  Tensor used = Tensor::from({2}, {1, 2}, true);
  Tensor unused = Tensor::from({2}, {3, 4}, true);
  Tensor loss = sum(square(Tensor(used)));
  backward(loss);
  CHECK(unused.grad().empty());
  used.zero_grad();
  unused.zero_grad();
}

TEST_CASE("elementwise op gradients match central finite differences") {
  Rng rng(11);
  auto wv = random_vec(12, rng, -0.8, 0.8);
  auto run = [&](const std::vector<double>& vals) {
    Tensor w = Tensor::from({3, 4}, vals, true);
    Tensor x = Tensor::from({2, 3}, {0.3, -0.2, 0.5, 0.1, 0.7, -0.4});
    Tensor h = tanh_op(matmul(x, w));
    Tensor s = sigmoid(h);
    Tensor e = elu(sub(s, abs_op(h)));
    return std::make_pair(sum(square(e)), w);
  };
  auto [loss, w] = run(wv);
  backward(loss);
  std::vector<double> grad(w.grad().begin(), w.grad().end());
  const double eps = 1e-6;
  for (std::size_t i = 0; i < wv.size(); ++i) {
    auto up = wv, dn = wv;
    up[i] += eps;
    dn[i] -= eps;
    const double fd = (run(up).first.item() - run(dn).first.item()) / (2 * eps);
    CHECK(std::abs(grad[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("gather, stack, reshape, take_rows, bmm_rows forward semantics") {
  Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor g = gather_cols(x, {1, 0, 1});
  CHECK(g.values()[0] == 2.0);
  CHECK(g.values()[1] == 3.0);
  CHECK(g.values()[2] == 6.0);

  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({2}, {3, 4});
  Tensor s = stack_cols({a, b});
  CHECK(s.values()[0] == 1.0);
  CHECK(s.values()[1] == 3.0);
  CHECK(s.values()[3] == 4.0);

  Tensor r = reshape(g, {1, 3});
  CHECK(r.dim(0) == 1);
  Tensor t = take_rows(x, 2);
  CHECK(t.numel() == 4);
  CHECK(t.values()[3] == 4.0);

  // bmm: row 0: [1,2] against blocks [[1,0],[0,1]] -> [1,2]
  Tensor w = Tensor::from({1, 4}, {1, 0, 0, 1});
  Tensor q = bmm_rows(take_rows(x, 1), w, 2);
  CHECK(q.values()[0] == 1.0);
  CHECK(q.values()[1] == 2.0);

  Tensor rs = row_sum(x);
  CHECK(rs.values()[0] == 3.0);
  CHECK(rs.values()[2] == 11.0);
}

TEST_CASE("composite op gradients match finite differences") {
  Rng rng(13);
  auto wv = random_vec(8, rng, -0.5, 0.5);
  auto run = [&](const std::vector<double>& vals) {
    Tensor w = Tensor::from({2, 4}, vals, true);
    Tensor q = bmm_rows(Tensor::from({2, 2}, {0.5, -0.3, 0.2, 0.9}), reshape(w, {2, 4}), 2);
    Tensor g = gather_cols(q, {1, 0});
    Tensor st = stack_cols({g, affine(g, 2.0, 0.1)});
    return std::make_pair(sum(square(row_sum(st))), w);
  };
  auto [loss, w] = run(wv);
  backward(loss);
  std::vector<double> grad(w.grad().begin(), w.grad().end());
  const double eps = 1e-6;
  for (std::size_t i = 0; i < wv.size(); ++i) {
    auto up = wv, dn = wv;
    up[i] += eps;
    dn[i] -= eps;
    const double fd = (run(up).first.item() - run(dn).first.item()) / (2 * eps);
    CHECK(std::abs(grad[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  NoGradGuard ng;
  Tensor y = square(w);
  CHECK_FALSE(y.requires_grad());
}
