#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "blastlab/checkpoint.hpp"
#include "blastlab/nn.hpp"
#include "blastlab/rng.hpp"
#include "blastlab/tensor.hpp"

using namespace blastlab;

namespace {

double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Scalar-loop GRU reference, computed entry by entry.
std::vector<double> gru_reference(const GruCell& cell, const std::vector<double>& x,
                                  const std::vector<double>& h) {
  const int in = cell.in_size(), hd = cell.hidden_size();
  auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b,
                  const std::vector<double>& hin) {
    std::vector<double> out(static_cast<std::size_t>(hd), 0.0);
    for (int j = 0; j < hd; ++j) {
      double s = b.values()[j];
      for (int i = 0; i < in; ++i) s += x[i] * w.values()[i * hd + j];
      for (int i = 0; i < hd; ++i) s += hin[i] * u.values()[i * hd + j];
      out[j] = s;
    }
    return out;
  };
  auto az = gate(cell.w_z, cell.u_z, cell.b_z, h);
  auto ar = gate(cell.w_r, cell.u_r, cell.b_r, h);
  std::vector<double> rh(static_cast<std::size_t>(hd));
  for (int j = 0; j < hd; ++j) rh[j] = sigmoid_ref(ar[j]) * h[j];
  auto ac = gate(cell.w_h, cell.u_h, cell.b_h, rh);
  std::vector<double> out(static_cast<std::size_t>(hd));
  for (int j = 0; j < hd; ++j) {
    const double z = sigmoid_ref(az[j]);
    out[j] = (1.0 - z) * h[j] + z * std::tanh(ac[j]);
  }
  return out;
}

void fill(Tensor& t, double v) {
  for (auto& x : t.mutable_values()) x = v;
}

}  // namespace

TEST_CASE("gru: all-zero weights move h=1 to 0.5") {
  Rng rng(1);
  GruCell cell(1, 1, rng);
  for (Tensor* t : {&cell.w_z, &cell.w_r, &cell.w_h, &cell.u_z, &cell.u_r, &cell.u_h,
                    &cell.b_z, &cell.b_r, &cell.b_h})
    fill(*t, 0.0);
  Tensor h = Tensor::from({1, 1}, {1.0});
  Tensor x = Tensor::from({1, 1}, {0.0});
  Tensor out = cell.step(x, h);
  CHECK(out.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gru: saturated-closed update gate carries h through") {
  Rng rng(2);
  GruCell cell(2, 3, rng);
  fill(cell.b_z, -1e3);  // z ~ 0
  Tensor x = Tensor::from({1, 2}, {0.0, 0.0});
  Tensor h = Tensor::from({1, 3}, {0.3, -0.7, 0.9});
  Tensor out = cell.step(x, h);
  for (int j = 0; j < 3; ++j)
    CHECK(out.values()[j] == doctest::Approx(h.values()[j]).epsilon(1e-12));
}

TEST_CASE("gru matches the scalar-loop reference") {
  Rng rng(3);
  GruCell cell(5, 4, rng);
  std::vector<double> x(5), h(4);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto& v : h) v = rng.uniform(-1, 1);
  Tensor xt = Tensor::from({1, 5}, x);
  Tensor ht = Tensor::from({1, 4}, h);
  Tensor out = cell.step(xt, ht);
  auto expect = gru_reference(cell, x, h);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(out.values()[j] - expect[j]) <= 1e-12);
}

TEST_CASE("gru hidden magnitude stays bounded by 1") {
  Rng rng(4);
  GruCell cell(3, 6, rng);
  Tensor h = Tensor::zeros({2, 6});
  for (int step = 0; step < 50; ++step) {
    std::vector<double> x(6);
    for (auto& v : x) v = rng.uniform(-3, 3);
    h = cell.step(Tensor::from({2, 3}, {x[0], x[1], x[2], x[3], x[4], x[5]}), h);
    for (double v : h.values()) CHECK(std::abs(v) <= 1.0);
  }
}

TEST_CASE("network gradients match central finite differences through time") {
  // Shrunk recurrent topology unrolled a few steps; every parameter checked.
  Rng rng(5);
  RecurrentQNetwork net(6, 3, rng, 8, 4);
  const int steps = 4;
  std::vector<std::vector<double>> xs;
  std::vector<std::vector<double>> ws;
  Rng data(99);
  for (int t = 0; t < steps; ++t) {
    std::vector<double> x(2 * 6), w(2 * 3);
    for (auto& v : x) v = data.uniform(-1, 1);
    for (auto& v : w) v = data.uniform(-1, 1);
    xs.push_back(x);
    ws.push_back(w);
  }
  auto loss_fn = [&]() {
    Tensor h = net.initial_hidden(2);
    Tensor acc = Tensor::scalar(0.0);
    for (int t = 0; t < steps; ++t) {
      auto out = net.step(Tensor::from({2, 6}, xs[t]), h);
      h = out.hidden;
      acc = add(acc, sum(mul(out.q, Tensor::from({2, 3}, ws[t]))));
      acc = add(acc, affine(sum(square(out.q)), 0.1, 0.0));
    }
    return acc;
  };
  Tensor loss = loss_fn();
  backward(loss);

  const double eps = 1e-5;
  double max_rel = 0.0;
  for (auto& [name, p] : net.named_parameters()) {
    std::vector<double> grad(p.grad().begin(), p.grad().end());
    auto vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); i += 7) {  // sampled entries
      const double orig = vals[i];
      vals[i] = orig + eps;
      const double up = loss_fn().item();
      vals[i] = orig - eps;
      const double dn = loss_fn().item();
      vals[i] = orig;
      const double fd = (up - dn) / (2 * eps);
      const double rel = std::abs(grad[i] - fd) / std::max(1e-6, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  CHECK(max_rel <= 1e-4);
}

TEST_CASE("penultimate activation reconstructs the output layer") {
  Rng rng(6);
  RecurrentQNetwork net(5, 4, rng, 8, 6);
  Tensor h = net.initial_hidden(3);
  std::vector<double> x(3 * 5);
  for (auto& v : x) v = rng.uniform(-1, 1);
  auto out = net.step(Tensor::from({3, 5}, x), h);
  const auto& penult = net.last_penultimate();
  REQUIRE(penult.size() == 3 * 6);
  // q == penult @ W_out + b_out
  for (int r = 0; r < 3; ++r) {
    for (int a = 0; a < 4; ++a) {
      double s = net.output.bias.values()[a];
      for (int j = 0; j < 6; ++j) s += penult[r * 6 + j] * net.output.weight.values()[j * 4 + a];
      CHECK(out.q.values()[r * 4 + a] == doctest::Approx(s).epsilon(1e-12));
    }
  }
}

TEST_CASE("optimizer: zero gradient leaves parameters unchanged") {
  Rng rng(7);
  Tensor p = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  RmsProp opt({p});
  opt.zero_grad();
  // gradient buffer untouched (empty) counts as zero
  opt.step();
  CHECK(p.values()[0] == 1.0);
  CHECK(p.values()[2] == 3.0);
}

TEST_CASE("optimizer: global-norm clip halves a norm-20 gradient") {
  Tensor p = Tensor::from({2}, {0.0, 0.0}, true);
  RmsProp::Options opt_cfg;
  opt_cfg.clip_norm = 10.0;
  opt_cfg.learning_rate = 0.1;
  opt_cfg.decay = 0.9;
  opt_cfg.epsilon = 1e-5;
  RmsProp opt({p}, opt_cfg);
  auto g = p.mutable_grad();
  g[0] = 12.0;
  g[1] = 16.0;  // norm 20 -> effective gradient (6, 8)
  opt.step();
  // Hand-stepped with the halved gradient: acc = 0.1*g_eff^2.
  const double e0 = -0.1 * 6.0 / (std::sqrt(0.1 * 36.0) + 1e-5);
  const double e1 = -0.1 * 8.0 / (std::sqrt(0.1 * 64.0) + 1e-5);
  CHECK(p.values()[0] == doctest::Approx(e0).epsilon(1e-12));
  CHECK(p.values()[1] == doctest::Approx(e1).epsilon(1e-12));

  // A second, unclipped step distinguishes clipped from unclipped history
  // through the accumulator.
  opt.zero_grad();
  auto g2 = p.mutable_grad();
  g2[0] = 0.6;
  g2[1] = 0.8;
  const double before = p.values()[0];
  opt.step();
  const double acc = 0.9 * (0.1 * 36.0) + 0.1 * 0.36;
  CHECK(p.values()[0] ==
        doctest::Approx(before - 0.1 * 0.6 / (std::sqrt(acc) + 1e-5)).epsilon(1e-12));
}

TEST_CASE("optimizer trajectory matches a hand-stepped reference") {
  Tensor p = Tensor::from({1}, {0.5}, true);
  RmsProp::Options cfg;
  cfg.learning_rate = 0.1;
  cfg.decay = 0.9;
  cfg.epsilon = 1e-5;
  cfg.clip_norm = 100.0;
  RmsProp opt({p}, cfg);

  double ref = 0.5, acc = 0.0;
  const std::vector<double> grads = {1.0, -2.0, 0.5, 3.0};
  for (double g : grads) {
    opt.zero_grad();
    p.mutable_grad()[0] = g;
    opt.step();
    acc = 0.9 * acc + 0.1 * g * g;
    ref -= 0.1 * g / (std::sqrt(acc) + 1e-5);
    CHECK(p.values()[0] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("optimizer aborts on non-finite gradients") {
  Tensor p = Tensor::from({1}, {0.0}, true);
  RmsProp opt({p});
  p.mutable_grad()[0] = std::nan("");
  CHECK_THROWS_AS(opt.step(), NumericalError);
}

TEST_CASE("hard_update copies exactly, idempotently, and tracks changes") {
  Rng rng(8);
  RecurrentQNetwork a(4, 3, rng, 6, 5);
  RecurrentQNetwork b(4, 3, rng, 6, 5);
  hard_update(a, b);
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second.numel(); ++j)
      CHECK(pa[i].second.values()[j] == pb[i].second.values()[j]);
  hard_update(a, b);  // idempotent
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second.numel(); ++j)
      CHECK(pa[i].second.values()[j] == pb[i].second.values()[j]);
  a.input.weight.mutable_values()[0] = 42.0;
  hard_update(a, b);
  CHECK(b.input.weight.values()[0] == 42.0);
}

TEST_CASE("hard_update rejects topology mismatch") {
  Rng rng(9);
  RecurrentQNetwork a(4, 3, rng, 6, 5);
  RecurrentQNetwork b(4, 3, rng, 8, 5);
  CHECK_THROWS_AS(hard_update(a, b), ContractError);
}

TEST_CASE("orthogonal init produces orthonormal columns") {
  Rng rng(10);
  Tensor t = Tensor::zeros({16, 16}, true);
  orthogonal_init(t, rng);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) {
      double dot = 0.0;
      for (int r = 0; r < 16; ++r) dot += t.values()[r * 16 + i] * t.values()[r * 16 + j];
      CHECK(std::abs(dot - (i == j ? 1.0 : 0.0)) <= 1e-10);
    }
  }
}

TEST_CASE("identical seeds give bitwise-identical networks") {
  Rng ra(123), rb(123);
  RecurrentQNetwork a(7, 5, ra, 8, 6);
  RecurrentQNetwork b(7, 5, rb, 8, 6);
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second.numel(); ++j)
      CHECK(pa[i].second.values()[j] == pb[i].second.values()[j]);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(11);
  RecurrentQNetwork net(6, 4, rng, 8, 5);
  const std::string path = std::filesystem::temp_directory_path() / "bl_ckpt_test.bin";
  save_checkpoint(path, checkpoint_of(net, {"", 77, 123}));
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.meta.seed == 77);
  CHECK(loaded.meta.train_step == 123);
  CHECK(loaded.meta.topology == net.topology());

  RecurrentQNetwork other(6, 4, rng, 8, 5);
  restore_into(other, loaded);
  auto pa = net.named_parameters();
  auto pb = other.named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second.numel(); ++j)
      CHECK(pa[i].second.values()[j] == pb[i].second.values()[j]);
  std::filesystem::remove(path);
}

TEST_CASE("clone_network detaches parameter storage") {
  Rng rng(12);
  RecurrentQNetwork a(5, 3, rng, 6, 4);
  RecurrentQNetwork b = clone_network(a);
  b.input.weight.mutable_values()[0] = 99.0;
  CHECK(a.input.weight.values()[0] != 99.0);
}
