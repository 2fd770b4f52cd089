#include "blastlab/nn.hpp"

#include <cmath>
#include <sstream>

namespace blastlab {

namespace {

Tensor uniform_fan_in(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> v(static_cast<std::size_t>(in) * out);
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({in, out}, std::move(v), /*requires_grad=*/true);
}

Tensor uniform_fan_in_vec(int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> v(static_cast<std::size_t>(out));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from({out}, std::move(v), /*requires_grad=*/true);
}

}  // namespace

Linear::Linear(int in, int out, Rng& rng)
    : weight(uniform_fan_in(in, out, rng)), bias(uniform_fan_in_vec(in, out, rng)) {}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, bool relu_after) {
  if (x.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match layer [" +
                     std::to_string(w.dim(0)) + "," + std::to_string(w.dim(1)) + "]");
  }
  const int m = x.dim(0), k = x.dim(1), n = w.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  kernels::gemm_nn(m, k, n, x.values().data(), w.values().data(), out.data());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += b.values()[j];
  if (relu_after)
    for (double& v : out) v = v > 0.0 ? v : 0.0;

  auto xn = x.shared_node();
  auto wn = w.shared_node();
  auto bn = b.shared_node();
  return make_op({m, n}, std::move(out), {xn, wn, bn},
                 [m, k, n, relu_after, xn, wn, bn](Tensor::Node& self) {
                   // With ReLU fused, self.val discriminates the active set.
                   std::vector<double> dpre(self.grad);
                   if (relu_after) {
                     for (std::size_t i = 0; i < dpre.size(); ++i)
                       if (self.val[i] <= 0.0) dpre[i] = 0.0;
                   }
                   if (xn->requires_grad) {
                     xn->ensure_grad();
                     kernels::gemm_nt(m, n, k, dpre.data(), wn->val.data(), xn->grad.data());
                   }
                   if (wn->requires_grad) {
                     wn->ensure_grad();
                     kernels::gemm_tn(m, k, n, xn->val.data(), dpre.data(), wn->grad.data());
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (int i = 0; i < m; ++i)
                       for (int j = 0; j < n; ++j)
                         bn->grad[static_cast<std::size_t>(j)] += dpre[static_cast<std::size_t>(i) * n + j];
                   }
                 });
}

Tensor Linear::forward(const Tensor& x) const { return linear_forward(x, weight, bias, false); }

Tensor Linear::forward_relu(const Tensor& x) const {
  return linear_forward(x, weight, bias, true);
}

GruCell::GruCell(int in, int hidden, Rng& rng)
    : w_z(uniform_fan_in(in, hidden, rng)),
      w_r(uniform_fan_in(in, hidden, rng)),
      w_h(uniform_fan_in(in, hidden, rng)),
      u_z(Tensor::zeros({hidden, hidden}, true)),
      u_r(Tensor::zeros({hidden, hidden}, true)),
      u_h(Tensor::zeros({hidden, hidden}, true)),
      b_z(Tensor::zeros({hidden}, true)),
      b_r(Tensor::zeros({hidden}, true)),
      b_h(Tensor::zeros({hidden}, true)) {
  orthogonal_init(u_z, rng);
  orthogonal_init(u_r, rng);
  orthogonal_init(u_h, rng);
}

Tensor gru_forward(const Tensor& x, const Tensor& h, const GruCell& cell) {
  if (x.rank() != 2 || x.dim(1) != cell.in_size())
    throw ShapeError("gru: input " + shape_str(x.shape()) + " vs in_size " +
                     std::to_string(cell.in_size()));
  if (h.rank() != 2 || h.dim(1) != cell.hidden_size() || h.dim(0) != x.dim(0))
    throw ShapeError("gru: hidden " + shape_str(h.shape()) + " vs input " +
                     shape_str(x.shape()));

  const int m = x.dim(0), in = cell.in_size(), hd = cell.hidden_size();
  const std::size_t sz = static_cast<std::size_t>(m) * hd;

  auto gate_pre = [&](const Tensor& wx, const Tensor& uh, const Tensor& bias,
                      const double* hin) {
    std::vector<double> a(sz, 0.0);
    kernels::gemm_nn(m, in, hd, x.values().data(), wx.values().data(), a.data());
    kernels::gemm_nn(m, hd, hd, hin, uh.values().data(), a.data());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < hd; ++j) a[static_cast<std::size_t>(i) * hd + j] += bias.values()[j];
    return a;
  };

  std::vector<double> z = gate_pre(cell.w_z, cell.u_z, cell.b_z, h.values().data());
  std::vector<double> r = gate_pre(cell.w_r, cell.u_r, cell.b_r, h.values().data());
  for (double& v : z) v = 1.0 / (1.0 + std::exp(-v));
  for (double& v : r) v = 1.0 / (1.0 + std::exp(-v));

  std::vector<double> rh(sz);
  for (std::size_t i = 0; i < sz; ++i) rh[i] = r[i] * h.values()[i];
  std::vector<double> c(sz, 0.0);
  kernels::gemm_nn(m, in, hd, x.values().data(), cell.w_h.values().data(), c.data());
  kernels::gemm_nn(m, hd, hd, rh.data(), cell.u_h.values().data(), c.data());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < hd; ++j) c[static_cast<std::size_t>(i) * hd + j] += cell.b_h.values()[j];
  for (double& v : c) v = std::tanh(v);

  std::vector<double> out(sz);
  for (std::size_t i = 0; i < sz; ++i) out[i] = (1.0 - z[i]) * h.values()[i] + z[i] * c[i];

  auto xn = x.shared_node();
  auto hn = h.shared_node();
  auto wzn = cell.w_z.shared_node(), wrn = cell.w_r.shared_node(), whn = cell.w_h.shared_node();
  auto uzn = cell.u_z.shared_node(), urn = cell.u_r.shared_node(), uhn = cell.u_h.shared_node();
  auto bzn = cell.b_z.shared_node(), brn = cell.b_r.shared_node(), bhn = cell.b_h.shared_node();

  auto stash = std::make_shared<std::array<std::vector<double>, 3>>();
  (*stash)[0] = std::move(z);
  (*stash)[1] = std::move(r);
  (*stash)[2] = std::move(c);

  return make_op(
      {m, hd}, std::move(out),
      {xn, hn, wzn, wrn, whn, uzn, urn, uhn, bzn, brn, bhn},
      [m, in, hd, sz, stash, xn, hn, wzn, wrn, whn, uzn, urn, uhn, bzn, brn,
       bhn](Tensor::Node& self) {
        const auto& z = (*stash)[0];
        const auto& r = (*stash)[1];
        const auto& c = (*stash)[2];
        const auto& g = self.grad;
        const auto& hv = hn->val;
        const auto& xv = xn->val;

        std::vector<double> da_c(sz), dz(sz);
        for (std::size_t i = 0; i < sz; ++i) {
          dz[i] = g[i] * (c[i] - hv[i]) * z[i] * (1.0 - z[i]);  // through sigmoid
          da_c[i] = g[i] * z[i] * (1.0 - c[i] * c[i]);          // through tanh
        }
        // d(r*h) comes back through U_h.
        std::vector<double> drh(sz, 0.0);
        kernels::gemm_nt(m, hd, hd, da_c.data(), uhn->val.data(), drh.data());
        std::vector<double> da_r(sz);
        for (std::size_t i = 0; i < sz; ++i)
          da_r[i] = drh[i] * hv[i] * r[i] * (1.0 - r[i]);

        std::vector<double> rh(sz);
        for (std::size_t i = 0; i < sz; ++i) rh[i] = r[i] * hv[i];

        auto accum_gates = [&](Tensor::Node& w, Tensor::Node& u, Tensor::Node& b,
                               const std::vector<double>& da, const double* hin) {
          if (w.requires_grad) {
            w.ensure_grad();
            kernels::gemm_tn(m, in, hd, xv.data(), da.data(), w.grad.data());
          }
          if (u.requires_grad) {
            u.ensure_grad();
            kernels::gemm_tn(m, hd, hd, hin, da.data(), u.grad.data());
          }
          if (b.requires_grad) {
            b.ensure_grad();
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < hd; ++j)
                b.grad[static_cast<std::size_t>(j)] += da[static_cast<std::size_t>(i) * hd + j];
          }
        };
        accum_gates(*wzn, *uzn, *bzn, dz, hv.data());
        accum_gates(*wrn, *urn, *brn, da_r, hv.data());
        accum_gates(*whn, *uhn, *bhn, da_c, rh.data());

        if (xn->requires_grad) {
          xn->ensure_grad();
          kernels::gemm_nt(m, hd, in, dz.data(), wzn->val.data(), xn->grad.data());
          kernels::gemm_nt(m, hd, in, da_r.data(), wrn->val.data(), xn->grad.data());
          kernels::gemm_nt(m, hd, in, da_c.data(), whn->val.data(), xn->grad.data());
        }
        if (hn->requires_grad) {
          hn->ensure_grad();
          for (std::size_t i = 0; i < sz; ++i)
            hn->grad[i] += g[i] * (1.0 - z[i]) + drh[i] * r[i];
          kernels::gemm_nt(m, hd, hd, dz.data(), uzn->val.data(), hn->grad.data());
          kernels::gemm_nt(m, hd, hd, da_r.data(), urn->val.data(), hn->grad.data());
        }
      });
}

Tensor GruCell::step(const Tensor& x, const Tensor& h) const {
  return gru_forward(x, h, *this);
}

RecurrentQNetwork::RecurrentQNetwork(int obs_size, int n_actions, Rng& rng, int h1, int h2)
    : input(obs_size, h1, rng),
      gru(h1, h1, rng),
      hidden(h1, h2, rng),
      output(h2, n_actions, rng) {}

RecurrentQNetwork::StepOut RecurrentQNetwork::step(const Tensor& obs,
                                                   const Tensor& hidden_state) const {
  Tensor x1 = input.forward_relu(obs);
  Tensor h = gru.step(x1, hidden_state);
  Tensor penult = hidden.forward_relu(h);
  Tensor q = output.forward(penult);
  last_penult_.assign(penult.values().begin(), penult.values().end());
  return {q, h, penult};
}

Tensor RecurrentQNetwork::initial_hidden(int batch) const {
  return Tensor::zeros({batch, gru.hidden_size()});
}

std::string RecurrentQNetwork::topology() const {
  std::ostringstream os;
  os << input.in_size() << ">" << input.out_size() << ">G" << gru.hidden_size() << ">"
     << hidden.out_size() << ">" << output.out_size();
  return os.str();
}

std::vector<std::pair<std::string, Tensor>> RecurrentQNetwork::named_parameters() {
  return {
      {"input.weight", input.weight},   {"input.bias", input.bias},
      {"gru.w_z", gru.w_z},             {"gru.w_r", gru.w_r},
      {"gru.w_h", gru.w_h},             {"gru.u_z", gru.u_z},
      {"gru.u_r", gru.u_r},             {"gru.u_h", gru.u_h},
      {"gru.b_z", gru.b_z},             {"gru.b_r", gru.b_r},
      {"gru.b_h", gru.b_h},             {"hidden.weight", hidden.weight},
      {"hidden.bias", hidden.bias},     {"output.weight", output.weight},
      {"output.bias", output.bias},
  };
}

std::vector<Tensor> RecurrentQNetwork::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void hard_update(RecurrentQNetwork& source, RecurrentQNetwork& target) {
  auto src = source.named_parameters();
  auto dst = target.named_parameters();
  if (source.topology() != target.topology())
    throw ContractError("hard_update: topology mismatch " + source.topology() + " vs " +
                        target.topology());
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto sv = src[i].second.values();
    auto dv = dst[i].second.mutable_values();
    std::copy(sv.begin(), sv.end(), dv.begin());
  }
}

RecurrentQNetwork clone_network(RecurrentQNetwork& net) {
  RecurrentQNetwork copy = net;  // copies Tensor handles
  // Re-allocate every parameter so the clone is independent.
  auto reattach = [](Tensor& t) {
    t = Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()),
                     /*requires_grad=*/true);
  };
  reattach(copy.input.weight);
  reattach(copy.input.bias);
  reattach(copy.gru.w_z);
  reattach(copy.gru.w_r);
  reattach(copy.gru.w_h);
  reattach(copy.gru.u_z);
  reattach(copy.gru.u_r);
  reattach(copy.gru.u_h);
  reattach(copy.gru.b_z);
  reattach(copy.gru.b_r);
  reattach(copy.gru.b_h);
  reattach(copy.hidden.weight);
  reattach(copy.hidden.bias);
  reattach(copy.output.weight);
  reattach(copy.output.bias);
  return copy;
}

void orthogonal_init(Tensor& t, Rng& rng) {
  if (t.rank() != 2 || t.dim(0) != t.dim(1))
    throw ContractError("orthogonal_init: square matrices only, got " + shape_str(t.shape()));
  const int n = t.dim(0);
  std::vector<double> a(static_cast<std::size_t>(n) * n);
  for (double& x : a) x = rng.normal();

  // Householder QR; Q assembled explicitly, sign-fixed by diag(R) > 0.
  std::vector<double> q(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) q[static_cast<std::size_t>(i) * n + i] = 1.0;
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    double norm = 0.0;
    for (int i = k; i < n; ++i) {
      v[static_cast<std::size_t>(i)] = a[static_cast<std::size_t>(i) * n + k];
      norm += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
    }
    norm = std::sqrt(norm);
    if (norm < 1e-300) continue;
    const double alpha = v[static_cast<std::size_t>(k)] >= 0.0 ? -norm : norm;
    v[static_cast<std::size_t>(k)] -= alpha;
    double vnorm2 = 0.0;
    for (int i = k; i < n; ++i) vnorm2 += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
    if (vnorm2 < 1e-300) continue;
    // Apply H = I - 2 v v^T / (v^T v) to A (columns k..n-1) and Q (all columns).
    for (int j = k; j < n; ++j) {
      double dot = 0.0;
      for (int i = k; i < n; ++i) dot += v[static_cast<std::size_t>(i)] * a[static_cast<std::size_t>(i) * n + j];
      const double f = 2.0 * dot / vnorm2;
      for (int i = k; i < n; ++i) a[static_cast<std::size_t>(i) * n + j] -= f * v[static_cast<std::size_t>(i)];
    }
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int i = k; i < n; ++i) dot += v[static_cast<std::size_t>(i)] * q[static_cast<std::size_t>(i) * n + j];
      const double f = 2.0 * dot / vnorm2;
      for (int i = k; i < n; ++i) q[static_cast<std::size_t>(i) * n + j] -= f * v[static_cast<std::size_t>(i)];
    }
  }
  // Q currently holds the product of Householder reflections applied to I,
  // i.e. Q^T. Transpose into the output and flip columns where diag(R) < 0.
  auto out = t.mutable_values();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = q[static_cast<std::size_t>(j) * n + i];
  for (int j = 0; j < n; ++j) {
    if (a[static_cast<std::size_t>(j) * n + j] < 0.0)
      for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i) * n + j] = -out[static_cast<std::size_t>(i) * n + j];
  }
}

RmsProp::RmsProp(std::vector<Tensor> params, Options opt)
    : params_(std::move(params)), opt_(opt) {
  accum_.reserve(params_.size());
  for (auto& p : params_) accum_.emplace_back(p.numel(), 0.0);
}

void RmsProp::step() {
  double norm2 = 0.0;
  for (auto& p : params_) {
    auto g = p.grad();
    if (g.empty()) continue;  // unreachable parameter: zero gradient
    for (double gv : g) {
      if (!std::isfinite(gv))
        throw NumericalError("non-finite gradient encountered in optimizer step");
      norm2 += gv * gv;
    }
  }
  const double norm = std::sqrt(norm2);
  const double scale = (norm > opt_.clip_norm && norm > 0.0) ? opt_.clip_norm / norm : 1.0;

  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    auto g = params_[pi].grad();
    if (g.empty()) continue;
    auto v = params_[pi].mutable_values();
    auto& acc = accum_[pi];
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double gv = g[i] * scale;
      acc[i] = opt_.decay * acc[i] + (1.0 - opt_.decay) * gv * gv;
      v[i] -= opt_.learning_rate * gv / (std::sqrt(acc[i]) + opt_.epsilon);
    }
  }
}

void RmsProp::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace blastlab
