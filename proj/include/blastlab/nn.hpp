#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "blastlab/rng.hpp"
#include "blastlab/tensor.hpp"

namespace blastlab {

/// Fully connected layer, y = x W + b.
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(int in, int out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  Tensor forward_relu(const Tensor& x) const;
  int in_size() const { return weight.dim(0); }
  int out_size() const { return weight.dim(1); }
};

/// Fused y = x W + b (optionally ReLU'd) recorded as a single tape node.
/// Episode-long recurrent graphs stay small this way.
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, bool relu_after);

/// Gated recurrent unit cell.
///
/// Gate convention (pinned; tested against a scalar reference):
///   z = sigmoid(W_z x + U_z h + b_z)
///   r = sigmoid(W_r x + U_r h + b_r)
///   hcand = tanh(W_h x + U_h (r*h) + b_h)
///   h' = (1 - z)*h + z*hcand
struct GruCell {
  Tensor w_z, w_r, w_h;  // [in, hidden]
  Tensor u_z, u_r, u_h;  // [hidden, hidden], orthogonal at init
  Tensor b_z, b_r, b_h;  // [hidden]

  GruCell() = default;
  GruCell(int in, int hidden, Rng& rng);

  Tensor step(const Tensor& x, const Tensor& h) const;
  int in_size() const { return w_z.dim(0); }
  int hidden_size() const { return w_z.dim(1); }
};

/// Fused GRU step recorded as a single tape node (gate activations stashed
/// for the hand-written backward pass).
Tensor gru_forward(const Tensor& x, const Tensor& h, const GruCell& cell);

/// Per-agent recurrent Q-network:
///   |O| -> h1 -> (GRU h1<->h1) -> h2 -> |A|
/// with ReLU after the input and penultimate linear layers. The penultimate
/// activation (the h2-wide vector feeding the output layer) is captured on
/// every forward call for the detector pipeline.
class RecurrentQNetwork {
 public:
  RecurrentQNetwork() = default;
  RecurrentQNetwork(int obs_size, int n_actions, Rng& rng, int h1 = 128, int h2 = 64);

  struct StepOut {
    Tensor q;       // [B, |A|]
    Tensor hidden;  // [B, h1]
    Tensor penult;  // [B, h2]
  };

  /// One recurrent step over a batch of observation rows.
  StepOut step(const Tensor& obs, const Tensor& hidden) const;

  /// Fresh all-zeros hidden state (episode start).
  Tensor initial_hidden(int batch) const;

  int obs_size() const { return input.in_size(); }
  int n_actions() const { return output.out_size(); }
  int hidden_size() const { return gru.hidden_size(); }
  int penult_size() const { return hidden.out_size(); }

  /// Topology descriptor stored in checkpoints, e.g. "157>128>G128>64>5".
  std::string topology() const;

  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<Tensor> parameters();

  /// Values of the penultimate activation recorded by the latest step() call
  /// (row-major, one row per batch row).
  const std::vector<double>& last_penultimate() const { return last_penult_; }

  Linear input;   // |O| -> h1
  GruCell gru;    // h1 <-> h1
  Linear hidden;  // h1 -> h2
  Linear output;  // h2 -> |A|

 private:
  mutable std::vector<double> last_penult_;
};

/// Copies every parameter of `source` into `target` bitwise.
/// Throws ContractError when topologies differ.
void hard_update(RecurrentQNetwork& source, RecurrentQNetwork& target);

/// Deep copy with freshly allocated parameter tensors.
RecurrentQNetwork clone_network(RecurrentQNetwork& net);

/// Fills a square tensor with an orthogonal matrix (QR of a Gaussian draw,
/// sign-fixed so the factorization is unique).
void orthogonal_init(Tensor& t, Rng& rng);

/// RMSProp with gradient global-norm clipping applied across all parameters
/// before the update. Aborts with NumericalError on non-finite gradients.
class RmsProp {
 public:
  struct Options {
    double learning_rate = 5e-4;
    double decay = 0.99;
    double epsilon = 1e-5;
    double clip_norm = 10.0;
  };

  explicit RmsProp(std::vector<Tensor> params) : RmsProp(std::move(params), Options()) {}
  RmsProp(std::vector<Tensor> params, Options opt);

  void step();
  void zero_grad();
  const Options& options() const { return opt_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> accum_;
  Options opt_;
};

}  // namespace blastlab
