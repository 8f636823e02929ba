#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "gwinv/rng.hpp"

namespace gwinv {

// Architecture of a fully-connected tanh network with a linear output layer.
struct MlpSpec {
  int n_inputs = 0;
  std::vector<int> hidden;
  int n_outputs = 1;

  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

// Fully-connected network with affine input/output normalization folded into
// all derivative computations, so every derivative this engine reports is
// with respect to the physical (unnormalized) inputs and outputs.
//
// Parameter layout (flatten/set_params and the checkpoint file): for each
// layer in order, W row-major, then b.
struct Mlp {
  MlpSpec spec;
  std::vector<Eigen::MatrixXd> W;  // W[l]: fan_out x fan_in
  std::vector<Eigen::VectorXd> b;
  Eigen::VectorXd in_shift;  // z0 = (u - in_shift) .* in_scale
  Eigen::VectorXd in_scale;
  double out_shift = 0.0;  // y = out_scale * raw + out_shift
  double out_scale = 1.0;

  static Mlp create(MlpSpec spec);
  int n_layers() const { return static_cast<int>(W.size()); }
  int n_params() const;

  // Glorot-uniform weights, zero biases; draw order follows the parameter
  // layout.
  void init_glorot(Rng& rng);

  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& theta);

  // Maps physical input coordinate k from [lo, hi] to [-1, 1].
  void normalize_input(int k, double lo, double hi);

  // Plain forward pass for a batch of input columns.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
};

// One requested input-derivative channel: d/du_coord (order 1) or
// additionally d2/du_coord2 (order 2).
struct DerivCoord {
  int coord = 0;
  int order = 1;
};

// Values and requested input-derivatives of every output over a batch.
// d1[c] / d2[c] follow the order of the DerivCoord list; d2[c] is empty for
// order-1 channels. All matrices are n_outputs x batch.
struct EvalResult {
  Eigen::MatrixXd value;
  std::vector<Eigen::MatrixXd> d1;
  std::vector<Eigen::MatrixXd> d2;
};

// Forward evaluation with first/second-order input tangents, retained for one
// reverse sweep. The reverse sweep differentiates any scalar formed from the
// outputs AND their input-derivatives, with respect to the parameters (and
// optionally with respect to the inputs, which covers mixed terms such as
// d(dh/dx)/dxi for coordinates that feed both roles).
class NetTape {
 public:
  NetTape(const Mlp& net, Eigen::MatrixXd inputs, std::vector<DerivCoord> coords);

  const EvalResult& out() const { return out_; }
  int batch() const { return static_cast<int>(inputs_.cols()); }

  // Adjoint seeds: d(scalar)/d(quantity), same shapes as EvalResult; empty
  // matrices mean zero. The scalar must decompose as a sum over batch
  // columns, so grad_inputs columns are per-column gradients.
  struct Seeds {
    Eigen::MatrixXd value;
    std::vector<Eigen::MatrixXd> d1;
    std::vector<Eigen::MatrixXd> d2;
  };

  // Accumulates (does not zero) into grad_params (length net.n_params()) and
  // grad_inputs (n_inputs x batch); either may be null.
  void backward(const Seeds& seeds, Eigen::VectorXd* grad_params,
                Eigen::MatrixXd* grad_inputs) const;

 private:
  const Mlp* net_;
  Eigen::MatrixXd inputs_;
  std::vector<DerivCoord> coords_;
  std::vector<Eigen::MatrixXd> z_;                // z_[0..L], post-activation
  std::vector<std::vector<Eigen::MatrixXd>> p_;   // [coord][layer] pre-act 1st tangent
  std::vector<std::vector<Eigen::MatrixXd>> q_;   // [coord][layer] pre-act 2nd tangent
  std::vector<std::vector<Eigen::MatrixXd>> v_;   // [coord][layer] post-act 1st tangent
  std::vector<std::vector<Eigen::MatrixXd>> w_;   // [coord][layer] post-act 2nd tangent
  EvalResult out_;
};

// Single-point convenience wrapper: partials of each output w.r.t. the
// requested input coordinates, order 1 or 2 applied to all of them.
EvalResult grad_inputs(const Mlp& net, const Eigen::VectorXd& input, int order,
                       const std::vector<int>& coords);

// Gradient w.r.t. theta of a scalar loss defined over one batch. The loss
// callback inspects the evaluation and fills adjoint seeds; returns the loss
// value.
using LossSeedFn = std::function<double(const EvalResult&, NetTape::Seeds&)>;
double grad_params(const Mlp& net, const Eigen::MatrixXd& inputs,
                   const std::vector<DerivCoord>& coords, const LossSeedFn& loss,
                   Eigen::VectorXd* grad);

// Standard bias-corrected Adam over a flat variable vector.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step_count = 0;
  Eigen::VectorXd m;
  Eigen::VectorXd v;

  AdamState() = default;
  AdamState(double learning_rate, int n_vars);
};

void adam_step(AdamState& state, Eigen::VectorXd& vars,
               const Eigen::VectorXd& grad);

// Text checkpoint, 17 significant digits, deterministic layout.
void save_net(const Mlp& net, const std::string& path);
Mlp load_net(const std::string& path);
std::string net_to_string(const Mlp& net);
Mlp net_from_string(const std::string& text);

}  // namespace gwinv
