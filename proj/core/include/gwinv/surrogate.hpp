#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gwinv/field.hpp"
#include "gwinv/net.hpp"
#include "gwinv/simulator.hpp"

namespace gwinv {

// Physics/boundary/initial point sets for surrogate training. Each point
// carries a full coefficient vector. Boundary points are split by condition
// type: Dirichlet faces (left/right, head targets) and no-flow faces
// (top/bottom, dh/dy = 0 targets); the boundary loss pools both.
struct CollocationSet {
  // PDE interior points: columns of (x, y, t) with matching xi columns.
  Eigen::MatrixXd pde_xyt;  // 3 x N_c
  Eigen::MatrixXd pde_xi;   // n x N_c
  Eigen::MatrixXd bcd_xyt;  // Dirichlet boundary points
  Eigen::MatrixXd bcd_xi;
  Eigen::VectorXd bcd_value;
  Eigen::MatrixXd bcn_xyt;  // no-flow boundary points
  Eigen::MatrixXd bcn_xi;
  // Initial points (t = 0).
  Eigen::MatrixXd ic_xyt;
  Eigen::MatrixXd ic_xi;
  Eigen::VectorXd ic_value;

  int n_pde() const { return static_cast<int>(pde_xyt.cols()); }
  int n_bc() const {
    return static_cast<int>(bcd_xyt.cols() + bcn_xyt.cols());
  }
  int n_ic() const { return static_cast<int>(ic_xyt.cols()); }
};

// Simulated training fields plus the labeled-tuple pool. A label is the index
// triple (field, cell, time level) into the stored histories, which keeps the
// full all-cells-all-steps pool at reference scale in tens of megabytes.
struct TrainingData {
  std::vector<Eigen::VectorXd> xi;      // per field
  std::vector<HeadHistory> heads;       // per field
  struct Label {
    std::uint32_t field;
    std::uint32_t cell;
    std::uint32_t t;  // time level 1..n_t
  };
  std::vector<Label> labels;

  int n_fields() const { return static_cast<int>(xi.size()); }
  std::size_t n_labels() const { return labels.size(); }
};

struct LossWeights {
  double data = 1.0;
  double pde = 1.0;
  double bc = 1.0;
  double ic = 1.0;

  void validate() const;
};

// Training budget and minibatching controls.
struct TrainSchedule {
  std::vector<int> hidden = {50, 50, 50, 50, 50, 50, 50};
  int epochs = 2000;
  double lr = 1e-3;
  int batch_pde = 4096;
  int batch_data = 4096;
  int batch_bc = 1024;
  int batch_ic = 1024;
  // Loss-curve emission stride (epochs); 0 disables.
  int log_every = 1;
};

struct LossCurvePoint {
  int epoch = 0;
  double mse_data = 0.0;
  double mse_pde = 0.0;
  double mse_bc = 0.0;
  double mse_ic = 0.0;
  double total = 0.0;
};

// The trained head surrogate h_hat(x, y, t, xi) with the basis and problem it
// was built against. Network input order: (x, y, t, xi_1..xi_n).
struct TgnnSurrogate {
  Mlp net;
  KleBasis basis;
  FlowProblem problem;
  std::vector<LossCurvePoint> loss_curve;

  int n_terms() const { return basis.n_terms(); }
  void validate() const;

  double predict(const Eigen::VectorXd& xi, double x, double y, double t) const;
};

// Samples n_fields coefficient vectors, solves the flow problem for each, and
// emits the labeled pool at all grid cells and time levels (or a seeded
// subsample of labels_per_field tuples per field when positive).
TrainingData generate_training_data(const FlowProblem& problem,
                                    const KleBasis& basis, int n_fields,
                                    Rng& rng, long long labels_per_field = 0);

// Samples the collocation sets: t uniform on (0, T], x and y uniform over the
// domain, each xi coordinate standard normal; boundary points uniform over the
// four faces; initial points uniform over the domain at t = 0.
CollocationSet sample_collocation(const FlowProblem& problem,
                                  const KleBasis& basis, int n_pde, int n_bc,
                                  int n_ic, Rng& rng);

// Transient-flow residual at one point:
//   R = Ss dh/dt - K (d2h/dx2 + d2h/dy2) - K (dY/dx dh/dx + dY/dy dh/dy)
// with K = exp(Y(x; xi)) from the basis and all head derivatives from the
// network's input-differentiation.
double pde_residual(const Mlp& net, const KleBasis& basis, double x, double y,
                    double t, const Eigen::VectorXd& xi, double ss);

// Minimizes weights.data*MSE_DATA + weights.pde*MSE_PDE + weights.bc*MSE_B +
// weights.ic*MSE_I by Adam. Minibatch semantics: each epoch reshuffles every
// category; the PDE category defines the step count per epoch and the other
// categories cycle through their shuffled pools.
TgnnSurrogate train_surrogate(const FlowProblem& problem, const KleBasis& basis,
                              const CollocationSet& colloc,
                              const TrainingData& data,
                              const LossWeights& weights,
                              const TrainSchedule& schedule, Rng& rng);

// Predicted data vector g_surr(xi): the surrogate evaluated at every head
// record of the set, in record order.
Eigen::VectorXd predict_obs(const TgnnSurrogate& surr, const Eigen::VectorXd& xi,
                            const ObservationSet& set);

// Exact Jacobian dg_surr/dxi, shape (head-record count) x n, via one reverse
// sweep over the batched evaluation.
Eigen::MatrixXd sensitivity(const TgnnSurrogate& surr, const Eigen::VectorXd& xi,
                            const ObservationSet& set);

// Relative L2 head error of the surrogate against the simulator over held-out
// coefficient vectors (all cells, time levels 1..n_t).
double validation_error(const TgnnSurrogate& surr,
                        const std::vector<Eigen::VectorXd>& xi_heldout);

// Checkpoint: net checkpoint + inline problem + basis file reference with a
// content hash. The basis file must exist next to the checkpoint when loading.
void save_surrogate(const TgnnSurrogate& surr, const std::string& path,
                    const std::string& basis_path);
TgnnSurrogate load_surrogate(const std::string& path);

void save_loss_curve_csv(const std::vector<LossCurvePoint>& curve,
                         const std::string& path);

}  // namespace gwinv
