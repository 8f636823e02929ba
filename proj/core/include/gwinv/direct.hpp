#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "gwinv/field.hpp"
#include "gwinv/net.hpp"
#include "gwinv/simulator.hpp"

namespace gwinv {

// Geostatistics network: maps (x, y, xi_1..xi_n) to log conductivity, trained
// on realizations drawn from a KLE basis. Frozen during TgNN-geo inversion.
struct ParamNet {
  Mlp net;
  KleBasis basis;
  double heldout_rmse = 0.0;  // reconstruction error on unseen realizations

  int n_terms() const { return basis.n_terms(); }
  Eigen::VectorXd evaluate_grid(const Eigen::VectorXd& xi) const;
};

struct ParamNetSchedule {
  int n_realizations = 300;
  int epochs = 2000;
  double lr = 1e-3;
  int batch = 4096;
  std::vector<int> hidden = {64, 64, 64, 64, 64};
  // Labeled samples drawn per realization; 0 = every grid cell.
  long long samples_per_field = 0;
  int n_heldout = 5;
};

ParamNet pretrain_param_net(const KleBasis& basis,
                            const ParamNetSchedule& schedule, Rng& rng);

void save_param_net(const ParamNet& pn, const std::string& path,
                    const std::string& basis_path);
ParamNet load_param_net(const std::string& path);

// Budgets for the direct inversions (PINN-no-geo and TgNN-geo). Loss terms
// follow the five-term sum: PDE residual at n_f points, boundary at n_b,
// initial at n_i, conductivity data, head data; all terms unweighted means.
struct DirectSchedule {
  int n_f = 10000;
  int n_b = 1000;
  int n_i = 1000;
  int epochs = 2000;
  double lr = 1e-3;
  int batch_f = 2048;
  std::vector<int> h_hidden = {50, 50, 50, 50, 50};
  std::vector<int> k_hidden = {50, 50, 50, 50, 50};
  // Optional ridge penalty 1/2 ||xi||^2 on the TgNN-geo coefficients
  // (off by default: the printed loss has none).
  bool prior_penalty = false;
  int log_every = 10;
};

struct DirectResult {
  Eigen::VectorXd lnK_cells;  // estimated log-conductivity on the grid
  Mlp h_net;
  Eigen::VectorXd xi;         // TgNN-geo only (empty otherwise)
  std::vector<double> loss_trace;
  // Final loss terms in order: pde, boundary, initial, k-data, h-data.
  std::array<double, 5> final_terms{};
  int epochs_run = 0;
};

// Joint training of an unconstrained log-conductivity net and a head net on
// the five-term loss; no geostatistical prior enters.
DirectResult invert_pinn_no_geo(const FlowProblem& problem,
                                const ObservationSet& observations,
                                const DirectSchedule& schedule, Rng& rng);

// Joint training of (xi, head net) with the parameter network frozen; the
// estimated field is the ParamNet evaluated at the trained xi.
DirectResult invert_tgnn_geo(const FlowProblem& problem, const ParamNet& pn,
                             const ObservationSet& observations,
                             const DirectSchedule& schedule, Rng& rng);

// Evaluates the five-term loss of the frozen-geostatistics formulation at
// fixed network weights, together with its gradient in xi. Points are drawn
// from a copy of rng, so repeated calls with the same rng state see the same
// points; used for derivative verification.
double direct_loss_eval(const FlowProblem& problem, const ParamNet& pn,
                        const Mlp& h_net, const ObservationSet& observations,
                        const DirectSchedule& schedule,
                        const Eigen::VectorXd& xi, Rng rng,
                        Eigen::VectorXd* grad_xi);

}  // namespace gwinv
