#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "gwinv/rng.hpp"
#include "gwinv/surrogate.hpp"

namespace gwinv {

// Forward-model seam used by every surrogate-based engine: a differentiable
// map from coefficient vector to predicted data vector. Implemented by the
// trained surrogate in production and by closed-form toy models in tests.
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;
  virtual int n_obs() const = 0;
  virtual int n_param() const = 0;
  virtual Eigen::VectorXd predict(const Eigen::VectorXd& xi) const = 0;
  // Jacobian d(predict)/d(xi), shape n_obs x n_param.
  virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& xi) const = 0;
  // Vector-Jacobian product J^T w; overridable when one reverse sweep is
  // cheaper than the full Jacobian.
  virtual Eigen::VectorXd vjp(const Eigen::VectorXd& xi,
                              const Eigen::VectorXd& w) const;
  // Predictions for several coefficient vectors (columns); overridable for
  // batched evaluation.
  virtual Eigen::MatrixXd predict_many(const Eigen::MatrixXd& xi_cols) const;
};

// ForwardModel over a trained surrogate and an observation set. Head records
// evaluate the network; log-conductivity records evaluate the basis modes
// directly (exact and linear in xi). Record order defines row order.
class SurrogateForwardModel final : public ForwardModel {
 public:
  SurrogateForwardModel(const TgnnSurrogate& surr, const ObservationSet& set);
  int n_obs() const override;
  int n_param() const override;
  Eigen::VectorXd predict(const Eigen::VectorXd& xi) const override;
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& xi) const override;
  Eigen::VectorXd vjp(const Eigen::VectorXd& xi,
                      const Eigen::VectorXd& w) const override;
  Eigen::MatrixXd predict_many(const Eigen::MatrixXd& xi_cols) const override;

 private:
  const TgnnSurrogate* surr_;
  const ObservationSet* set_;
  Eigen::MatrixXd head_inputs_;  // (3+n) x head-record count, xi rows zeroed
  std::vector<int> head_rows_;   // data-vector row of each head record
  std::vector<int> logk_rows_;
  Eigen::MatrixXd logk_modes_;   // per log-k record: mode factors (row) and mean
  Eigen::VectorXd logk_mean_;
};

// Prior and noise statistics for the engines.
struct PriorSpec {
  Eigen::VectorXd xi_pr;     // prior mean (default zeros)
  Eigen::MatrixXd c_xi;      // prior covariance (default identity)
  Eigen::VectorXd c_d_diag;  // diagonal observation-noise covariance

  static PriorSpec standard(int n_param, const Eigen::VectorXd& c_d_diag);
  void validate(int n_param, int n_obs) const;
};

struct TerminationSpec {
  double eps1 = 0.01;  // max absolute coefficient change
  double eps2 = 1e-4;  // relative data-mismatch change
  int i_max = 10;
};

struct TerminationCheck {
  bool stop = false;
  std::string reason;
};

// Stops when (1) max|xi_next - xi_prev| < eps1, (2) |MIS_next - MIS_prev| /
// max(1, |MIS_prev|) < eps2, or (3) iteration reaches i_max.
TerminationCheck check_termination(const TerminationSpec& spec,
                                   const Eigen::MatrixXd& xi_prev,
                                   const Eigen::MatrixXd& xi_next,
                                   double mis_prev, double mis_next,
                                   int iteration);

// Realizations with their perturbed observations and prior anchors. Columns
// index realizations.
struct Ensemble {
  Eigen::MatrixXd xi;      // n x Ne
  Eigen::MatrixXd d_obs;   // Nd x Ne
  Eigen::MatrixXd xi_pr;   // n x Ne
  int iteration = 0;
  double lambda = 10.0;

  int size() const { return static_cast<int>(xi.cols()); }
};

// Standard-normal initial realizations; each realization's observations are
// d_obs plus fresh N(0, C_D) noise, and its prior anchor is its own initial
// sample.
Ensemble make_ensemble(int n_param, int n_ensemble, const Eigen::VectorXd& d_obs,
                       const Eigen::VectorXd& c_d_diag, double lambda0, Rng& rng);

// MIS = (1/Ne)(1/Nd) sum_j sum_i |g(xi_j)_i - d_obs_{j,i}|^2.
double data_mismatch(const ForwardModel& model, const Ensemble& ensemble);
double data_mismatch(const Eigen::MatrixXd& predictions,
                     const Eigen::MatrixXd& d_obs);

// One damped Gauss-Newton step on a single realization. The inner data-space
// system is solved, never inverted.
Eigen::VectorXd lm_single_update(const ForwardModel& model,
                                 const Eigen::VectorXd& xi,
                                 const Eigen::VectorXd& d_obs,
                                 const PriorSpec& prior, double lambda);

// Same step applied to every realization with the ensemble-averaged
// sensitivity and per-realization observations/prior anchors.
Eigen::MatrixXd lm_ensemble_update(const ForwardModel& model,
                                   const Ensemble& ensemble,
                                   const PriorSpec& prior);

// Ensemble-smoother step given covariances; the estimator-free core that the
// analytic oracle exercises directly. The prior-covariance inverse of the
// anchor term is taken as identity.
Eigen::MatrixXd ies_apply(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& xi_pr,
                          const Eigen::MatrixXd& predictions,
                          const Eigen::MatrixXd& d_obs,
                          const Eigen::MatrixXd& c_xixi,
                          const Eigen::MatrixXd& c_xid,
                          const Eigen::MatrixXd& c_dd,
                          const Eigen::VectorXd& c_d_diag, double lambda);

// Ensemble-smoother step with the sample-covariance estimators (1/(Ne-1))
// computed from the current ensemble and its predictions.
Eigen::MatrixXd ies_update(const ForwardModel& model, const Ensemble& ensemble,
                           const PriorSpec& prior);

// Damping schedule shared by the iterative engines: accepted steps (MIS
// decreases) divide lambda by 10 down to lambda_min; rejected steps multiply
// by 10 up to lambda_max and retry, at most max_retries times per iteration.
struct InvertOptions {
  TerminationSpec term;
  double lambda0 = 10.0;
  double lambda_min = 1e-3;
  double lambda_max = 1e6;
  int max_retries = 5;
  int ensemble_size = 100;
};

struct InvertResult {
  Eigen::MatrixXd xi;             // n x Ne final realizations
  int iterations = 0;
  std::string stop_reason;
  std::vector<double> mis_trace;  // accepted MIS, index 0 = initial state
  std::vector<double> objective_trace;  // training method only
  double wall_seconds = 0.0;

  Eigen::VectorXd xi_mean() const { return xi.rowwise().mean(); }
};

InvertResult invert_gradient_single(const ForwardModel& model,
                                    const Eigen::VectorXd& d_obs,
                                    const PriorSpec& prior,
                                    const InvertOptions& options,
                                    const Eigen::VectorXd& xi0);

InvertResult invert_gradient_ensemble(const ForwardModel& model,
                                      const Eigen::VectorXd& d_obs,
                                      const PriorSpec& prior,
                                      const InvertOptions& options, Rng& rng);

InvertResult invert_ies(const ForwardModel& model, const Eigen::VectorXd& d_obs,
                        const PriorSpec& prior, const InvertOptions& options,
                        Rng& rng);

// Objective O(xi) = 1/2 (d-g)^T C_D^-1 (d-g) + 1/2 (xi-xi_pr)^T C_xi^-1
// (xi-xi_pr), minimized over xi by Adam with the model parameters frozen.
struct TrainingInvertOptions {
  double lr = 0.1;
  int iterations = 300;
};

double training_objective(const ForwardModel& model, const Eigen::VectorXd& xi,
                          const Eigen::VectorXd& d_obs, const PriorSpec& prior);
Eigen::VectorXd training_objective_gradient(const ForwardModel& model,
                                            const Eigen::VectorXd& xi,
                                            const Eigen::VectorXd& d_obs,
                                            const PriorSpec& prior);

InvertResult invert_training(const ForwardModel& model,
                             const Eigen::VectorXd& d_obs,
                             const PriorSpec& prior,
                             const TrainingInvertOptions& options,
                             const Eigen::VectorXd& xi0);

}  // namespace gwinv
