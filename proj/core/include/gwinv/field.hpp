#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "gwinv/grid.hpp"
#include "gwinv/rng.hpp"

namespace gwinv {

// Stationary covariance of the log-conductivity field:
//   C(x1, x2) = variance * exp(-(|dx|/eta_x)^exponent - (|dy|/eta_y)^exponent)
// exponent = 1 is the separable exponential model (default); exponent = 2 is
// the squared-exponential (Gaussian) model.
struct CovarianceSpec {
  double variance = 1.0;
  double eta_x = 408.0;
  double eta_y = 408.0;
  double exponent = 1.0;
  double mean = 0.0;  // constant mean log conductivity

  double operator()(double dx, double dy) const;
  void validate() const;

  bool operator==(const CovarianceSpec&) const = default;
};

// Truncated Karhunen-Loeve basis of the log-conductivity field on a grid.
// Eigenpairs come from the area-weighted cell-center covariance matrix
// (Nystrom discretization); eigenfunctions are orthonormal in the discrete
// L2 sense: sum_cells f_i f_j dA = delta_ij.
struct KleBasis {
  Grid grid;
  CovarianceSpec cov;
  Eigen::VectorXd lambda;  // descending, nonnegative
  Eigen::MatrixXd f;       // cell_count x n_terms, column k = eigenfunction k
  double total_energy = 0.0;  // trace of the discrete covariance operator

  int n_terms() const { return static_cast<int>(lambda.size()); }
  double energy_fraction() const;

  // Y(x) = mean + sum_k sqrt(lambda_k) f_k(x) xi_k, eigenfunctions evaluated
  // off-grid by bilinear interpolation. Throws if (x, y) is outside the
  // domain.
  double evaluate(const Eigen::VectorXd& xi, double x, double y) const;

  // Per-mode factors phi_k(x,y) = sqrt(lambda_k) f_k(x,y) and their spatial
  // derivatives at one point; Y = mean + phi . xi, dY/dx = phi_x . xi.
  // Buffers must be sized n_terms.
  void mode_values(double x, double y, double* phi, double* phi_x,
                   double* phi_y) const;

  // Y at every cell center (exact, no interpolation).
  Eigen::VectorXd evaluate_grid(const Eigen::VectorXd& xi) const;

  // Least-squares projection of a gridded field onto the basis: the xi whose
  // reconstruction is closest in the discrete L2 norm.
  Eigen::VectorXd project_grid(const Eigen::VectorXd& field_cells) const;
};

// Builds the basis with a fixed number of retained terms.
KleBasis build_kle(const CovarianceSpec& cov, const Grid& grid, int term_count);
// Builds the basis with the smallest n whose energy fraction reaches
// energy_target. Throws NumericError if the full spectrum cannot reach it.
KleBasis build_kle_energy(const CovarianceSpec& cov, const Grid& grid,
                          double energy_target);

// i.i.d. standard-normal coefficient vector.
Eigen::VectorXd sample_xi(Rng& rng, int n);

// Text persistence at 17 significant digits; round-trips bit-exactly.
void save_kle(const KleBasis& basis, const std::string& path);
KleBasis load_kle(const std::string& path);

}  // namespace gwinv
