#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "gwinv/grid.hpp"
#include "gwinv/rng.hpp"

namespace gwinv {

// Transient saturated-flow problem on a rectangular grid:
//   Ss dh/dt - div(K grad h) = 0
// with fixed-head columns on the left/right edges, no-flow top/bottom, and a
// uniform initial head away from the left boundary. Lengths and times are in
// consistent abstract units.
struct FlowProblem {
  Grid grid{51, 51, 0.0, 0.0, 1020.0, 1020.0};
  double ss = 1e-4;     // specific storage [1/L]
  double t_end = 10.0;  // total simulated time [T]
  int n_t = 50;         // uniform implicit time steps
  double h_left = 202.0;
  double h_right = 200.0;
  double h_init = 200.0;

  double dt() const { return t_end / n_t; }
  void validate() const;

  bool operator==(const FlowProblem&) const = default;
};

// Head on the cell-center grid at each of n_t+1 time levels (level 0 is the
// initial condition).
struct HeadHistory {
  Grid grid;
  double dt = 0.0;
  Eigen::MatrixXd h;  // (n_t+1) x cell_count, row t = time level t

  int n_levels() const { return static_cast<int>(h.rows()); }
  double at(int t, int i, int j) const { return h(t, grid.index(i, j)); }
  // Bilinear interpolation in space at one time level.
  double interp(int t, double x, double y) const;
};

enum class ObsKind { head, log_k };

struct ObsRecord {
  double x = 0.0;
  double y = 0.0;
  int t_index = 0;  // 1..n_t for head records; 0 for log-conductivity records
  double value = 0.0;
  double stddev = 0.0;
  ObsKind kind = ObsKind::head;
};

// Observation records plus the diagonal noise covariance they imply. Record
// order is the data-vector order everywhere (engines, surrogate predictions);
// head records are laid out point-major, time-minor by the factory functions.
struct ObservationSet {
  std::vector<ObsRecord> records;

  int size() const { return static_cast<int>(records.size()); }
  int count(ObsKind kind) const;
  Eigen::VectorXd values() const;
  Eigen::VectorXd variances() const;
  void validate(const Grid& grid, int n_t) const;
};

// Fully implicit (backward Euler) finite-volume solve with harmonic-mean face
// conductivities; each step solves the SPD system by diagonally preconditioned
// conjugate gradients to 1e-12 relative residual. lnK holds one value per cell.
HeadHistory solve_flow(const FlowProblem& problem, const Eigen::VectorXd& lnK);

// Extracts the head values of `set` from a history (bilinear in space). With
// an rng, adds independent zero-mean Gaussian noise using each record's
// stddev. Non-head records are passed through unchanged.
Eigen::VectorXd observe(const HeadHistory& history, const ObservationSet& set,
                        Rng* rng);

// Builds a head-observation set from a solved history: one record per
// (point, time step) in point-major, time-minor order, with values already
// noise-perturbed when an rng is given.
ObservationSet make_head_observations(const HeadHistory& history,
                                      const std::vector<std::pair<double, double>>& points,
                                      int t_first, int t_last, double noise_std,
                                      Rng* rng);

// Appends noiseless-in-truth, noise-perturbed log-conductivity records taken
// from a gridded truth field.
void append_logk_observations(ObservationSet& set, const Grid& grid,
                              const Eigen::VectorXd& lnK_truth,
                              const std::vector<std::pair<double, double>>& points,
                              double noise_std, Rng* rng);

// Worst per-step cell mass-balance closure relative to total boundary flux;
// diagnostic for the discretization tests.
double mass_balance_residual(const FlowProblem& problem,
                             const Eigen::VectorXd& lnK,
                             const HeadHistory& history);

// Net volumetric flux entering the domain across the left (or leaving across
// the right) Dirichlet column at one time level; positive in +x direction.
double boundary_flux(const FlowProblem& problem, const Eigen::VectorXd& lnK,
                     const HeadHistory& history, int t, bool left);

// CSV/binary persistence. CSV columns: i, j, t, h (one row per cell per time
// level); the binary dump is a raw little-endian double grid with a small
// header.
void save_history_csv(const HeadHistory& history, const std::string& path);
void save_history_binary(const HeadHistory& history, const std::string& path);
HeadHistory load_history_binary(const std::string& path);

// ObservationSet CSV with header row: x, y, t_index, value, std, kind.
void save_observations_csv(const ObservationSet& set, const std::string& path);
ObservationSet load_observations_csv(const std::string& path);

}  // namespace gwinv
