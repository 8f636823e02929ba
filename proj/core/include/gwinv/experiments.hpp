#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gwinv/config.hpp"
#include "gwinv/direct.hpp"
#include "gwinv/field.hpp"
#include "gwinv/invert.hpp"
#include "gwinv/report.hpp"
#include "gwinv/simulator.hpp"
#include "gwinv/surrogate.hpp"

namespace gwinv {

// Root-mean-square error over grid cells between two log-conductivity fields.
double rmse(const Eigen::VectorXd& lnK_ref, const Eigen::VectorXd& lnK_est);

// Canonical observation layouts ("5", "9", "12", "16"): interior point
// positions in domain coordinates, shipped with the default config.
std::vector<std::pair<double, double>> observation_layout(const std::string& name);

// Surrogate training budget (network + sampling counts + schedule).
struct SurrogateBudget {
  std::vector<int> hidden = {50, 50, 50, 50, 50, 50, 50};
  int n_fields = 30;
  int n_pde = 50000;
  int n_bc = 5000;
  int n_ic = 5000;
  long long labels_per_field = 0;  // 0 = all cells and time levels
  TrainSchedule schedule;
};

// Full description of one experiment: problem constants, field statistics,
// observation program, per-engine hyperparameters, artifact paths, seed.
// Round-trips losslessly through the INI config format.
struct ExperimentConfig {
  FlowProblem problem;
  CovarianceSpec cov;
  int n_terms = 20;

  std::string obs_layout = "5";
  double noise_std = 0.01;
  int obs_t_first = 1;
  int obs_t_last = 0;  // 0 = n_t
  bool obs_logk = false;
  double logk_noise_std = 0.01;

  SurrogateBudget surrogate;
  InvertOptions invert;
  TrainingInvertOptions training;
  ParamNetSchedule paramnet;
  DirectSchedule direct;

  std::string out_dir = "out";
  std::string basis_path;
  std::string surrogate_path;
  std::string paramnet_path;
  std::uint64_t seed = 1;
  bool timings = false;  // wall-time fields break byte-identical reruns

  int obs_last_step() const { return obs_t_last > 0 ? obs_t_last : problem.n_t; }
};

ExperimentConfig config_from_ini(const IniDoc& doc);
IniDoc config_to_ini(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& cfg, const std::string& path);

// Gridded-field CSV (i, j, x, y, value), used for estimated/error fields.
void save_field_csv(const Grid& grid, const Eigen::VectorXd& values,
                    const std::string& path);
void save_trace_csv(const std::vector<double>& values, const std::string& name,
                    const std::string& path);

// Seeded truth artifacts: the reference field drawn from truth_basis (which
// may differ from the inversion basis), its simulated history, and the noisy
// observation set. Truth and noise use seed substreams disjoint from every
// engine's stream.
struct ReferenceCase {
  Eigen::VectorXd xi_truth;
  Eigen::VectorXd lnK_cells;
  HeadHistory history;
  ObservationSet observations;
};

ReferenceCase make_reference_case(const ExperimentConfig& cfg,
                                  const KleBasis& truth_basis);

// Runs one inversion method ("gradient", "gradient-ensemble", "ies",
// "training", "tgnn-geo", "pinn-no-geo") against the seeded reference case
// and emits fields/traces/report under cfg.out_dir. Surrogate methods require
// surr; tgnn-geo requires pn.
RunReport run_reference_case(const ExperimentConfig& cfg, const std::string& method,
                             const TgnnSurrogate* surr, const ParamNet* pn);

struct SweepRow {
  int size = 0;
  int repeats = 0;
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  double surrogate_seconds = 0.0;
  double simulator_seconds = 0.0;
};

std::vector<SweepRow> run_ensemble_size_sweep(const ExperimentConfig& cfg,
                                              const TgnnSurrogate& surr,
                                              const std::vector<int>& sizes,
                                              int repeats);
void save_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

// Inverts on observation steps 1..split_step only, then forward-simulates the
// estimated field to n_t; emits per-point reference/predicted head series and
// match/prediction-window error metrics.
RunReport run_prediction_split(const ExperimentConfig& cfg,
                               const TgnnSurrogate& surr,
                               const std::string& method, int split_step);

// Truth drawn from a higher-resolution basis (90% energy) while all three
// surrogate engines invert in the surrogate's coefficient space; the in-basis
// projection floor is recorded in each report's metrics.
std::array<RunReport, 3> run_high_resolution_case(const ExperimentConfig& cfg,
                                                  const TgnnSurrogate& surr);

struct PriorVariantRow {
  std::string variant;  // "var0.5", "var2.0", "eta204"
  std::string method;
  bool with_logk = false;
  double rmse = 0.0;
};

// Truth fields drawn from variant statistics; inversion machinery keeps the
// base statistics. Methods: any subset of {"ies", "tgnn-geo"}; each runs with
// and without log-conductivity records when with_and_without_logk is set.
std::vector<PriorVariantRow> run_prior_sensitivity(
    const ExperimentConfig& cfg, const TgnnSurrogate* surr, const ParamNet* pn,
    const std::vector<std::string>& variants,
    const std::vector<std::string>& methods, bool with_and_without_logk);
void save_prior_csv(const std::vector<PriorVariantRow>& rows,
                    const std::string& path);

}  // namespace gwinv
