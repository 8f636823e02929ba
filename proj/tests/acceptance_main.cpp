#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "gwinv/common.hpp"
#include "gwinv/direct.hpp"
#include "gwinv/experiments.hpp"
#include "gwinv/field.hpp"
#include "gwinv/invert.hpp"
#include "gwinv/net.hpp"
#include "gwinv/report.hpp"
#include "gwinv/rng.hpp"
#include "gwinv/simulator.hpp"
#include "gwinv/surrogate.hpp"

#ifdef GWINV_CLI_PATH
#include <cstdlib>
#include <sys/wait.h>
#endif

using namespace gwinv;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string num(double v) {
  std::ostringstream out;
  out << std::setprecision(3) << v;
  return out.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

// Shared, lazily built artifacts. Every expensive object (spectral
// decomposition, trained surrogate, reference case, parameter network) is
// built once and reused by every criterion that needs it.
struct Harness {
  bool full = false;
  std::string out_dir;
  ExperimentConfig cfg;  // reference configuration, library defaults

  double spectrum_seconds = -1.0;
  double surrogate_seconds = -1.0;
  double surrogate_error = -1.0;
  double smoke_seconds = -1.0;
  double smoke_error = -1.0;
  double paramnet_seconds = -1.0;

  const KleBasis& spectrum() {
    if (!spectrum_) {
      const double t0 = now_seconds();
      spectrum_ = build_kle_energy(cfg.cov, cfg.problem.grid, 0.995);
      spectrum_seconds = now_seconds() - t0;
    }
    return *spectrum_;
  }

  // First n_terms modes of the full decomposition; identical to building the
  // basis with that term count directly.
  const KleBasis& base() {
    if (!base_) {
      const KleBasis& s = spectrum();
      KleBasis b;
      b.grid = s.grid;
      b.cov = s.cov;
      b.lambda = s.lambda.head(cfg.n_terms);
      b.f = s.f.leftCols(cfg.n_terms);
      b.total_energy = s.total_energy;
      base_ = std::move(b);
    }
    return *base_;
  }

  // Variance-scaled variant shares the eigenfunctions of the base statistics;
  // only the eigenvalues and total energy scale.
  const KleBasis& low_variance_basis() {
    if (!low_var_) {
      const KleBasis& s = spectrum();
      const double target = 0.80 * s.total_energy;
      double acc = 0.0;
      int n = 0;
      while (n < s.n_terms() && acc < target) acc += s.lambda(n++);
      KleBasis b;
      b.grid = s.grid;
      b.cov = s.cov;
      b.cov.variance = 0.5;
      b.lambda = 0.5 * s.lambda.head(n);
      b.f = s.f.leftCols(n);
      b.total_energy = 0.5 * s.total_energy;
      low_var_ = std::move(b);
    }
    return *low_var_;
  }

  const KleBasis& short_correlation_basis() {
    if (!short_corr_) {
      CovarianceSpec cov = cfg.cov;
      cov.eta_x = 204.0;
      cov.eta_y = 204.0;
      short_corr_ = build_kle_energy(cov, cfg.problem.grid, 0.80);
    }
    return *short_corr_;
  }

  TgnnSurrogate train_head_surrogate(int n_pde, int n_bc, int n_ic, int epochs,
                                     bool small_batches, double* error,
                                     double* seconds) {
    const KleBasis& b = base();
    const double t0 = now_seconds();
    const Rng root(cfg.seed);
    Rng data_rng = root.substream("surrogate-data");
    const TrainingData data =
        generate_training_data(cfg.problem, b, 30, data_rng, 0);
    Rng colloc_rng = root.substream("surrogate-collocation");
    const CollocationSet colloc =
        sample_collocation(cfg.problem, b, n_pde, n_bc, n_ic, colloc_rng);
    TrainSchedule schedule;
    schedule.epochs = epochs;
    schedule.log_every = 50;
    if (small_batches) {
      // Small PDE slices raise the Adam step count per epoch; the point and
      // epoch budgets are unchanged.
      schedule.batch_pde = 500;
      schedule.batch_data = 2048;
      schedule.batch_bc = 512;
      schedule.batch_ic = 512;
    }
    Rng train_rng = root.substream("surrogate-train");
    TgnnSurrogate s = train_surrogate(cfg.problem, b, colloc, data,
                                      LossWeights{}, schedule, train_rng);
    Rng held_rng = root.substream("surrogate-heldout");
    std::vector<Eigen::VectorXd> held;
    for (int i = 0; i < 5; ++i) held.push_back(sample_xi(held_rng, cfg.n_terms));
    *error = validation_error(s, held);
    *seconds = now_seconds() - t0;
    return s;
  }

  // The surrogate behind the inversion criteria. The full profile trains the
  // production budget; the ci profile extends the smoke budget's epochs so
  // the predictions at the gauges are accurate enough to invert against.
  const TgnnSurrogate& surrogate() {
    if (!surr_) {
      surr_ = full ? train_head_surrogate(50000, 5000, 5000, 2000, false,
                                          &surrogate_error, &surrogate_seconds)
                   : train_head_surrogate(5000, 500, 500, 900, true,
                                          &surrogate_error, &surrogate_seconds);
    }
    return *surr_;
  }

  // The reduced profile whose wall time the surrogate-quality criterion gates.
  const TgnnSurrogate& smoke_surrogate() {
    if (!smoke_) {
      smoke_ = train_head_surrogate(5000, 500, 500, 300, true, &smoke_error,
                                    &smoke_seconds);
    }
    return *smoke_;
  }

  const ReferenceCase& reference() {
    if (!ref_) ref_ = make_reference_case(cfg, base());
    return *ref_;
  }

  // Full-observation production run of one surrogate engine; artifacts land
  // under cfg.out_dir.
  const RunReport& full_report(const std::string& method) {
    auto it = reports_.find(method);
    if (it == reports_.end()) {
      std::filesystem::create_directories(cfg.out_dir);
      it = reports_.emplace(method,
                            run_reference_case(cfg, method, &surrogate(),
                                               nullptr))
               .first;
    }
    return it->second;
  }

  const ParamNet& paramnet() {
    if (!pnet_) {
      ParamNetSchedule schedule;
      if (!full) {
        schedule.n_realizations = 150;
        schedule.epochs = 400;
        schedule.lr = 2e-3;
        schedule.hidden = {32, 32, 32};
        schedule.samples_per_field = 400;
      } else {
        schedule.samples_per_field = 1000;
      }
      const double t0 = now_seconds();
      Rng rng = Rng(cfg.seed).substream("paramnet");
      pnet_ = pretrain_param_net(base(), schedule, rng);
      paramnet_seconds = now_seconds() - t0;
    }
    return *pnet_;
  }

  DirectSchedule direct_schedule() const {
    DirectSchedule s;
    if (full) {
      s.n_f = 10000;
      s.n_b = 1000;
      s.n_i = 1000;
      s.epochs = 2000;
      s.lr = 1e-3;
    } else {
      s.n_f = 2500;
      s.n_b = 400;
      s.n_i = 300;
      s.epochs = 400;
      s.lr = 2e-3;
      s.batch_f = 640;
      s.h_hidden = {30, 30, 30};
      s.k_hidden = {30, 30, 30};
    }
    s.log_every = 200;
    return s;
  }

 private:
  std::optional<KleBasis> spectrum_;
  std::optional<KleBasis> base_;
  std::optional<KleBasis> low_var_;
  std::optional<KleBasis> short_corr_;
  std::optional<TgnnSurrogate> surr_;
  std::optional<TgnnSurrogate> smoke_;
  std::optional<ReferenceCase> ref_;
  std::map<std::string, RunReport> reports_;
  std::optional<ParamNet> pnet_;
};

// Smooth multiscale heterogeneity defined pointwise, so coarse and refined
// grids sample the same continuum field.
Eigen::VectorXd wavy_field(const Grid& g) {
  Eigen::VectorXd lnK(g.cell_count());
  const double pi = std::acos(-1.0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const double u = (g.xc(i) - g.x0) / g.lx;
      const double v = (g.yc(j) - g.y0) / g.ly;
      lnK(g.index(i, j)) = 0.8 * std::sin(pi * u) * std::cos(2.0 * pi * v) +
                           0.3 * std::cos(3.0 * pi * u);
    }
  return lnK;
}

void solver_linearity(Harness&, CheckResult& c) {
  FlowProblem steady;
  steady.t_end = 4000.0;
  steady.n_t = 100;
  const HeadHistory rest =
      solve_flow(steady, Eigen::VectorXd::Zero(steady.grid.cell_count()));
  const Grid& sg = steady.grid;
  // The fixed-head columns are the edge cell columns, so the discrete steady
  // profile is linear between their centers.
  const double xa = sg.xc(0), xb = sg.xc(sg.nx - 1);
  double steady_err = 0.0;
  for (int j = 0; j < sg.ny; ++j)
    for (int i = 0; i < sg.nx; ++i) {
      const double expect =
          steady.h_left +
          (steady.h_right - steady.h_left) * (sg.xc(i) - xa) / (xb - xa);
      steady_err =
          std::max(steady_err, std::abs(rest.at(steady.n_t, i, j) - expect));
    }

  const FlowProblem coarse;
  const HeadHistory hc = solve_flow(coarse, wavy_field(coarse.grid));
  FlowProblem fine = coarse;
  fine.grid.nx = 101;
  fine.grid.ny = 101;
  fine.n_t = 100;
  const HeadHistory hf = solve_flow(fine, wavy_field(fine.grid));
  const std::vector<std::pair<double, double>> points = observation_layout("5");
  const double span = coarse.h_left - coarse.h_right;
  double refine_rel = 0.0, refine_span = 0.0;
  for (const auto& [x, y] : points)
    for (int t = 1; t <= coarse.n_t; ++t) {
      const double a = hc.interp(t, x, y);
      const double b = hf.interp(2 * t, x, y);
      refine_rel = std::max(refine_rel, std::abs(a - b) / std::abs(b));
      refine_span = std::max(refine_span, std::abs(a - b) / span);
    }

  c.pass = steady_err < 1e-6 && refine_rel < 0.005;
  c.detail = "steady max |h - linear| " + num(steady_err) +
             " (limit 1e-06); refinement disagreement " +
             num(100.0 * refine_rel) + "% of head (limit 0.5%), " +
             num(100.0 * refine_span) +
             "% of the boundary head span, at the 5 gauges";
}

void field_spectrum(Harness& h, CheckResult& c) {
  const double t0 = now_seconds();
  const KleBasis& s = h.spectrum();

  const double energy20 = s.lambda.head(20).sum() / s.total_energy;
  const double target90 = 0.90 * s.total_energy;
  double acc = 0.0;
  int n90 = 0;
  while (n90 < s.n_terms() && acc < target90) acc += s.lambda(n90++);

  const Grid& g = s.grid;
  Rng pair_rng = Rng(h.cfg.seed).substream("spectrum-pairs");
  std::vector<std::pair<int, int>> pairs;
  std::vector<double> expected;
  int guard = 0;
  while (pairs.size() < 10) {
    if (++guard > 100000)
      throw NumericError("pair sampling failed to find covariant pairs");
    const int a = static_cast<int>(pair_rng.uniform_index(g.cell_count()));
    const int b = static_cast<int>(pair_rng.uniform_index(g.cell_count()));
    const int ai = a % g.nx, aj = a / g.nx;
    const int bi = b % g.nx, bj = b / g.nx;
    const double cov_ab =
        s.cov(g.xc(ai) - g.xc(bi), g.yc(aj) - g.yc(bj));
    // A relative check against a near-zero covariance is ill-conditioned, so
    // pairs are drawn among those with a substantial analytic value.
    if (cov_ab < 0.5 * s.cov.variance) continue;
    pairs.emplace_back(a, b);
    expected.push_back(cov_ab);
  }

  std::vector<int> cells;
  for (const auto& [a, b] : pairs) {
    cells.push_back(a);
    cells.push_back(b);
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  std::map<int, int> row_of;
  for (std::size_t r = 0; r < cells.size(); ++r) row_of[cells[r]] = static_cast<int>(r);

  const int m = s.n_terms();
  const int rows = static_cast<int>(cells.size());
  Eigen::MatrixXd modes(rows, m);
  for (int r = 0; r < rows; ++r)
    modes.row(r) =
        s.f.row(cells[r]).array() * s.lambda.transpose().array().sqrt();

  const int draws = 20000;
  Rng mc_rng = Rng(h.cfg.seed).substream("spectrum-mc");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(rows);
  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(rows, rows);
  Eigen::VectorXd xi(m);
  for (int d = 0; d < draws; ++d) {
    for (int k = 0; k < m; ++k) xi(k) = mc_rng.normal();
    const Eigen::VectorXd y = modes * xi;
    sum += y;
    cross.selfadjointView<Eigen::Lower>().rankUpdate(y);
  }
  double worst_rel = 0.0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const int ra = row_of[pairs[p].first];
    const int rb = row_of[pairs[p].second];
    const double prod = ra >= rb ? cross(ra, rb) : cross(rb, ra);
    const double sample_cov =
        (prod - sum(ra) * sum(rb) / draws) / (draws - 1);
    worst_rel =
        std::max(worst_rel, std::abs(sample_cov - expected[p]) / expected[p]);
  }

  const double seconds = now_seconds() - t0;
  c.pass = worst_rel < 0.05 && energy20 >= 0.75 && energy20 <= 0.85 &&
           n90 >= 50 && n90 <= 70 && seconds < 120.0;
  c.detail = "sample covariance off by " + num(100.0 * worst_rel) +
             "% worst of 10 pairs (limit 5%); 20-term energy " + num(energy20) +
             " (band 0.75..0.85); 90% energy at " + std::to_string(n90) +
             " terms (band 50..70); " + num(seconds) + " s (limit 120)";
}

struct FdStat {
  double worst = 0.0;
  void add(double ad, double fd, double tol, double floor_scale) {
    const double scale = std::max(floor_scale, std::abs(fd));
    worst = std::max(worst, std::abs(ad - fd) / (tol * scale));
  }
  bool ok() const { return worst <= 1.0; }
};

void derivative_checks(Harness& h, CheckResult& c) {
  const double t0 = now_seconds();
  const Rng root(h.cfg.seed);
  const int trials = 100;

  FdStat stat_params;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = root.substream("fd-params", trial);
    MlpSpec spec;
    spec.n_inputs = 2 + static_cast<int>(rng.uniform_index(3));
    spec.hidden = {5 + static_cast<int>(rng.uniform_index(6)),
                   4 + static_cast<int>(rng.uniform_index(6))};
    spec.n_outputs = 1 + static_cast<int>(rng.uniform_index(2));
    Mlp net = Mlp::create(spec);
    net.init_glorot(rng);
    for (int k = 0; k < spec.n_inputs; ++k)
      net.normalize_input(k, -1.0 - rng.uniform(), 1.0 + rng.uniform());
    net.out_shift = rng.normal();
    net.out_scale = 0.5 + rng.uniform();
    const int batch = 3 + static_cast<int>(rng.uniform_index(4));
    Eigen::MatrixXd inputs(spec.n_inputs, batch);
    for (int b = 0; b < batch; ++b)
      for (int k = 0; k < spec.n_inputs; ++k) inputs(k, b) = rng.normal();
    const std::vector<DerivCoord> coords = {{0, 2}, {1, 1}};
    Eigen::MatrixXd wv(spec.n_outputs, batch);
    for (int b = 0; b < batch; ++b)
      for (int o = 0; o < spec.n_outputs; ++o) wv(o, b) = rng.normal();
    std::vector<Eigen::MatrixXd> w1(coords.size()), w2(coords.size());
    for (std::size_t ci = 0; ci < coords.size(); ++ci) {
      w1[ci].resize(spec.n_outputs, batch);
      for (int b = 0; b < batch; ++b)
        for (int o = 0; o < spec.n_outputs; ++o) w1[ci](o, b) = rng.normal();
      if (coords[ci].order == 2) {
        w2[ci].resize(spec.n_outputs, batch);
        for (int b = 0; b < batch; ++b)
          for (int o = 0; o < spec.n_outputs; ++o) w2[ci](o, b) = rng.normal();
      }
    }
    auto weighted = [&](const EvalResult& ev, NetTape::Seeds* seeds) {
      if (seeds) {
        seeds->value = wv;
        seeds->d1.resize(coords.size());
        seeds->d2.resize(coords.size());
      }
      double loss = (wv.array() * ev.value.array()).sum();
      for (std::size_t ci = 0; ci < coords.size(); ++ci) {
        loss += (w1[ci].array() * ev.d1[ci].array()).sum();
        if (seeds) seeds->d1[ci] = w1[ci];
        if (coords[ci].order == 2) {
          loss += (w2[ci].array() * ev.d2[ci].array()).sum();
          if (seeds) seeds->d2[ci] = w2[ci];
        }
      }
      return loss;
    };
    Eigen::VectorXd grad;
    grad_params(
        net, inputs, coords,
        [&](const EvalResult& ev, NetTape::Seeds& s) { return weighted(ev, &s); },
        &grad);
    const Eigen::VectorXd theta = net.params();
    for (int probe = 0; probe < 6; ++probe) {
      const int k = static_cast<int>(rng.uniform_index(theta.size()));
      const double step = 1e-6 * std::max(1.0, std::abs(theta(k)));
      double side[2];
      for (int s = 0; s < 2; ++s) {
        Mlp moved = net;
        Eigen::VectorXd shifted = theta;
        shifted(k) += s == 0 ? step : -step;
        moved.set_params(shifted);
        NetTape tape(moved, inputs, coords);
        side[s] = weighted(tape.out(), nullptr);
      }
      stat_params.add(grad(k), (side[0] - side[1]) / (2.0 * step), 1e-5, 1.0);
    }
  }

  FdStat stat_first, stat_second;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = root.substream("fd-inputs", trial);
    MlpSpec spec{3, {6 + static_cast<int>(rng.uniform_index(6)), 6},
                 1 + static_cast<int>(rng.uniform_index(2))};
    Mlp net = Mlp::create(spec);
    net.init_glorot(rng);
    net.normalize_input(0, -2.0, 2.0);
    net.normalize_input(1, 0.0, 3.0);
    net.out_shift = rng.normal();
    net.out_scale = 0.5 + rng.uniform();
    Eigen::VectorXd u(3);
    for (int k = 0; k < 3; ++k) u(k) = rng.normal();
    const EvalResult ev = grad_inputs(net, u, 2, {0, 1, 2});
    for (int k = 0; k < 3; ++k) {
      const double step1 = 1e-5 * std::max(1.0, std::abs(u(k)));
      Eigen::VectorXd up = u, dn = u;
      up(k) += step1;
      dn(k) -= step1;
      const Eigen::VectorXd fp = net.forward(up), fm = net.forward(dn);
      const double step2 = 1e-4 * std::max(1.0, std::abs(u(k)));
      Eigen::VectorXd up2 = u, dn2 = u;
      up2(k) += step2;
      dn2(k) -= step2;
      const Eigen::VectorXd fp2 = net.forward(up2), fm2 = net.forward(dn2),
                            f0 = net.forward(u);
      for (int o = 0; o < spec.n_outputs; ++o) {
        stat_first.add(ev.d1[k](o, 0), (fp(o) - fm(o)) / (2.0 * step1), 1e-4,
                       1.0);
        stat_second.add(ev.d2[k](o, 0),
                        (fp2(o) - 2.0 * f0(o) + fm2(o)) / (step2 * step2),
                        1e-3, 1.0);
      }
    }
  }

  // Shared small instruments for the observation-space checks.
  Rng inst_rng = root.substream("fd-instruments");
  const Grid small_grid{11, 11, 0.0, 0.0, 1020.0, 1020.0};
  CovarianceSpec small_cov;
  const KleBasis small_basis = build_kle(small_cov, small_grid, 4);
  FlowProblem small_problem;
  small_problem.grid = small_grid;
  small_problem.n_t = 5;

  Mlp surr_net = Mlp::create({3 + 4, {10, 10}, 1});
  surr_net.init_glorot(inst_rng);
  surr_net.normalize_input(0, 0.0, 1020.0);
  surr_net.normalize_input(1, 0.0, 1020.0);
  surr_net.normalize_input(2, 0.0, small_problem.t_end);
  surr_net.out_shift = 201.0;
  const TgnnSurrogate small_surr{surr_net, small_basis, small_problem, {}};

  ObservationSet obs;
  const std::vector<std::pair<double, double>> layout = observation_layout("5");
  for (int p = 0; p < 4; ++p) {
    ObsRecord rec;
    rec.x = layout[p].first;
    rec.y = layout[p].second;
    rec.t_index = 1 + p % small_problem.n_t;
    rec.value = 200.5 + 0.1 * p;
    rec.stddev = 0.01;
    obs.records.push_back(rec);
  }
  for (int p = 0; p < 2; ++p) {
    ObsRecord rec;
    rec.x = layout[p + 2].first;
    rec.y = layout[p + 2].second;
    rec.t_index = 0;
    rec.value = 0.3 - 0.2 * p;
    rec.stddev = 0.01;
    rec.kind = ObsKind::log_k;
    obs.records.push_back(rec);
  }
  const SurrogateForwardModel model(small_surr, obs);
  const PriorSpec prior = PriorSpec::standard(4, obs.variances());
  const Eigen::VectorXd d_obs = obs.values();

  FdStat stat_jac;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = root.substream("fd-jacobian", trial);
    const Eigen::VectorXd xi = sample_xi(rng, 4);
    const Eigen::MatrixXd jac = model.jacobian(xi);
    for (int k = 0; k < 4; ++k) {
      const double step = 1e-5 * std::max(1.0, std::abs(xi(k)));
      Eigen::VectorXd up = xi, dn = xi;
      up(k) += step;
      dn(k) -= step;
      const Eigen::VectorXd fd = (model.predict(up) - model.predict(dn)) / (2.0 * step);
      for (int r = 0; r < model.n_obs(); ++r)
        stat_jac.add(jac(r, k), fd(r), 1e-4, 1.0);
    }
  }

  FdStat stat_objective;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = root.substream("fd-objective", trial);
    const Eigen::VectorXd xi = sample_xi(rng, 4);
    Eigen::VectorXd data = model.predict(sample_xi(rng, 4));
    for (int r = 0; r < data.size(); ++r) data(r) += 0.01 * rng.normal();
    const Eigen::VectorXd grad =
        training_objective_gradient(model, xi, data, prior);
    for (int k = 0; k < 4; ++k) {
      const double step = 1e-5 * std::max(1.0, std::abs(xi(k)));
      Eigen::VectorXd up = xi, dn = xi;
      up(k) += step;
      dn(k) -= step;
      const double fd = (training_objective(model, up, data, prior) -
                         training_objective(model, dn, data, prior)) /
                        (2.0 * step);
      stat_objective.add(grad(k), fd, 1e-4, 1.0);
    }
  }

  Mlp pn_net = Mlp::create({2 + 4, {10, 10}, 1});
  pn_net.init_glorot(inst_rng);
  pn_net.normalize_input(0, 0.0, 1020.0);
  pn_net.normalize_input(1, 0.0, 1020.0);
  const ParamNet small_pn{pn_net, small_basis, 0.0};
  Mlp head_net = Mlp::create({3, {10, 10}, 1});
  head_net.init_glorot(inst_rng);
  head_net.normalize_input(0, 0.0, 1020.0);
  head_net.normalize_input(1, 0.0, 1020.0);
  head_net.normalize_input(2, 0.0, small_problem.t_end);
  head_net.out_shift = 201.0;
  DirectSchedule fd_schedule;
  fd_schedule.n_f = 25;
  fd_schedule.n_b = 12;
  fd_schedule.n_i = 8;

  FdStat stat_direct;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = root.substream("fd-direct", trial);
    const Eigen::VectorXd xi = sample_xi(rng, 4);
    const Rng points_rng = root.substream("fd-direct-points", trial);
    Eigen::VectorXd grad;
    direct_loss_eval(small_problem, small_pn, head_net, obs, fd_schedule, xi,
                     points_rng, &grad);
    for (int k = 0; k < 4; ++k) {
      const double step = 1e-5 * std::max(1.0, std::abs(xi(k)));
      Eigen::VectorXd up = xi, dn = xi;
      up(k) += step;
      dn(k) -= step;
      const double lp = direct_loss_eval(small_problem, small_pn, head_net, obs,
                                         fd_schedule, up, points_rng, nullptr);
      const double lm = direct_loss_eval(small_problem, small_pn, head_net, obs,
                                         fd_schedule, dn, points_rng, nullptr);
      stat_direct.add(grad(k), (lp - lm) / (2.0 * step), 1e-4, 1e-2);
    }
  }

  const double seconds = now_seconds() - t0;
  c.pass = stat_params.ok() && stat_first.ok() && stat_second.ok() &&
           stat_jac.ok() && stat_objective.ok() && stat_direct.ok() &&
           seconds < 300.0;
  c.detail = "worst deviation / tolerance over 100 trials each: parameters " +
             num(stat_params.worst) + ", inputs(1st) " + num(stat_first.worst) +
             ", inputs(2nd) " + num(stat_second.worst) + ", jacobian " +
             num(stat_jac.worst) + ", fit objective " +
             num(stat_objective.worst) + ", direct loss " +
             num(stat_direct.worst) + " (all limits 1); " + num(seconds) +
             " s (limit 300)";
}

class LinearModel final : public ForwardModel {
 public:
  explicit LinearModel(Eigen::MatrixXd g) : g_(std::move(g)) {}
  int n_obs() const override { return static_cast<int>(g_.rows()); }
  int n_param() const override { return static_cast<int>(g_.cols()); }
  Eigen::VectorXd predict(const Eigen::VectorXd& xi) const override {
    return g_ * xi;
  }
  Eigen::MatrixXd jacobian(const Eigen::VectorXd&) const override { return g_; }

 private:
  Eigen::MatrixXd g_;
};

void linear_gaussian_update(Harness&, CheckResult& c) {
  Eigen::MatrixXd g(2, 3);
  g << 1.0, -0.5, 0.25, 0.3, 0.8, -0.6;
  Eigen::VectorXd c_d(2);
  c_d << 0.09, 0.04;
  Eigen::VectorXd d(2);
  d << 1.2, -0.7;
  Eigen::VectorXd xi_pr(3);
  xi_pr << 0.3, -0.2, 0.5;

  const Eigen::MatrixXd inner =
      g * g.transpose() + Eigen::MatrixXd(c_d.asDiagonal());
  const Eigen::VectorXd kalman =
      xi_pr + g.transpose() * inner.ldlt().solve(d - g * xi_pr);

  const LinearModel model(g);
  PriorSpec prior;
  prior.xi_pr = xi_pr;
  prior.c_xi = Eigen::MatrixXd::Identity(3, 3);
  prior.c_d_diag = c_d;
  const Eigen::VectorXd lm_next =
      lm_single_update(model, xi_pr, d, prior, 0.0);
  const double lm_err = (lm_next - kalman).lpNorm<Eigen::Infinity>();

  const Eigen::MatrixXd xi_col = xi_pr;
  const Eigen::MatrixXd smoother = ies_apply(
      xi_col, xi_col, g * xi_col, d, Eigen::MatrixXd::Identity(3, 3),
      g.transpose(), g * g.transpose(), c_d, 0.0);
  const double ies_err =
      (smoother.col(0) - kalman).lpNorm<Eigen::Infinity>();

  c.pass = lm_err < 1e-6 && ies_err < 1e-6;
  c.detail = "posterior-mean deviation: damped step " + num(lm_err) +
             ", smoother step " + num(ies_err) + " (limit 1e-06)";
}

void surrogate_quality(Harness& h, CheckResult& c) {
  const TgnnSurrogate& surr = h.full ? h.surrogate() : h.smoke_surrogate();
  const double err = h.full ? h.surrogate_error : h.smoke_error;
  const double secs = h.full ? h.surrogate_seconds : h.smoke_seconds;
  const double tol = h.full ? 0.05 : 0.10;
  const bool time_ok = h.full || secs < 300.0;

  // Drawdown-scale diagnostic: worst head error at the gauges for the seeded
  // reference field (the norm in the headline metric is dominated by the
  // ambient head level).
  const ReferenceCase& ref = h.reference();
  const std::vector<std::pair<double, double>> points = observation_layout("5");
  double max_abs = 0.0;
  for (const auto& [x, y] : points)
    for (int t = 1; t <= h.cfg.problem.n_t; ++t)
      max_abs = std::max(
          max_abs,
          std::abs(surr.predict(ref.xi_truth, x, y, t * h.cfg.problem.dt()) -
                   ref.history.interp(t, x, y)));

  c.pass = err < tol && time_ok;
  c.detail = "relative L2 head error " + num(err) +
             " on 5 held-out fields (limit " + num(tol) +
             "); worst gauge error " + num(max_abs) +
             " vs 2.0 boundary span; built in " + num(secs) + " s" +
             (h.full ? "" : " (limit 300)");
}

void reference_inversion(Harness& h, CheckResult& c) {
  const TgnnSurrogate& surr = h.surrogate();
  const ReferenceCase& ref = h.reference();
  const RunReport& grad_report = h.full_report("gradient");
  const RunReport& ies_report = h.full_report("ies");
  const RunReport& train_report = h.full_report("training");
  const double prior_rmse = rmse(
      ref.lnK_cells, Eigen::VectorXd::Zero(h.cfg.problem.grid.cell_count()));

  const SurrogateForwardModel model(surr, ref.observations);
  const PriorSpec prior =
      PriorSpec::standard(model.n_param(), ref.observations.variances());
  const Eigen::VectorXd d_obs = ref.observations.values();
  Rng ens_rng = Rng(h.cfg.seed).substream("engine-gradient-ensemble");
  Rng probe = ens_rng;
  const Ensemble start =
      make_ensemble(model.n_param(), h.cfg.invert.ensemble_size, d_obs,
                    prior.c_d_diag, h.cfg.invert.lambda0, probe);
  std::vector<double> single_rmse;
  for (int j = 0; j < 5; ++j) {
    const InvertResult run = invert_gradient_single(
        model, d_obs, prior, h.cfg.invert, start.xi.col(j));
    single_rmse.push_back(
        rmse(ref.lnK_cells, surr.basis.evaluate_grid(run.xi_mean())));
  }
  const InvertResult ens_run =
      invert_gradient_ensemble(model, d_obs, prior, h.cfg.invert, ens_rng);
  const double ens_rmse =
      rmse(ref.lnK_cells, surr.basis.evaluate_grid(ens_run.xi_mean()));

  const bool ok_gradient = grad_report.iterations <= 7 &&
                           grad_report.rmse >= 0.4 && grad_report.rmse <= 1.0;
  const bool ok_ensemble =
      ens_rmse <= *std::min_element(single_rmse.begin(), single_rmse.end());
  const double mis_ratio =
      ies_report.mis_trace.empty()
          ? 0.0
          : ies_report.mis_trace.front() /
                std::max(1e-300, ies_report.mis_trace.back());
  const bool ok_ies = ies_report.iterations <= 10 &&
                      ies_report.rmse < prior_rmse && mis_ratio >= 10.0;
  const bool ok_training =
      train_report.rmse >= 0.4 && train_report.rmse <= 1.0;

  c.pass = ok_gradient && ok_ensemble && ok_ies && ok_training;
  c.detail = "damped single: rmse " + num(grad_report.rmse) + " in " +
             std::to_string(grad_report.iterations) +
             " iters (limits 0.4..1.0, 7); ensemble of 100: rmse " +
             num(ens_rmse) + " vs best of 5 singles " +
             num(*std::min_element(single_rmse.begin(), single_rmse.end())) +
             "; smoother: rmse " + num(ies_report.rmse) + " < prior " +
             num(prior_rmse) + " in " + std::to_string(ies_report.iterations) +
             " iters, mismatch shrank " + num(mis_ratio) +
             "x (limit 10x); coefficient fit: rmse " + num(train_report.rmse) +
             " (limits 0.4..1.0)";
}

void ensemble_size_trend(Harness& h, CheckResult& c) {
  ExperimentConfig cfg = h.cfg;
  cfg.out_dir = (std::filesystem::path(h.out_dir) / "sweep").string();
  std::filesystem::create_directories(cfg.out_dir);
  const std::vector<SweepRow> rows =
      run_ensemble_size_sweep(cfg, h.surrogate(), {10, 50, 100}, 10);
  save_sweep_csv(rows,
                 (std::filesystem::path(cfg.out_dir) / "ensemble_sweep.csv")
                     .string());

  double pooled = 0.0;
  for (const SweepRow& row : rows) pooled += row.rmse_std * row.rmse_std;
  pooled = std::sqrt(pooled / rows.size());
  bool ok = true;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    if (rows[i + 1].rmse_mean > rows[i].rmse_mean + pooled) ok = false;
    if (rows[i + 1].rmse_std > rows[i].rmse_std + pooled) ok = false;
  }
  c.pass = ok;
  std::ostringstream d;
  d << "mean/std rmse over 10 repeats:";
  for (const SweepRow& row : rows)
    d << " size " << row.size << ": " << num(row.rmse_mean) << "/"
      << num(row.rmse_std) << ";";
  d << " pooled std " << num(pooled)
    << " (both sequences non-increasing within it)";
  c.detail = d.str();
}

void prediction_split(Harness& h, CheckResult& c) {
  ExperimentConfig cfg = h.cfg;
  cfg.out_dir = (std::filesystem::path(h.out_dir) / "prediction").string();
  std::filesystem::create_directories(cfg.out_dir);

  bool ok = true;
  std::ostringstream d;
  for (const std::string method : {"gradient", "ies", "training"}) {
    const RunReport split =
        run_prediction_split(cfg, h.surrogate(), method, 30);
    const double full_rmse = h.full_report(method).rmse;
    const double match = split.metrics.at("match_median_abs_err");
    const double pred = split.metrics.at("pred_median_abs_err");
    const bool ok_m = split.rmse <= full_rmse + 0.2 && pred <= 2.0 * match;
    ok = ok && ok_m;
    d << method << ": rmse " << num(split.rmse) << " vs full "
      << num(full_rmse) << "+0.2, forecast median " << num(pred) << " vs 2x "
      << num(match) << (ok_m ? "; " : " [violated]; ");
  }
  c.pass = ok;
  c.detail = "30-of-50-step data: " + d.str() +
             "forecast window is steps 31..50 at the 5 gauges";
}

void geostatistics_benefit(Harness& h, CheckResult& c) {
  const ParamNet& pn = h.paramnet();
  const DirectSchedule schedule = h.direct_schedule();
  const Rng root(h.cfg.seed);
  const std::vector<std::pair<double, double>> points = observation_layout("5");

  int wins = 0;
  std::vector<double> gaps, geo_rmse, plain_rmse;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    Rng truth_rng = root.substream("direct-truth", s);
    const Eigen::VectorXd xi_truth =
        sample_xi(truth_rng, h.base().n_terms());
    const Eigen::VectorXd lnK = h.base().evaluate_grid(xi_truth);
    const HeadHistory hist = solve_flow(h.cfg.problem, lnK);
    Rng noise_rng = root.substream("direct-noise", s);
    ObservationSet obs =
        make_head_observations(hist, points, 1, h.cfg.problem.n_t,
                               h.cfg.noise_std, &noise_rng);
    append_logk_observations(obs, h.cfg.problem.grid, lnK, points,
                             h.cfg.logk_noise_std, &noise_rng);

    Rng geo_rng = root.substream("engine-tgnn-geo-seeded", s);
    const DirectResult geo =
        invert_tgnn_geo(h.cfg.problem, pn, obs, schedule, geo_rng);
    Rng plain_rng = root.substream("engine-pinn-no-geo-seeded", s);
    const DirectResult plain =
        invert_pinn_no_geo(h.cfg.problem, obs, schedule, plain_rng);

    const double eg = rmse(lnK, geo.lnK_cells);
    const double ep = rmse(lnK, plain.lnK_cells);
    geo_rmse.push_back(eg);
    plain_rmse.push_back(ep);
    gaps.push_back(ep - eg);
    if (eg < ep) ++wins;
  }

  c.pass = wins >= 2 && median(gaps) >= 0.2;
  c.detail = "frozen geostatistics net beats unconstrained net in " +
             std::to_string(wins) + "/3 seeds (need 2); median gap " +
             num(median(gaps)) + " (limit 0.2); medians " +
             num(median(geo_rmse)) + " vs " + num(median(plain_rmse)) +
             "; identical budgets, heads plus conductivity at 5 points";
}

void prior_mismatch_ordering(Harness& h, CheckResult& c) {
  const ParamNet& pn = h.paramnet();
  const DirectSchedule schedule = h.direct_schedule();
  const Rng root(h.cfg.seed);
  const std::vector<std::pair<double, double>> points = observation_layout("5");

  const auto run_variant = [&](const KleBasis& truth_basis,
                               const std::string& tag) {
    std::vector<double> errors;
    for (std::uint64_t s = 1; s <= 3; ++s) {
      Rng truth_rng = root.substream("variant-truth-" + tag, s);
      const Eigen::VectorXd xi_truth =
          sample_xi(truth_rng, truth_basis.n_terms());
      const Eigen::VectorXd lnK = truth_basis.evaluate_grid(xi_truth);
      const HeadHistory hist = solve_flow(h.cfg.problem, lnK);
      Rng noise_rng = root.substream("variant-noise-" + tag, s);
      ObservationSet obs =
          make_head_observations(hist, points, 1, h.cfg.problem.n_t,
                                 h.cfg.noise_std, &noise_rng);
      append_logk_observations(obs, h.cfg.problem.grid, lnK, points,
                               h.cfg.logk_noise_std, &noise_rng);
      Rng engine_rng = root.substream("engine-tgnn-geo-" + tag, s);
      const DirectResult result =
          invert_tgnn_geo(h.cfg.problem, pn, obs, schedule, engine_rng);
      errors.push_back(rmse(lnK, result.lnK_cells));
    }
    return errors;
  };

  const std::vector<double> low_var =
      run_variant(h.low_variance_basis(), "lowvar");
  const std::vector<double> short_corr =
      run_variant(h.short_correlation_basis(), "shortcorr");

  c.pass = median(low_var) < median(short_corr);
  c.detail = "median rmse over 3 seeds: halved-variance truth " +
             num(median(low_var)) + " < halved-correlation-length truth " +
             num(median(short_corr)) +
             "; estimation statistics kept at the base values in both";
}

#ifdef GWINV_CLI_PATH

int run_cli(const std::string& dir, const std::string& args,
            std::string* output) {
  const std::string capture =
      (std::filesystem::path(dir) / "capture.txt").string();
  const std::string cmd = std::string("\"") + GWINV_CLI_PATH + "\" " + args +
                          " >\"" + capture + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = read_text_file(capture);
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

std::map<std::string, std::string> snapshot(
    const std::vector<std::string>& paths) {
  std::map<std::string, std::string> bytes;
  for (const std::string& path : paths) bytes[path] = read_text_file(path);
  return bytes;
}

void rerun_reproducibility(Harness& h, CheckResult& c) {
  const std::filesystem::path dir = std::filesystem::path(h.out_dir) / "cli";
  std::filesystem::create_directories(dir);

  ExperimentConfig tiny;
  tiny.problem.grid = Grid{11, 11, 0.0, 0.0, 1020.0, 1020.0};
  tiny.problem.n_t = 5;
  tiny.n_terms = 3;
  tiny.out_dir = (dir / "tiny_out").string();
  tiny.seed = 7;
  const std::string tiny_ini = (dir / "tiny.ini").string();
  save_config(tiny, tiny_ini);

  const std::string basis_path = "acceptance_basis.txt";
  const std::string surr_path = (dir / "surrogate.txt").string();
  save_surrogate(h.surrogate(), surr_path, basis_path);
  ExperimentConfig invert_cfg = h.cfg;
  invert_cfg.out_dir = (dir / "invert_out").string();
  invert_cfg.surrogate_path = surr_path;
  const std::string invert_ini = (dir / "invert.ini").string();
  save_config(invert_cfg, invert_ini);

  struct Step {
    std::string args;
    std::vector<std::string> files;
  };
  const std::string field_path = (dir / "field.csv").string();
  const std::vector<Step> steps = {
      {"--config " + tiny_ini + " gen-field --out " + field_path,
       {field_path}},
      {"--config " + tiny_ini + " simulate",
       {tiny.out_dir + "/truth_field.csv", tiny.out_dir + "/heads.bin",
        tiny.out_dir + "/observations.csv"}},
      {"--config " + invert_ini + " invert --method training",
       {invert_cfg.out_dir + "/training_field.csv",
        invert_cfg.out_dir + "/truth_field.csv",
        invert_cfg.out_dir + "/training_mis.csv",
        invert_cfg.out_dir + "/training_report.json"}},
  };

  int files_checked = 0;
  for (const Step& step : steps) {
    std::string output;
    int code = run_cli(dir.string(), step.args, &output);
    if (code != 0) {
      c.pass = false;
      c.detail = "first run of '" + step.args + "' exited " +
                 std::to_string(code) + ": " + trim(output).substr(0, 200);
      return;
    }
    const std::map<std::string, std::string> first = snapshot(step.files);
    code = run_cli(dir.string(), step.args, &output);
    if (code != 0) {
      c.pass = false;
      c.detail = "second run of '" + step.args + "' exited " +
                 std::to_string(code);
      return;
    }
    for (const auto& [path, bytes] : first) {
      ++files_checked;
      if (read_text_file(path) != bytes) {
        c.pass = false;
        c.detail = "rerun of '" + step.args + "' changed " + path;
        return;
      }
    }
  }
  c.pass = true;
  c.detail = "3 command-line invocations repeated with identical config and "
             "seed; all " +
             std::to_string(files_checked) + " emitted files byte-identical";
}

#else

void rerun_reproducibility(Harness&, CheckResult& c) {
  c.pass = false;
  c.detail = "command-line binary not available in this build";
}

#endif  // GWINV_CLI_PATH

struct Entry {
  int id;
  const char* name;
  void (*fn)(Harness&, CheckResult&);
};

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"acceptance gate for the groundwater inversion toolkit"};
  std::string profile = "ci";
  app.add_option("--profile", profile, "Budget profile")
      ->check(CLI::IsMember({"ci", "full"}));
  std::string out_dir = "acceptance_out";
  app.add_option("--out", out_dir, "Artifact directory");
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria (1..11)");
  CLI11_PARSE(app, argc, argv);

  Harness harness;
  harness.full = profile == "full";
  harness.out_dir = out_dir;
  harness.cfg.out_dir =
      (std::filesystem::path(out_dir) / "reference").string();
  std::filesystem::create_directories(out_dir);

  const std::vector<Entry> entries = {
      {1, "solver-linearity", solver_linearity},
      {2, "field-spectrum", field_spectrum},
      {3, "derivative-checks", derivative_checks},
      {4, "linear-gaussian-update", linear_gaussian_update},
      {5, "surrogate-quality", surrogate_quality},
      {6, "reference-inversion", reference_inversion},
      {7, "ensemble-size-trend", ensemble_size_trend},
      {8, "prediction-split", prediction_split},
      {9, "geostatistics-benefit", geostatistics_benefit},
      {10, "prior-mismatch-ordering", prior_mismatch_ordering},
      {11, "rerun-reproducibility", rerun_reproducibility},
  };

  int failures = 0;
  int ran = 0;
  const double t0 = now_seconds();
  for (const Entry& entry : entries) {
    if (!only.empty() &&
        std::find(only.begin(), only.end(), entry.id) == only.end())
      continue;
    ++ran;
    CheckResult result;
    result.id = entry.id;
    result.name = entry.name;
    const double s0 = now_seconds();
    try {
      entry.fn(harness, result);
    } catch (const std::exception& e) {
      result.pass = false;
      result.detail = std::string("exception: ") + e.what();
    }
    std::cout << (result.pass ? "[PASS] " : "[FAIL] ") << result.id << " "
              << result.name << ": " << result.detail << " ["
              << num(now_seconds() - s0) << " s]\n"
              << std::flush;
    if (!result.pass) ++failures;
  }
  std::cout << "acceptance (" << profile << "): " << (ran - failures) << "/"
            << ran << " criteria passed, " << num(now_seconds() - t0)
            << " s total\n";
  return failures;
}
