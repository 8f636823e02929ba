#include "gwinv/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <utility>

#include "gwinv/common.hpp"

namespace gwinv {

namespace {

// Network input columns are (x, y, t, xi_1..xi_n).
Eigen::MatrixXd stack_inputs(const Eigen::MatrixXd& xyt,
                             const Eigen::MatrixXd& xi) {
  Eigen::MatrixXd inputs(xyt.rows() + xi.rows(), xyt.cols());
  inputs.topRows(xyt.rows()) = xyt;
  inputs.bottomRows(xi.rows()) = xi;
  return inputs;
}

// One evaluated physics batch: the tape plus the per-point residual and the
// conductivity factors needed to seed the reverse sweep.
struct PdeBatch {
  NetTape tape;
  Eigen::VectorXd r;   // residual
  Eigen::VectorXd k;   // K = exp(Y)
  Eigen::VectorXd yx;  // dY/dx
  Eigen::VectorXd yy;  // dY/dy

  PdeBatch(const Mlp& net, const KleBasis& basis, const Eigen::MatrixXd& xyt,
           const Eigen::MatrixXd& xi, double ss)
      : tape(net, stack_inputs(xyt, xi), {{0, 2}, {1, 2}, {2, 1}}) {
    const int b = static_cast<int>(xyt.cols());
    const int n = static_cast<int>(xi.rows());
    k.resize(b);
    yx.resize(b);
    yy.resize(b);
    Eigen::VectorXd phi(n), phix(n), phiy(n);
    for (int c = 0; c < b; ++c) {
      basis.mode_values(xyt(0, c), xyt(1, c), phi.data(), phix.data(),
                        phiy.data());
      const double y_val = basis.cov.mean + phi.dot(xi.col(c));
      k(c) = std::exp(y_val);
      yx(c) = phix.dot(xi.col(c));
      yy(c) = phiy.dot(xi.col(c));
    }
    const EvalResult& o = tape.out();
    r = ss * o.d1[2].row(0).transpose() -
        k.cwiseProduct(o.d2[0].row(0).transpose() +
                       o.d2[1].row(0).transpose()) -
        k.cwiseProduct(yx.cwiseProduct(o.d1[0].row(0).transpose()) +
                       yy.cwiseProduct(o.d1[1].row(0).transpose()));
  }

  // Adds d(scale * sum_i r_i^2)/d(theta) to grad via the tape.
  void backward(double scale, double ss, Eigen::VectorXd* grad) const {
    const Eigen::RowVectorXd g = (2.0 * scale) * r.transpose();
    NetTape::Seeds seeds;
    seeds.d1.resize(3);
    seeds.d2.resize(3);
    seeds.d1[0] = -g.cwiseProduct(k.cwiseProduct(yx).transpose());
    seeds.d1[1] = -g.cwiseProduct(k.cwiseProduct(yy).transpose());
    seeds.d1[2] = ss * g;
    seeds.d2[0] = -g.cwiseProduct(k.transpose());
    seeds.d2[1] = seeds.d2[0];
    tape.backward(seeds, grad, nullptr);
  }
};

// Walks a pool in shuffled order, reshuffling whenever it wraps. Keeps the
// rng call sequence deterministic across epochs.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, Rng* rng) : rng_(rng), order_(n) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_->shuffle(order_);
  }

  std::size_t pool_size() const { return order_.size(); }

  void next(std::size_t count, std::vector<std::size_t>* out) {
    out->clear();
    if (order_.empty()) return;
    while (out->size() < count) {
      if (cursor_ == order_.size()) {
        rng_->shuffle(order_);
        cursor_ = 0;
      }
      out->push_back(order_[cursor_++]);
    }
  }

 private:
  Rng* rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

Eigen::MatrixXd gather_cols(const Eigen::MatrixXd& m,
                            const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c)
    out.col(static_cast<Eigen::Index>(c)) =
        m.col(static_cast<Eigen::Index>(idx[c]));
  return out;
}

Eigen::VectorXd gather_rows(const Eigen::VectorXd& v,
                            const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c)
    out(static_cast<Eigen::Index>(c)) = v(static_cast<Eigen::Index>(idx[c]));
  return out;
}

// Value-only fit term: adds d(scale * sum_i (out_i - target_i)^2)/d(theta)
// and returns sum_i (out_i - target_i)^2.
double value_mse_backward(const Mlp& net, const Eigen::MatrixXd& inputs,
                          const Eigen::VectorXd& target, double scale,
                          Eigen::VectorXd* grad) {
  NetTape tape(net, inputs, {});
  Eigen::RowVectorXd err =
      tape.out().value.row(0) - target.transpose();
  NetTape::Seeds seeds;
  seeds.value = (2.0 * scale) * err;
  tape.backward(seeds, grad, nullptr);
  return err.squaredNorm();
}

// No-flow fit term on dh/dy: adds d(scale * sum_i (dh/dy_i)^2)/d(theta) and
// returns sum_i (dh/dy_i)^2.
double noflow_mse_backward(const Mlp& net, const Eigen::MatrixXd& inputs,
                           double scale, Eigen::VectorXd* grad) {
  NetTape tape(net, inputs, {{1, 1}});
  Eigen::RowVectorXd hy = tape.out().d1[0].row(0);
  NetTape::Seeds seeds;
  seeds.d1.resize(1);
  seeds.d1[0] = (2.0 * scale) * hy;
  tape.backward(seeds, grad, nullptr);
  return hy.squaredNorm();
}

}  // namespace

void LossWeights::validate() const {
  if (data < 0 || pde < 0 || bc < 0 || ic < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (data + pde + bc + ic <= 0)
    throw ConfigError("at least one loss weight must be positive");
}

void TgnnSurrogate::validate() const {
  problem.validate();
  if (basis.n_terms() < 1)
    throw ConfigError("surrogate: basis has no retained terms");
  if (net.spec.n_inputs != 3 + basis.n_terms())
    throw ConfigError("surrogate: network input width " +
                      std::to_string(net.spec.n_inputs) +
                      " does not match 3 + " +
                      std::to_string(basis.n_terms()) + " basis terms");
  if (net.spec.n_outputs != 1)
    throw ConfigError("surrogate: network must have one output");
}

double TgnnSurrogate::predict(const Eigen::VectorXd& xi, double x, double y,
                              double t) const {
  if (xi.size() != basis.n_terms())
    throw ConfigError("surrogate predict: xi length does not match basis");
  Eigen::VectorXd in(3 + xi.size());
  in(0) = x;
  in(1) = y;
  in(2) = t;
  in.tail(xi.size()) = xi;
  return net.forward(in)(0);
}

TrainingData generate_training_data(const FlowProblem& problem,
                                    const KleBasis& basis, int n_fields,
                                    Rng& rng, long long labels_per_field) {
  problem.validate();
  if (n_fields < 1)
    throw ConfigError("generate_training_data: n_fields must be >= 1");
  if (basis.grid != problem.grid)
    throw ConfigError("generate_training_data: basis grid differs from "
                      "problem grid");

  TrainingData data;
  data.xi.reserve(n_fields);
  data.heads.reserve(n_fields);
  for (int fidx = 0; fidx < n_fields; ++fidx) {
    Eigen::VectorXd xi = sample_xi(rng, basis.n_terms());
    data.heads.push_back(solve_flow(problem, basis.evaluate_grid(xi)));
    data.xi.push_back(std::move(xi));
  }

  const std::uint32_t cells =
      static_cast<std::uint32_t>(problem.grid.cell_count());
  const std::uint32_t nt = static_cast<std::uint32_t>(problem.n_t);
  if (labels_per_field > 0) {
    data.labels.reserve(static_cast<std::size_t>(labels_per_field) * n_fields);
    for (std::uint32_t fidx = 0; fidx < static_cast<std::uint32_t>(n_fields);
         ++fidx) {
      for (long long s = 0; s < labels_per_field; ++s) {
        const std::uint32_t cell =
            static_cast<std::uint32_t>(rng.uniform_index(cells));
        const std::uint32_t t =
            1 + static_cast<std::uint32_t>(rng.uniform_index(nt));
        data.labels.push_back({fidx, cell, t});
      }
    }
  } else {
    data.labels.reserve(static_cast<std::size_t>(n_fields) * cells * nt);
    for (std::uint32_t fidx = 0; fidx < static_cast<std::uint32_t>(n_fields);
         ++fidx)
      for (std::uint32_t t = 1; t <= nt; ++t)
        for (std::uint32_t cell = 0; cell < cells; ++cell)
          data.labels.push_back({fidx, cell, t});
  }
  return data;
}

CollocationSet sample_collocation(const FlowProblem& problem,
                                  const KleBasis& basis, int n_pde, int n_bc,
                                  int n_ic, Rng& rng) {
  problem.validate();
  if (n_pde < 0 || n_bc < 0 || n_ic < 0)
    throw ConfigError("sample_collocation: point counts must be >= 0");
  const Grid& g = problem.grid;
  const int n = basis.n_terms();
  const double x1 = g.x0 + g.lx;
  const double y1 = g.y0 + g.ly;

  CollocationSet set;
  set.pde_xyt.resize(3, n_pde);
  set.pde_xi.resize(n, n_pde);
  for (int c = 0; c < n_pde; ++c) {
    set.pde_xyt(2, c) = problem.t_end - rng.uniform(0.0, problem.t_end);
    set.pde_xyt(0, c) = rng.uniform(g.x0, x1);
    set.pde_xyt(1, c) = rng.uniform(g.y0, y1);
    for (int k = 0; k < n; ++k) set.pde_xi(k, c) = rng.normal();
  }

  const int n_bcd = n_bc / 2;
  const int n_bcn = n_bc - n_bcd;
  set.bcd_xyt.resize(3, n_bcd);
  set.bcd_xi.resize(n, n_bcd);
  set.bcd_value.resize(n_bcd);
  for (int c = 0; c < n_bcd; ++c) {
    const bool left = (c % 2 == 0);
    set.bcd_xyt(2, c) = problem.t_end - rng.uniform(0.0, problem.t_end);
    set.bcd_xyt(0, c) = left ? g.x0 : x1;
    set.bcd_xyt(1, c) = rng.uniform(g.y0, y1);
    set.bcd_value(c) = left ? problem.h_left : problem.h_right;
    for (int k = 0; k < n; ++k) set.bcd_xi(k, c) = rng.normal();
  }
  set.bcn_xyt.resize(3, n_bcn);
  set.bcn_xi.resize(n, n_bcn);
  for (int c = 0; c < n_bcn; ++c) {
    const bool bottom = (c % 2 == 0);
    set.bcn_xyt(2, c) = problem.t_end - rng.uniform(0.0, problem.t_end);
    set.bcn_xyt(0, c) = rng.uniform(g.x0, x1);
    set.bcn_xyt(1, c) = bottom ? g.y0 : y1;
    for (int k = 0; k < n; ++k) set.bcn_xi(k, c) = rng.normal();
  }

  set.ic_xyt.resize(3, n_ic);
  set.ic_xi.resize(n, n_ic);
  set.ic_value.resize(n_ic);
  for (int c = 0; c < n_ic; ++c) {
    set.ic_xyt(0, c) = rng.uniform(g.x0, x1);
    set.ic_xyt(1, c) = rng.uniform(g.y0, y1);
    set.ic_xyt(2, c) = 0.0;
    set.ic_value(c) = problem.h_init;
    for (int k = 0; k < n; ++k) set.ic_xi(k, c) = rng.normal();
  }
  return set;
}

double pde_residual(const Mlp& net, const KleBasis& basis, double x, double y,
                    double t, const Eigen::VectorXd& xi, double ss) {
  if (xi.size() != basis.n_terms())
    throw ConfigError("pde_residual: xi length does not match basis");
  Eigen::MatrixXd xyt(3, 1);
  xyt << x, y, t;
  PdeBatch batch(net, basis, xyt, xi, ss);
  return batch.r(0);
}

TgnnSurrogate train_surrogate(const FlowProblem& problem, const KleBasis& basis,
                              const CollocationSet& colloc,
                              const TrainingData& data,
                              const LossWeights& weights,
                              const TrainSchedule& schedule, Rng& rng) {
  problem.validate();
  weights.validate();
  if (schedule.epochs < 1)
    throw ConfigError("train_surrogate: epochs must be >= 1");
  if (schedule.batch_pde < 1 || schedule.batch_data < 1 ||
      schedule.batch_bc < 1 || schedule.batch_ic < 1)
    throw ConfigError("train_surrogate: batch sizes must be >= 1");

  const int n = basis.n_terms();
  const std::size_t n_pde = static_cast<std::size_t>(colloc.n_pde());
  const std::size_t n_data = data.n_labels();
  const std::size_t n_bcd = static_cast<std::size_t>(colloc.bcd_xyt.cols());
  const std::size_t n_bcn = static_cast<std::size_t>(colloc.bcn_xyt.cols());
  const std::size_t n_ic = static_cast<std::size_t>(colloc.n_ic());
  if (n_pde + n_data + n_bcd + n_bcn + n_ic == 0)
    throw ConfigError("train_surrogate: no training points of any category");

  Mlp net = Mlp::create({3 + n, schedule.hidden, 1});
  const Grid& g = problem.grid;
  net.normalize_input(0, g.x0, g.x0 + g.lx);
  net.normalize_input(1, g.y0, g.y0 + g.ly);
  net.normalize_input(2, 0.0, problem.t_end);
  net.out_shift = 0.5 * (problem.h_left + problem.h_right);
  net.out_scale = std::max(0.5 * std::abs(problem.h_left - problem.h_right),
                           1.0);
  net.init_glorot(rng);

  const bool use_pde = weights.pde > 0 && n_pde > 0;
  const bool use_data = weights.data > 0 && n_data > 0;
  const bool use_bcd = weights.bc > 0 && n_bcd > 0;
  const bool use_bcn = weights.bc > 0 && n_bcn > 0;
  const bool use_ic = weights.ic > 0 && n_ic > 0;

  // The PDE pool defines the epoch length; with no PDE points the largest
  // remaining pool does.
  auto steps_for = [](std::size_t pool, int batch) {
    return (pool + static_cast<std::size_t>(batch) - 1) /
           static_cast<std::size_t>(batch);
  };
  std::size_t steps_per_epoch = 0;
  if (use_pde) {
    steps_per_epoch = steps_for(n_pde, schedule.batch_pde);
  } else {
    if (use_data)
      steps_per_epoch = std::max(steps_per_epoch,
                                 steps_for(n_data, schedule.batch_data));
    if (use_bcd || use_bcn)
      steps_per_epoch = std::max(steps_per_epoch,
                                 steps_for(n_bcd + n_bcn, schedule.batch_bc));
    if (use_ic)
      steps_per_epoch = std::max(steps_per_epoch,
                                 steps_for(n_ic, schedule.batch_ic));
  }
  if (steps_per_epoch == 0)
    throw ConfigError("train_surrogate: active loss terms have no points");

  // Split the boundary batch between the two condition types in proportion
  // to their pool sizes.
  std::size_t batch_bcd = 0, batch_bcn = 0;
  if (use_bcd || use_bcn) {
    const std::size_t total = n_bcd + n_bcn;
    batch_bcd = use_bcd
        ? std::max<std::size_t>(1, schedule.batch_bc * n_bcd / total)
        : 0;
    batch_bcn = use_bcn
        ? std::max<std::size_t>(1, schedule.batch_bc * n_bcn / total)
        : 0;
  }

  std::vector<std::size_t> pde_order(n_pde);
  std::iota(pde_order.begin(), pde_order.end(), std::size_t{0});
  BatchCycler data_cyc(use_data ? n_data : 0, &rng);
  BatchCycler bcd_cyc(use_bcd ? n_bcd : 0, &rng);
  BatchCycler bcn_cyc(use_bcn ? n_bcn : 0, &rng);
  BatchCycler ic_cyc(use_ic ? n_ic : 0, &rng);

  Eigen::VectorXd theta = net.params();
  AdamState adam(schedule.lr, net.n_params());
  Eigen::VectorXd grad(net.n_params());
  std::vector<std::size_t> idx;
  std::vector<LossCurvePoint> curve;

  Eigen::MatrixXd data_inputs(3 + n, schedule.batch_data);
  Eigen::VectorXd data_target(schedule.batch_data);

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    if (use_pde) rng.shuffle(pde_order);
    double sum_pde = 0.0, sum_data = 0.0, sum_bc = 0.0, sum_ic = 0.0;

    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      grad.setZero();
      double mse_pde = 0.0, mse_data = 0.0, mse_bc = 0.0, mse_ic = 0.0;

      if (use_pde) {
        const std::size_t lo = step * schedule.batch_pde;
        const std::size_t hi =
            std::min(n_pde, lo + static_cast<std::size_t>(schedule.batch_pde));
        idx.assign(pde_order.begin() + static_cast<std::ptrdiff_t>(lo),
                   pde_order.begin() + static_cast<std::ptrdiff_t>(hi));
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        PdeBatch batch(net, basis, gather_cols(colloc.pde_xyt, idx),
                       gather_cols(colloc.pde_xi, idx), problem.ss);
        mse_pde = batch.r.squaredNorm() * inv_b;
        batch.backward(weights.pde * inv_b, problem.ss, &grad);
      }

      if (use_data) {
        data_cyc.next(static_cast<std::size_t>(schedule.batch_data), &idx);
        const Eigen::Index b = static_cast<Eigen::Index>(idx.size());
        for (Eigen::Index c = 0; c < b; ++c) {
          const TrainingData::Label& lab = data.labels[idx[c]];
          const int i = static_cast<int>(lab.cell) % g.nx;
          const int j = static_cast<int>(lab.cell) / g.nx;
          data_inputs(0, c) = g.xc(i);
          data_inputs(1, c) = g.yc(j);
          data_inputs(2, c) = lab.t * problem.dt();
          data_inputs.col(c).tail(n) = data.xi[lab.field];
          data_target(c) = data.heads[lab.field].h(lab.t, lab.cell);
        }
        const double inv_b = 1.0 / static_cast<double>(b);
        mse_data = value_mse_backward(net, data_inputs.leftCols(b),
                                      data_target.head(b),
                                      weights.data * inv_b, &grad) * inv_b;
      }

      if (use_bcd || use_bcn) {
        double sq = 0.0;
        std::size_t count = 0;
        std::vector<std::size_t> idx_n;
        if (use_bcd) {
          bcd_cyc.next(batch_bcd, &idx);
          count += idx.size();
        }
        if (use_bcn) {
          bcn_cyc.next(batch_bcn, &idx_n);
          count += idx_n.size();
        }
        const double inv_b = 1.0 / static_cast<double>(count);
        if (use_bcd && !idx.empty())
          sq += value_mse_backward(net, stack_inputs(
                                       gather_cols(colloc.bcd_xyt, idx),
                                       gather_cols(colloc.bcd_xi, idx)),
                                   gather_rows(colloc.bcd_value, idx),
                                   weights.bc * inv_b, &grad);
        if (use_bcn && !idx_n.empty())
          sq += noflow_mse_backward(net, stack_inputs(
                                        gather_cols(colloc.bcn_xyt, idx_n),
                                        gather_cols(colloc.bcn_xi, idx_n)),
                                    weights.bc * inv_b, &grad);
        mse_bc = sq * inv_b;
      }

      if (use_ic) {
        ic_cyc.next(static_cast<std::size_t>(schedule.batch_ic), &idx);
        const double inv_b = 1.0 / static_cast<double>(idx.size());
        mse_ic = value_mse_backward(net, stack_inputs(
                                        gather_cols(colloc.ic_xyt, idx),
                                        gather_cols(colloc.ic_xi, idx)),
                                    gather_rows(colloc.ic_value, idx),
                                    weights.ic * inv_b, &grad) * inv_b;
      }

      adam_step(adam, theta, grad);
      net.set_params(theta);
      sum_pde += mse_pde;
      sum_data += mse_data;
      sum_bc += mse_bc;
      sum_ic += mse_ic;
    }

    LossCurvePoint point;
    point.epoch = epoch + 1;
    const double inv_s = 1.0 / static_cast<double>(steps_per_epoch);
    point.mse_data = sum_data * inv_s;
    point.mse_pde = sum_pde * inv_s;
    point.mse_bc = sum_bc * inv_s;
    point.mse_ic = sum_ic * inv_s;
    point.total = weights.data * point.mse_data + weights.pde * point.mse_pde +
                  weights.bc * point.mse_bc + weights.ic * point.mse_ic;
    if (!std::isfinite(point.total))
      throw NumericError("train_surrogate: loss diverged at epoch " +
                         std::to_string(point.epoch));
    if (schedule.log_every > 0 && ((epoch + 1) % schedule.log_every == 0 ||
                                   epoch + 1 == schedule.epochs))
      curve.push_back(point);
  }

  TgnnSurrogate surr{std::move(net), basis, problem, std::move(curve)};
  surr.validate();
  return surr;
}

namespace {

// Head-record network inputs in record order.
Eigen::MatrixXd head_inputs(const TgnnSurrogate& surr,
                            const Eigen::VectorXd& xi,
                            const ObservationSet& set) {
  if (xi.size() != surr.basis.n_terms())
    throw ConfigError("surrogate: xi length does not match basis");
  const int nh = set.count(ObsKind::head);
  Eigen::MatrixXd inputs(3 + xi.size(), nh);
  int c = 0;
  for (const ObsRecord& rec : set.records) {
    if (rec.kind != ObsKind::head) continue;
    inputs(0, c) = rec.x;
    inputs(1, c) = rec.y;
    inputs(2, c) = rec.t_index * surr.problem.dt();
    inputs.col(c).tail(xi.size()) = xi;
    ++c;
  }
  return inputs;
}

}  // namespace

Eigen::VectorXd predict_obs(const TgnnSurrogate& surr, const Eigen::VectorXd& xi,
                            const ObservationSet& set) {
  const Eigen::MatrixXd inputs = head_inputs(surr, xi, set);
  return surr.net.forward(inputs).row(0).transpose();
}

Eigen::MatrixXd sensitivity(const TgnnSurrogate& surr, const Eigen::VectorXd& xi,
                            const ObservationSet& set) {
  const Eigen::MatrixXd inputs = head_inputs(surr, xi, set);
  const int nh = static_cast<int>(inputs.cols());
  NetTape tape(surr.net, inputs, {});
  NetTape::Seeds seeds;
  seeds.value = Eigen::MatrixXd::Ones(1, nh);
  Eigen::MatrixXd grad_in = Eigen::MatrixXd::Zero(inputs.rows(), nh);
  tape.backward(seeds, nullptr, &grad_in);
  return grad_in.bottomRows(surr.basis.n_terms()).transpose();
}

double validation_error(const TgnnSurrogate& surr,
                        const std::vector<Eigen::VectorXd>& xi_heldout) {
  if (xi_heldout.empty())
    throw ConfigError("validation_error: no held-out fields");
  const Grid& g = surr.problem.grid;
  const int cells = g.cell_count();
  const int n = surr.basis.n_terms();

  Eigen::MatrixXd inputs(3 + n, cells);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int c = g.index(i, j);
      inputs(0, c) = g.xc(i);
      inputs(1, c) = g.yc(j);
    }

  double num2 = 0.0, den2 = 0.0;
  for (const Eigen::VectorXd& xi : xi_heldout) {
    const HeadHistory truth =
        solve_flow(surr.problem, surr.basis.evaluate_grid(xi));
    inputs.bottomRows(n).colwise() = xi;
    for (int t = 1; t <= surr.problem.n_t; ++t) {
      inputs.row(2).setConstant(t * surr.problem.dt());
      const Eigen::RowVectorXd pred = surr.net.forward(inputs).row(0);
      num2 += (pred - truth.h.row(t)).squaredNorm();
      den2 += truth.h.row(t).squaredNorm();
    }
  }
  if (den2 <= 0) throw NumericError("validation_error: zero reference norm");
  return std::sqrt(num2 / den2);
}

void save_surrogate(const TgnnSurrogate& surr, const std::string& path,
                    const std::string& basis_path) {
  surr.validate();
  const std::filesystem::path ckpt(path);
  std::filesystem::path bp(basis_path);
  if (!bp.is_absolute() && ckpt.has_parent_path())
    bp = ckpt.parent_path() / bp;
  save_kle(surr.basis, bp.string());
  const std::uint64_t hash = fnv1a64(read_text_file(bp.string()));

  const FlowProblem& p = surr.problem;
  std::ostringstream out;
  out << "gwinv-surrogate 1\n";
  out << "problem " << p.grid.nx << " " << p.grid.ny << " "
      << fmt17(p.grid.x0) << " " << fmt17(p.grid.y0) << " "
      << fmt17(p.grid.lx) << " " << fmt17(p.grid.ly) << " " << fmt17(p.ss)
      << " " << fmt17(p.t_end) << " " << p.n_t << " " << fmt17(p.h_left)
      << " " << fmt17(p.h_right) << " " << fmt17(p.h_init) << "\n";
  out << "basis " << hex64(hash) << " " << basis_path << "\n";
  out << net_to_string(surr.net);
  write_text_file(path, out.str());
}

TgnnSurrogate load_surrogate(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "gwinv-surrogate 1")
    throw IoError("not a gwinv-surrogate v1 file: " + path);

  if (!std::getline(in, line))
    throw IoError("surrogate file truncated: " + path);
  std::istringstream pl(line);
  std::string tok;
  FlowProblem p;
  pl >> tok >> p.grid.nx >> p.grid.ny >> p.grid.x0 >> p.grid.y0 >> p.grid.lx >>
      p.grid.ly >> p.ss >> p.t_end >> p.n_t >> p.h_left >> p.h_right >>
      p.h_init;
  if (tok != "problem" || !pl)
    throw IoError("surrogate file: bad problem line");

  if (!std::getline(in, line))
    throw IoError("surrogate file truncated: " + path);
  std::istringstream bl(line);
  std::string hash_text;
  bl >> tok >> hash_text;
  if (tok != "basis" || !bl)
    throw IoError("surrogate file: bad basis line");
  std::string basis_ref;
  std::getline(bl, basis_ref);
  basis_ref = trim(basis_ref);
  if (basis_ref.empty())
    throw IoError("surrogate file: empty basis reference");

  const std::filesystem::path ckpt(path);
  std::filesystem::path bp(basis_ref);
  if (!bp.is_absolute() && ckpt.has_parent_path())
    bp = ckpt.parent_path() / bp;
  if (!std::filesystem::exists(bp))
    throw IoError("surrogate basis file missing: " + bp.string());
  const std::string basis_bytes = read_text_file(bp.string());
  if (hex64(fnv1a64(basis_bytes)) != hash_text)
    throw IoError("surrogate basis hash mismatch: " + bp.string());

  if (!in || in.tellg() < 0)
    throw IoError("surrogate file truncated: " + path);
  std::string net_text(text, static_cast<std::size_t>(in.tellg()));
  TgnnSurrogate surr{net_from_string(net_text), load_kle(bp.string()), p, {}};
  surr.validate();
  return surr;
}

void save_loss_curve_csv(const std::vector<LossCurvePoint>& curve,
                         const std::string& path) {
  std::ostringstream out;
  out << "epoch,mse_data,mse_pde,mse_bc,mse_ic,total\n";
  for (const LossCurvePoint& p : curve)
    out << p.epoch << "," << fmt17(p.mse_data) << "," << fmt17(p.mse_pde)
        << "," << fmt17(p.mse_bc) << "," << fmt17(p.mse_ic) << ","
        << fmt17(p.total) << "\n";
  write_text_file(path, out.str());
}

}  // namespace gwinv
