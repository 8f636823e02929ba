#include "gwinv/direct.hpp"

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

// Inputs of the conductivity side: (x, y) for the unconstrained net, with the
// shared coefficient column appended for the geostatistics net.
Eigen::MatrixXd k_inputs(const Eigen::MatrixXd& xy, const Eigen::VectorXd& xi) {
  Eigen::MatrixXd inputs(2 + xi.size(), xy.cols());
  inputs.topRows(2) = xy;
  if (xi.size() > 0) inputs.bottomRows(xi.size()).colwise() = xi;
  return inputs;
}

Eigen::MatrixXd cell_centers(const Grid& g) {
  Eigen::MatrixXd xy(2, g.cell_count());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int c = g.index(i, j);
      xy(0, c) = g.xc(i);
      xy(1, c) = g.yc(j);
    }
  return xy;
}

}  // namespace

Eigen::VectorXd ParamNet::evaluate_grid(const Eigen::VectorXd& xi) const {
  if (xi.size() != basis.n_terms())
    throw ConfigError("param net: xi length does not match basis");
  const Eigen::MatrixXd inputs = k_inputs(cell_centers(basis.grid), xi);
  return net.forward(inputs).row(0).transpose();
}

ParamNet pretrain_param_net(const KleBasis& basis,
                            const ParamNetSchedule& schedule, Rng& rng) {
  if (schedule.n_realizations < 1)
    throw ConfigError("pretrain_param_net: n_realizations must be >= 1");
  if (schedule.epochs < 1 || schedule.batch < 1)
    throw ConfigError("pretrain_param_net: epochs and batch must be >= 1");
  if (schedule.n_heldout < 0)
    throw ConfigError("pretrain_param_net: n_heldout must be >= 0");

  const int n = basis.n_terms();
  const Grid& g = basis.grid;
  const std::uint32_t cells = static_cast<std::uint32_t>(g.cell_count());

  std::vector<Eigen::VectorXd> xi_train(schedule.n_realizations);
  std::vector<Eigen::VectorXd> field_train(schedule.n_realizations);
  for (int f = 0; f < schedule.n_realizations; ++f) {
    xi_train[f] = sample_xi(rng, n);
    field_train[f] = basis.evaluate_grid(xi_train[f]);
  }
  std::vector<Eigen::VectorXd> xi_held(schedule.n_heldout);
  for (int f = 0; f < schedule.n_heldout; ++f) xi_held[f] = sample_xi(rng, n);

  struct Sample {
    std::uint32_t field;
    std::uint32_t cell;
  };
  std::vector<Sample> pool;
  if (schedule.samples_per_field > 0) {
    pool.reserve(static_cast<std::size_t>(schedule.samples_per_field) *
                 schedule.n_realizations);
    for (std::uint32_t f = 0;
         f < static_cast<std::uint32_t>(schedule.n_realizations); ++f)
      for (long long s = 0; s < schedule.samples_per_field; ++s)
        pool.push_back({f, static_cast<std::uint32_t>(rng.uniform_index(cells))});
  } else {
    pool.reserve(static_cast<std::size_t>(schedule.n_realizations) * cells);
    for (std::uint32_t f = 0;
         f < static_cast<std::uint32_t>(schedule.n_realizations); ++f)
      for (std::uint32_t c = 0; c < cells; ++c) pool.push_back({f, c});
  }

  Mlp net = Mlp::create({2 + n, schedule.hidden, 1});
  net.normalize_input(0, g.x0, g.x0 + g.lx);
  net.normalize_input(1, g.y0, g.y0 + g.ly);
  net.out_shift = basis.cov.mean;
  net.out_scale = std::max(std::sqrt(basis.cov.variance), 1e-12);
  net.init_glorot(rng);

  Eigen::VectorXd theta = net.params();
  AdamState adam(schedule.lr, net.n_params());
  Eigen::VectorXd grad(net.n_params());
  const std::size_t batch = static_cast<std::size_t>(schedule.batch);
  const std::size_t steps = (pool.size() + batch - 1) / batch;
  Eigen::MatrixXd inputs(2 + n, schedule.batch);
  Eigen::VectorXd target(schedule.batch);

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    rng.shuffle(pool);
    double epoch_sq = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t lo = step * batch;
      const Eigen::Index b =
          static_cast<Eigen::Index>(std::min(batch, pool.size() - lo));
      for (Eigen::Index c = 0; c < b; ++c) {
        const Sample& s = pool[lo + static_cast<std::size_t>(c)];
        const int i = static_cast<int>(s.cell) % g.nx;
        const int j = static_cast<int>(s.cell) / g.nx;
        inputs(0, c) = g.xc(i);
        inputs(1, c) = g.yc(j);
        inputs.col(c).tail(n) = xi_train[s.field];
        target(c) = field_train[s.field](s.cell);
      }
      NetTape tape(net, inputs.leftCols(b), {});
      const Eigen::RowVectorXd err =
          tape.out().value.row(0) - target.head(b).transpose();
      grad.setZero();
      NetTape::Seeds seeds;
      seeds.value = (2.0 / static_cast<double>(b)) * err;
      tape.backward(seeds, &grad, nullptr);
      adam_step(adam, theta, grad);
      net.set_params(theta);
      epoch_sq += err.squaredNorm() / static_cast<double>(b);
    }
    if (!std::isfinite(epoch_sq))
      throw NumericError("pretrain_param_net: loss diverged at epoch " +
                         std::to_string(epoch + 1));
  }

  ParamNet pn{std::move(net), basis, 0.0};
  if (!xi_held.empty()) {
    double sq = 0.0;
    for (const Eigen::VectorXd& xi : xi_held) {
      const Eigen::VectorXd pred = pn.evaluate_grid(xi);
      sq += (pred - basis.evaluate_grid(xi)).squaredNorm();
    }
    pn.heldout_rmse = std::sqrt(
        sq / (static_cast<double>(xi_held.size()) * cells));
  }
  return pn;
}

void save_param_net(const ParamNet& pn, const std::string& path,
                    const std::string& basis_path) {
  const std::filesystem::path ckpt(path);
  std::filesystem::path bp(basis_path);
  if (!bp.is_absolute() && ckpt.has_parent_path())
    bp = ckpt.parent_path() / bp;
  save_kle(pn.basis, bp.string());
  const std::uint64_t hash = fnv1a64(read_text_file(bp.string()));

  std::ostringstream out;
  out << "gwinv-paramnet 1\n";
  out << "heldout " << fmt17(pn.heldout_rmse) << "\n";
  out << "basis " << hex64(hash) << " " << basis_path << "\n";
  out << net_to_string(pn.net);
  write_text_file(path, out.str());
}

ParamNet load_param_net(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "gwinv-paramnet 1")
    throw IoError("not a gwinv-paramnet v1 file: " + path);

  if (!std::getline(in, line))
    throw IoError("paramnet file truncated: " + path);
  std::istringstream hl(line);
  std::string tok;
  double heldout = 0.0;
  hl >> tok >> heldout;
  if (tok != "heldout" || !hl)
    throw IoError("paramnet file: bad heldout line");

  if (!std::getline(in, line))
    throw IoError("paramnet file truncated: " + path);
  std::istringstream bl(line);
  std::string hash_text;
  bl >> tok >> hash_text;
  if (tok != "basis" || !bl) throw IoError("paramnet file: bad basis line");
  std::string basis_ref;
  std::getline(bl, basis_ref);
  basis_ref = trim(basis_ref);
  if (basis_ref.empty()) throw IoError("paramnet file: empty basis reference");

  const std::filesystem::path ckpt(path);
  std::filesystem::path bp(basis_ref);
  if (!bp.is_absolute() && ckpt.has_parent_path())
    bp = ckpt.parent_path() / bp;
  if (!std::filesystem::exists(bp))
    throw IoError("paramnet basis file missing: " + bp.string());
  if (hex64(fnv1a64(read_text_file(bp.string()))) != hash_text)
    throw IoError("paramnet basis hash mismatch: " + bp.string());

  if (!in || in.tellg() < 0)
    throw IoError("paramnet file truncated: " + path);
  const std::string net_text(text, static_cast<std::size_t>(in.tellg()));
  ParamNet pn{net_from_string(net_text), load_kle(bp.string()), heldout};
  if (pn.net.spec.n_inputs != 2 + pn.basis.n_terms())
    throw IoError("paramnet file: network width does not match basis");
  return pn;
}

namespace {

// Point sets of the direct losses. Unlike the surrogate sets these carry no
// coefficient inputs; the conductivity side supplies its own.
struct DirectPoints {
  Eigen::MatrixXd f_xyt;
  Eigen::MatrixXd bcd_xyt;
  Eigen::VectorXd bcd_value;
  Eigen::MatrixXd bcn_xyt;
  Eigen::MatrixXd ic_xyt;
  Eigen::VectorXd ic_value;
  Eigen::MatrixXd hobs_xyt;
  Eigen::VectorXd hobs_value;
  Eigen::MatrixXd kobs_xy;
  Eigen::VectorXd kobs_value;
};

DirectPoints sample_direct_points(const FlowProblem& problem,
                                  const ObservationSet& observations,
                                  const DirectSchedule& schedule, Rng& rng) {
  const Grid& g = problem.grid;
  const double x1 = g.x0 + g.lx;
  const double y1 = g.y0 + g.ly;
  DirectPoints pts;

  pts.f_xyt.resize(3, schedule.n_f);
  for (int c = 0; c < schedule.n_f; ++c) {
    pts.f_xyt(2, c) = problem.t_end - rng.uniform(0.0, problem.t_end);
    pts.f_xyt(0, c) = rng.uniform(g.x0, x1);
    pts.f_xyt(1, c) = rng.uniform(g.y0, y1);
  }

  const int n_bcd = schedule.n_b / 2;
  const int n_bcn = schedule.n_b - n_bcd;
  pts.bcd_xyt.resize(3, n_bcd);
  pts.bcd_value.resize(n_bcd);
  for (int c = 0; c < n_bcd; ++c) {
    const bool left = (c % 2 == 0);
    pts.bcd_xyt(2, c) = problem.t_end - rng.uniform(0.0, problem.t_end);
    pts.bcd_xyt(0, c) = left ? g.x0 : x1;
    pts.bcd_xyt(1, c) = rng.uniform(g.y0, y1);
    pts.bcd_value(c) = left ? problem.h_left : problem.h_right;
  }
  pts.bcn_xyt.resize(3, n_bcn);
  for (int c = 0; c < n_bcn; ++c) {
    const bool bottom = (c % 2 == 0);
    pts.bcn_xyt(2, c) = problem.t_end - rng.uniform(0.0, problem.t_end);
    pts.bcn_xyt(0, c) = rng.uniform(g.x0, x1);
    pts.bcn_xyt(1, c) = bottom ? g.y0 : y1;
  }

  pts.ic_xyt.resize(3, schedule.n_i);
  pts.ic_value.resize(schedule.n_i);
  for (int c = 0; c < schedule.n_i; ++c) {
    pts.ic_xyt(0, c) = rng.uniform(g.x0, x1);
    pts.ic_xyt(1, c) = rng.uniform(g.y0, y1);
    pts.ic_xyt(2, c) = 0.0;
    pts.ic_value(c) = problem.h_init;
  }

  const int nh = observations.count(ObsKind::head);
  const int nk = observations.size() - nh;
  pts.hobs_xyt.resize(3, nh);
  pts.hobs_value.resize(nh);
  pts.kobs_xy.resize(2, nk);
  pts.kobs_value.resize(nk);
  int hc = 0, kc = 0;
  for (const ObsRecord& rec : observations.records) {
    if (rec.kind == ObsKind::head) {
      pts.hobs_xyt(0, hc) = rec.x;
      pts.hobs_xyt(1, hc) = rec.y;
      pts.hobs_xyt(2, hc) = rec.t_index * problem.dt();
      pts.hobs_value(hc) = rec.value;
      ++hc;
    } else {
      pts.kobs_xy(0, kc) = rec.x;
      pts.kobs_xy(1, kc) = rec.y;
      pts.kobs_value(kc) = rec.value;
      ++kc;
    }
  }
  return pts;
}

// One evaluated physics batch of the direct loss: both tapes plus the
// residual factors needed for the reverse sweeps.
struct DirectPdeBatch {
  NetTape htape;
  NetTape ktape;
  Eigen::RowVectorXd r, k, yx, yy, hx, hy, ht;

  DirectPdeBatch(const Mlp& h_net, const Mlp& k_net,
                 const Eigen::MatrixXd& xyt, const Eigen::VectorXd& xi,
                 double ss)
      : htape(h_net, xyt, {{0, 2}, {1, 2}, {2, 1}}),
        ktape(k_net, k_inputs(xyt.topRows(2), xi), {{0, 1}, {1, 1}}) {
    const EvalResult& ho = htape.out();
    const EvalResult& ko = ktape.out();
    k = ko.value.row(0).array().exp().matrix();
    yx = ko.d1[0].row(0);
    yy = ko.d1[1].row(0);
    hx = ho.d1[0].row(0);
    hy = ho.d1[1].row(0);
    ht = ho.d1[2].row(0);
    r = ss * ht - k.cwiseProduct(ho.d2[0].row(0) + ho.d2[1].row(0)) -
        k.cwiseProduct(yx.cwiseProduct(hx) + yy.cwiseProduct(hy));
  }

  // Adds d(scale * sum_i r_i^2)/d(head params) to grad_h and the same for the
  // conductivity side: into grad_k when it is trainable, and into grad_xi via
  // the shared coefficient inputs when the conductivity net is frozen.
  void backward(double scale, double ss, Eigen::VectorXd* grad_h,
                Eigen::VectorXd* grad_k, Eigen::VectorXd* grad_xi) const {
    const Eigen::RowVectorXd g = (2.0 * scale) * r;
    NetTape::Seeds hseeds;
    hseeds.d1.resize(3);
    hseeds.d2.resize(3);
    hseeds.d1[0] = -g.cwiseProduct(k.cwiseProduct(yx));
    hseeds.d1[1] = -g.cwiseProduct(k.cwiseProduct(yy));
    hseeds.d1[2] = ss * g;
    hseeds.d2[0] = -g.cwiseProduct(k);
    hseeds.d2[1] = hseeds.d2[0];
    htape.backward(hseeds, grad_h, nullptr);

    NetTape::Seeds kseeds;
    kseeds.d1.resize(2);
    kseeds.value = g.cwiseProduct(r - ss * ht);
    kseeds.d1[0] = -g.cwiseProduct(k.cwiseProduct(hx));
    kseeds.d1[1] = -g.cwiseProduct(k.cwiseProduct(hy));
    if (grad_k != nullptr) {
      ktape.backward(kseeds, grad_k, nullptr);
    } else if (grad_xi != nullptr) {
      const Eigen::Index n_in = 2 + grad_xi->size();
      Eigen::MatrixXd grad_in = Eigen::MatrixXd::Zero(n_in, r.size());
      ktape.backward(kseeds, nullptr, &grad_in);
      *grad_xi += grad_in.bottomRows(grad_xi->size()).rowwise().sum();
    }
  }
};

// Value-fit term: adds d(scale * sum (out - target)^2)/d(params) and returns
// the mean squared misfit.
double direct_value_term(const Mlp& net, const Eigen::MatrixXd& inputs,
                         const Eigen::VectorXd& target, double denom,
                         Eigen::VectorXd* grad_params,
                         Eigen::VectorXd* grad_xi) {
  if (inputs.cols() == 0) return 0.0;
  NetTape tape(net, inputs, {});
  const Eigen::RowVectorXd err =
      tape.out().value.row(0) - target.transpose();
  NetTape::Seeds seeds;
  seeds.value = (2.0 / denom) * err;
  if (grad_params != nullptr) {
    tape.backward(seeds, grad_params, nullptr);
  } else if (grad_xi != nullptr) {
    Eigen::MatrixXd grad_in =
        Eigen::MatrixXd::Zero(inputs.rows(), inputs.cols());
    tape.backward(seeds, nullptr, &grad_in);
    *grad_xi += grad_in.bottomRows(grad_xi->size()).rowwise().sum();
  }
  return err.squaredNorm() / denom;
}

// No-flow term on dh/dy; same contract as direct_value_term.
double direct_noflow_term(const Mlp& net, const Eigen::MatrixXd& inputs,
                          double denom, Eigen::VectorXd* grad_params) {
  if (inputs.cols() == 0) return 0.0;
  NetTape tape(net, inputs, {{1, 1}});
  const Eigen::RowVectorXd hy = tape.out().d1[0].row(0);
  NetTape::Seeds seeds;
  seeds.d1.resize(1);
  seeds.d1[0] = (2.0 / denom) * hy;
  tape.backward(seeds, grad_params, nullptr);
  return hy.squaredNorm() / denom;
}

DirectResult run_direct(const FlowProblem& problem,
                        const ObservationSet& observations,
                        const DirectSchedule& schedule, Rng& rng,
                        const KleBasis* geo_basis, const Mlp* geo_net) {
  problem.validate();
  observations.validate(problem.grid, problem.n_t);
  if (schedule.n_f < 1 || schedule.n_b < 0 || schedule.n_i < 0)
    throw ConfigError("direct inversion: n_f must be >= 1, n_b and n_i >= 0");
  if (schedule.epochs < 1 || schedule.batch_f < 1)
    throw ConfigError("direct inversion: epochs and batch_f must be >= 1");

  const bool geo = geo_basis != nullptr;
  const Grid& g = problem.grid;
  DirectPoints pts = sample_direct_points(problem, observations, schedule, rng);

  Mlp h_net = Mlp::create({3, schedule.h_hidden, 1});
  h_net.normalize_input(0, g.x0, g.x0 + g.lx);
  h_net.normalize_input(1, g.y0, g.y0 + g.ly);
  h_net.normalize_input(2, 0.0, problem.t_end);
  h_net.out_shift = 0.5 * (problem.h_left + problem.h_right);
  h_net.out_scale = std::max(0.5 * std::abs(problem.h_left - problem.h_right),
                             1.0);
  h_net.init_glorot(rng);

  Mlp k_net;
  int n_xi = 0;
  if (geo) {
    k_net = *geo_net;
    n_xi = geo_basis->n_terms();
  } else {
    k_net = Mlp::create({2, schedule.k_hidden, 1});
    k_net.normalize_input(0, g.x0, g.x0 + g.lx);
    k_net.normalize_input(1, g.y0, g.y0 + g.ly);
    k_net.init_glorot(rng);
  }

  const int nh_params = h_net.n_params();
  const int n_tail = geo ? n_xi : k_net.n_params();
  Eigen::VectorXd vars(nh_params + n_tail);
  vars.head(nh_params) = h_net.params();
  if (geo)
    vars.tail(n_tail).setZero();
  else
    vars.tail(n_tail) = k_net.params();

  AdamState adam(schedule.lr, static_cast<int>(vars.size()));
  Eigen::VectorXd grad(vars.size());
  Eigen::VectorXd grad_h(nh_params);
  Eigen::VectorXd grad_tail(n_tail);
  Eigen::VectorXd xi;
  if (geo) xi = Eigen::VectorXd::Zero(n_xi);

  std::vector<std::size_t> order(static_cast<std::size_t>(schedule.n_f));
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(schedule.batch_f);
  const std::size_t steps = (order.size() + batch - 1) / batch;

  DirectResult result;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t lo = step * batch;
      const Eigen::Index b =
          static_cast<Eigen::Index>(std::min(batch, order.size() - lo));
      Eigen::MatrixXd xyt(3, b);
      for (Eigen::Index c = 0; c < b; ++c)
        xyt.col(c) = pts.f_xyt.col(
            static_cast<Eigen::Index>(order[lo + static_cast<std::size_t>(c)]));

      grad_h.setZero();
      grad_tail.setZero();
      double total = 0.0;

      DirectPdeBatch pde(h_net, k_net, xyt, xi, problem.ss);
      const double mse_pde =
          pde.r.squaredNorm() / static_cast<double>(b);
      pde.backward(1.0 / static_cast<double>(b), problem.ss, &grad_h,
                   geo ? nullptr : &grad_tail, geo ? &grad_tail : nullptr);
      total += mse_pde;

      const double denom_bc =
          static_cast<double>(pts.bcd_xyt.cols() + pts.bcn_xyt.cols());
      if (denom_bc > 0) {
        double bc = 0.0;
        bc += direct_value_term(h_net, pts.bcd_xyt, pts.bcd_value, denom_bc,
                                &grad_h, nullptr);
        bc += direct_noflow_term(h_net, pts.bcn_xyt, denom_bc, &grad_h);
        total += bc;
      }
      if (pts.ic_xyt.cols() > 0)
        total += direct_value_term(h_net, pts.ic_xyt, pts.ic_value,
                                   static_cast<double>(pts.ic_xyt.cols()),
                                   &grad_h, nullptr);
      if (pts.kobs_xy.cols() > 0)
        total += direct_value_term(
            k_net, k_inputs(pts.kobs_xy, xi), pts.kobs_value,
            static_cast<double>(pts.kobs_xy.cols()),
            geo ? nullptr : &grad_tail, geo ? &grad_tail : nullptr);
      if (pts.hobs_xyt.cols() > 0)
        total += direct_value_term(h_net, pts.hobs_xyt, pts.hobs_value,
                                   static_cast<double>(pts.hobs_xyt.cols()),
                                   &grad_h, nullptr);
      if (geo && schedule.prior_penalty) {
        total += 0.5 * xi.squaredNorm();
        grad_tail += xi;
      }

      if (!std::isfinite(total))
        throw NumericError("direct inversion: loss diverged at epoch " +
                           std::to_string(epoch + 1));
      grad.head(nh_params) = grad_h;
      grad.tail(n_tail) = grad_tail;
      adam_step(adam, vars, grad);
      h_net.set_params(vars.head(nh_params));
      if (geo)
        xi = vars.tail(n_tail);
      else
        k_net.set_params(vars.tail(n_tail));
      epoch_total += total;
    }

    const double mean_total = epoch_total / static_cast<double>(steps);
    if (schedule.log_every > 0 && ((epoch + 1) % schedule.log_every == 0 ||
                                   epoch + 1 == schedule.epochs))
      result.loss_trace.push_back(mean_total);
  }

  // Final loss terms over the complete point sets.
  double pde_sq = 0.0;
  for (std::size_t lo = 0; lo < order.size(); lo += batch) {
    const Eigen::Index b =
        static_cast<Eigen::Index>(std::min(batch, order.size() - lo));
    DirectPdeBatch pde(h_net, k_net,
                       pts.f_xyt.middleCols(static_cast<Eigen::Index>(lo), b),
                       xi, problem.ss);
    pde_sq += pde.r.squaredNorm();
  }
  result.final_terms[0] = pde_sq / static_cast<double>(schedule.n_f);
  const double denom_bc =
      static_cast<double>(pts.bcd_xyt.cols() + pts.bcn_xyt.cols());
  if (denom_bc > 0) {
    double bc = 0.0;
    if (pts.bcd_xyt.cols() > 0)
      bc += (h_net.forward(pts.bcd_xyt).row(0).transpose() - pts.bcd_value)
                .squaredNorm();
    if (pts.bcn_xyt.cols() > 0) {
      NetTape tape(h_net, pts.bcn_xyt, {{1, 1}});
      bc += tape.out().d1[0].row(0).squaredNorm();
    }
    result.final_terms[1] = bc / denom_bc;
  }
  if (pts.ic_xyt.cols() > 0)
    result.final_terms[2] =
        (h_net.forward(pts.ic_xyt).row(0).transpose() - pts.ic_value)
            .squaredNorm() /
        static_cast<double>(pts.ic_xyt.cols());
  if (pts.kobs_xy.cols() > 0)
    result.final_terms[3] =
        (k_net.forward(k_inputs(pts.kobs_xy, xi)).row(0).transpose() -
         pts.kobs_value)
            .squaredNorm() /
        static_cast<double>(pts.kobs_xy.cols());
  if (pts.hobs_xyt.cols() > 0)
    result.final_terms[4] =
        (h_net.forward(pts.hobs_xyt).row(0).transpose() - pts.hobs_value)
            .squaredNorm() /
        static_cast<double>(pts.hobs_xyt.cols());

  result.lnK_cells =
      k_net.forward(k_inputs(cell_centers(g), xi)).row(0).transpose();
  result.h_net = std::move(h_net);
  result.xi = xi;
  result.epochs_run = schedule.epochs;
  return result;
}

}  // namespace

DirectResult invert_pinn_no_geo(const FlowProblem& problem,
                                const ObservationSet& observations,
                                const DirectSchedule& schedule, Rng& rng) {
  return run_direct(problem, observations, schedule, rng, nullptr, nullptr);
}

DirectResult invert_tgnn_geo(const FlowProblem& problem, const ParamNet& pn,
                             const ObservationSet& observations,
                             const DirectSchedule& schedule, Rng& rng) {
  if (pn.net.spec.n_inputs != 2 + pn.basis.n_terms())
    throw ConfigError("invert_tgnn_geo: param net width does not match basis");
  return run_direct(problem, observations, schedule, rng, &pn.basis, &pn.net);
}

double direct_loss_eval(const FlowProblem& problem, const ParamNet& pn,
                        const Mlp& h_net, const ObservationSet& observations,
                        const DirectSchedule& schedule,
                        const Eigen::VectorXd& xi, Rng rng,
                        Eigen::VectorXd* grad_xi) {
  problem.validate();
  observations.validate(problem.grid, problem.n_t);
  if (xi.size() != pn.n_terms())
    throw ConfigError("direct_loss_eval: xi length does not match basis");
  if (pn.net.spec.n_inputs != 2 + pn.n_terms())
    throw ConfigError("direct_loss_eval: param net width does not match basis");
  if (h_net.spec.n_inputs != 3 || h_net.spec.n_outputs != 1)
    throw ConfigError("direct_loss_eval: head net must map (x, y, t) to h");
  if (grad_xi != nullptr) grad_xi->setZero(xi.size());

  const DirectPoints pts =
      sample_direct_points(problem, observations, schedule, rng);
  double total = 0.0;

  if (pts.f_xyt.cols() > 0) {
    const double denom = static_cast<double>(pts.f_xyt.cols());
    const DirectPdeBatch pde(h_net, pn.net, pts.f_xyt, xi, problem.ss);
    total += pde.r.squaredNorm() / denom;
    if (grad_xi != nullptr)
      pde.backward(1.0 / denom, problem.ss, nullptr, nullptr, grad_xi);
  }

  const double denom_bc =
      static_cast<double>(pts.bcd_xyt.cols() + pts.bcn_xyt.cols());
  if (denom_bc > 0) {
    total += direct_value_term(h_net, pts.bcd_xyt, pts.bcd_value, denom_bc,
                               nullptr, nullptr);
    total += direct_noflow_term(h_net, pts.bcn_xyt, denom_bc, nullptr);
  }
  if (pts.ic_xyt.cols() > 0)
    total += direct_value_term(h_net, pts.ic_xyt, pts.ic_value,
                               static_cast<double>(pts.ic_xyt.cols()), nullptr,
                               nullptr);
  if (pts.kobs_xy.cols() > 0)
    total += direct_value_term(pn.net, k_inputs(pts.kobs_xy, xi),
                               pts.kobs_value,
                               static_cast<double>(pts.kobs_xy.cols()), nullptr,
                               grad_xi);
  if (pts.hobs_xyt.cols() > 0)
    total += direct_value_term(h_net, pts.hobs_xyt, pts.hobs_value,
                               static_cast<double>(pts.hobs_xyt.cols()),
                               nullptr, nullptr);
  if (schedule.prior_penalty) {
    total += 0.5 * xi.squaredNorm();
    if (grad_xi != nullptr) *grad_xi += xi;
  }
  return total;
}

}  // namespace gwinv
