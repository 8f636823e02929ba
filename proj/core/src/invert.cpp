#include "gwinv/invert.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "gwinv/common.hpp"

namespace gwinv {

Eigen::VectorXd ForwardModel::vjp(const Eigen::VectorXd& xi,
                                  const Eigen::VectorXd& w) const {
  return jacobian(xi).transpose() * w;
}

Eigen::MatrixXd ForwardModel::predict_many(const Eigen::MatrixXd& xi_cols) const {
  Eigen::MatrixXd out(n_obs(), xi_cols.cols());
  for (Eigen::Index j = 0; j < xi_cols.cols(); ++j)
    out.col(j) = predict(xi_cols.col(j));
  return out;
}

SurrogateForwardModel::SurrogateForwardModel(const TgnnSurrogate& surr,
                                             const ObservationSet& set)
    : surr_(&surr), set_(&set) {
  surr.validate();
  set.validate(surr.problem.grid, surr.problem.n_t);
  const int n = surr.basis.n_terms();
  const int nh = set.count(ObsKind::head);
  const int nk = set.size() - nh;
  head_inputs_ = Eigen::MatrixXd::Zero(3 + n, nh);
  logk_modes_.resize(nk, n);
  logk_mean_.resize(nk);
  Eigen::VectorXd phi(n), phix(n), phiy(n);
  int hc = 0, kc = 0;
  for (int row = 0; row < set.size(); ++row) {
    const ObsRecord& rec = set.records[static_cast<std::size_t>(row)];
    if (rec.kind == ObsKind::head) {
      head_inputs_(0, hc) = rec.x;
      head_inputs_(1, hc) = rec.y;
      head_inputs_(2, hc) = rec.t_index * surr.problem.dt();
      head_rows_.push_back(row);
      ++hc;
    } else {
      surr.basis.mode_values(rec.x, rec.y, phi.data(), phix.data(),
                             phiy.data());
      logk_modes_.row(kc) = phi.transpose();
      logk_mean_(kc) = surr.basis.cov.mean;
      logk_rows_.push_back(row);
      ++kc;
    }
  }
}

int SurrogateForwardModel::n_obs() const { return set_->size(); }

int SurrogateForwardModel::n_param() const { return surr_->basis.n_terms(); }

Eigen::VectorXd SurrogateForwardModel::predict(const Eigen::VectorXd& xi) const {
  return predict_many(xi).col(0);
}

Eigen::MatrixXd SurrogateForwardModel::predict_many(
    const Eigen::MatrixXd& xi_cols) const {
  const int n = n_param();
  if (xi_cols.rows() != n)
    throw ConfigError("forward model: xi length does not match basis");
  const Eigen::Index ne = xi_cols.cols();
  const Eigen::Index nh = head_inputs_.cols();
  Eigen::MatrixXd out(n_obs(), ne);

  if (nh > 0) {
    Eigen::MatrixXd inputs(3 + n, nh * ne);
    for (Eigen::Index j = 0; j < ne; ++j) {
      inputs.middleCols(j * nh, nh) = head_inputs_;
      inputs.middleCols(j * nh, nh).bottomRows(n).colwise() = xi_cols.col(j);
    }
    const Eigen::MatrixXd pred = surr_->net.forward(inputs);
    for (Eigen::Index j = 0; j < ne; ++j)
      for (Eigen::Index c = 0; c < nh; ++c)
        out(head_rows_[static_cast<std::size_t>(c)], j) = pred(0, j * nh + c);
  }
  if (!logk_rows_.empty()) {
    const Eigen::MatrixXd lk =
        (logk_modes_ * xi_cols).colwise() + logk_mean_;
    for (Eigen::Index j = 0; j < ne; ++j)
      for (std::size_t c = 0; c < logk_rows_.size(); ++c)
        out(logk_rows_[c], j) = lk(static_cast<Eigen::Index>(c), j);
  }
  return out;
}

Eigen::MatrixXd SurrogateForwardModel::jacobian(const Eigen::VectorXd& xi) const {
  const int n = n_param();
  if (xi.size() != n)
    throw ConfigError("forward model: xi length does not match basis");
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n_obs(), n);
  const Eigen::Index nh = head_inputs_.cols();
  if (nh > 0) {
    Eigen::MatrixXd inputs = head_inputs_;
    inputs.bottomRows(n).colwise() = xi;
    NetTape tape(surr_->net, std::move(inputs), {});
    NetTape::Seeds seeds;
    seeds.value = Eigen::MatrixXd::Ones(1, nh);
    Eigen::MatrixXd grad_in = Eigen::MatrixXd::Zero(3 + n, nh);
    tape.backward(seeds, nullptr, &grad_in);
    for (Eigen::Index c = 0; c < nh; ++c)
      jac.row(head_rows_[static_cast<std::size_t>(c)]) =
          grad_in.col(c).tail(n).transpose();
  }
  for (std::size_t c = 0; c < logk_rows_.size(); ++c)
    jac.row(logk_rows_[c]) = logk_modes_.row(static_cast<Eigen::Index>(c));
  return jac;
}

Eigen::VectorXd SurrogateForwardModel::vjp(const Eigen::VectorXd& xi,
                                           const Eigen::VectorXd& w) const {
  const int n = n_param();
  if (xi.size() != n)
    throw ConfigError("forward model: xi length does not match basis");
  if (w.size() != n_obs())
    throw ConfigError("forward model: weight length does not match data");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const Eigen::Index nh = head_inputs_.cols();
  if (nh > 0) {
    Eigen::MatrixXd inputs = head_inputs_;
    inputs.bottomRows(n).colwise() = xi;
    NetTape tape(surr_->net, std::move(inputs), {});
    NetTape::Seeds seeds;
    seeds.value.resize(1, nh);
    for (Eigen::Index c = 0; c < nh; ++c)
      seeds.value(0, c) = w(head_rows_[static_cast<std::size_t>(c)]);
    Eigen::MatrixXd grad_in = Eigen::MatrixXd::Zero(3 + n, nh);
    tape.backward(seeds, nullptr, &grad_in);
    out += grad_in.bottomRows(n).rowwise().sum();
  }
  for (std::size_t c = 0; c < logk_rows_.size(); ++c)
    out += logk_modes_.row(static_cast<Eigen::Index>(c)).transpose() *
           w(logk_rows_[c]);
  return out;
}

PriorSpec PriorSpec::standard(int n_param, const Eigen::VectorXd& c_d_diag) {
  PriorSpec prior;
  prior.xi_pr = Eigen::VectorXd::Zero(n_param);
  prior.c_xi = Eigen::MatrixXd::Identity(n_param, n_param);
  prior.c_d_diag = c_d_diag;
  return prior;
}

void PriorSpec::validate(int n_param, int n_obs) const {
  if (xi_pr.size() != n_param)
    throw ConfigError("prior: mean length " + std::to_string(xi_pr.size()) +
                      " does not match parameter count " +
                      std::to_string(n_param));
  if (c_xi.rows() != n_param || c_xi.cols() != n_param)
    throw ConfigError("prior: covariance shape does not match parameter count");
  if ((c_xi - c_xi.transpose()).cwiseAbs().maxCoeff() >
      1e-12 * std::max(1.0, c_xi.cwiseAbs().maxCoeff()))
    throw ConfigError("prior: covariance is not symmetric");
  if (c_d_diag.size() != n_obs)
    throw ConfigError("prior: noise variance length " +
                      std::to_string(c_d_diag.size()) +
                      " does not match observation count " +
                      std::to_string(n_obs));
  if (n_obs > 0 && c_d_diag.minCoeff() <= 0)
    throw ConfigError("prior: noise variances must be positive");
}

TerminationCheck check_termination(const TerminationSpec& spec,
                                   const Eigen::MatrixXd& xi_prev,
                                   const Eigen::MatrixXd& xi_next,
                                   double mis_prev, double mis_next,
                                   int iteration) {
  TerminationCheck check;
  const double dxi = (xi_next - xi_prev).cwiseAbs().maxCoeff();
  if (dxi < spec.eps1) {
    check.stop = true;
    check.reason = "coefficient change below eps1";
    return check;
  }
  const double dmis =
      std::abs(mis_next - mis_prev) / std::max(1.0, std::abs(mis_prev));
  if (dmis < spec.eps2) {
    check.stop = true;
    check.reason = "data-mismatch change below eps2";
    return check;
  }
  if (iteration >= spec.i_max) {
    check.stop = true;
    check.reason = "iteration limit reached";
    return check;
  }
  return check;
}

Ensemble make_ensemble(int n_param, int n_ensemble, const Eigen::VectorXd& d_obs,
                       const Eigen::VectorXd& c_d_diag, double lambda0,
                       Rng& rng) {
  if (n_param < 1 || n_ensemble < 1)
    throw ConfigError("make_ensemble: sizes must be >= 1");
  if (d_obs.size() != c_d_diag.size())
    throw ConfigError("make_ensemble: observation and variance lengths differ");
  Ensemble ens;
  ens.xi.resize(n_param, n_ensemble);
  for (int j = 0; j < n_ensemble; ++j)
    for (int k = 0; k < n_param; ++k) ens.xi(k, j) = rng.normal();
  ens.xi_pr = ens.xi;
  ens.d_obs.resize(d_obs.size(), n_ensemble);
  const Eigen::VectorXd noise_std = c_d_diag.cwiseSqrt();
  for (int j = 0; j < n_ensemble; ++j)
    for (Eigen::Index i = 0; i < d_obs.size(); ++i)
      ens.d_obs(i, j) = d_obs(i) + noise_std(i) * rng.normal();
  ens.lambda = lambda0;
  ens.iteration = 0;
  return ens;
}

double data_mismatch(const Eigen::MatrixXd& predictions,
                     const Eigen::MatrixXd& d_obs) {
  if (predictions.rows() != d_obs.rows() || predictions.cols() != d_obs.cols())
    throw ConfigError("data_mismatch: prediction and observation shapes differ");
  const double n =
      static_cast<double>(predictions.rows()) * predictions.cols();
  if (n == 0) throw ConfigError("data_mismatch: empty data");
  return (predictions - d_obs).squaredNorm() / n;
}

double data_mismatch(const ForwardModel& model, const Ensemble& ensemble) {
  return data_mismatch(model.predict_many(ensemble.xi), ensemble.d_obs);
}

Eigen::VectorXd lm_single_update(const ForwardModel& model,
                                 const Eigen::VectorXd& xi,
                                 const Eigen::VectorXd& d_obs,
                                 const PriorSpec& prior, double lambda) {
  const Eigen::MatrixXd jac = model.jacobian(xi);
  const Eigen::VectorXd g = model.predict(xi);
  const Eigen::VectorXd r_pr = xi - prior.xi_pr;
  const Eigen::MatrixXd jc = jac * prior.c_xi;  // G C_xi
  Eigen::MatrixXd a = jc * jac.transpose();
  a.diagonal() += (1.0 + lambda) * prior.c_d_diag;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("lm_single_update: data-space system factorization "
                       "failed");
  const Eigen::VectorXd t_pr = ldlt.solve(jac * r_pr);
  const Eigen::VectorXd t_d = ldlt.solve(g - d_obs);
  return xi - (r_pr - jc.transpose() * t_pr) / (1.0 + lambda) -
         jc.transpose() * t_d;
}

Eigen::MatrixXd lm_ensemble_update(const ForwardModel& model,
                                   const Ensemble& ensemble,
                                   const PriorSpec& prior) {
  const int ne = ensemble.size();
  if (ne < 1) throw ConfigError("lm_ensemble_update: empty ensemble");
  const double lambda = ensemble.lambda;

  Eigen::MatrixXd jac =
      Eigen::MatrixXd::Zero(model.n_obs(), model.n_param());
  for (int j = 0; j < ne; ++j) jac += model.jacobian(ensemble.xi.col(j));
  jac /= static_cast<double>(ne);

  const Eigen::MatrixXd jc = jac * prior.c_xi;
  Eigen::MatrixXd a = jc * jac.transpose();
  a.diagonal() += (1.0 + lambda) * prior.c_d_diag;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("lm_ensemble_update: data-space system factorization "
                       "failed");

  const Eigen::MatrixXd g = model.predict_many(ensemble.xi);
  const Eigen::MatrixXd r_pr = ensemble.xi - ensemble.xi_pr;
  const Eigen::MatrixXd t_pr = ldlt.solve(jac * r_pr);
  const Eigen::MatrixXd t_d = ldlt.solve(g - ensemble.d_obs);
  return ensemble.xi - (r_pr - jc.transpose() * t_pr) / (1.0 + lambda) -
         jc.transpose() * t_d;
}

Eigen::MatrixXd ies_apply(const Eigen::MatrixXd& xi, const Eigen::MatrixXd& xi_pr,
                          const Eigen::MatrixXd& predictions,
                          const Eigen::MatrixXd& d_obs,
                          const Eigen::MatrixXd& c_xixi,
                          const Eigen::MatrixXd& c_xid,
                          const Eigen::MatrixXd& c_dd,
                          const Eigen::VectorXd& c_d_diag, double lambda) {
  Eigen::MatrixXd a = c_dd;
  a.diagonal() += (1.0 + lambda) * c_d_diag;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("ies_apply: data-space system factorization failed");

  const Eigen::MatrixXd r_pr = xi - xi_pr;
  const Eigen::MatrixXd t_pr = ldlt.solve(c_xid.transpose() * r_pr);
  const Eigen::MatrixXd t_d = ldlt.solve(predictions - d_obs);
  return xi - (c_xixi * r_pr - c_xid * t_pr) / (1.0 + lambda) - c_xid * t_d;
}

Eigen::MatrixXd ies_update(const ForwardModel& model, const Ensemble& ensemble,
                           const PriorSpec& prior) {
  const int ne = ensemble.size();
  if (ne < 2)
    throw ConfigError("ies_update: ensemble must have at least 2 members");
  const Eigen::MatrixXd g = model.predict_many(ensemble.xi);
  const Eigen::VectorXd xi_mean = ensemble.xi.rowwise().mean();
  const Eigen::VectorXd g_mean = g.rowwise().mean();
  const Eigen::MatrixXd dxi = ensemble.xi.colwise() - xi_mean;
  const Eigen::MatrixXd dg = g.colwise() - g_mean;
  const double scale = 1.0 / (ne - 1);
  const Eigen::MatrixXd c_xixi = scale * dxi * dxi.transpose();
  const Eigen::MatrixXd c_xid = scale * dxi * dg.transpose();
  const Eigen::MatrixXd c_dd = scale * dg * dg.transpose();
  return ies_apply(ensemble.xi, ensemble.xi_pr, g, ensemble.d_obs, c_xixi,
                   c_xid, c_dd, prior.c_d_diag, ensemble.lambda);
}

namespace {

using StepFn = std::function<Eigen::MatrixXd(const Ensemble&)>;

// Damped-iteration driver shared by the three Gauss-Newton style engines:
// propose at the current lambda, retry at inflated lambda while the ensemble
// mismatch grows, then accept and relax lambda.
InvertResult run_damped(const ForwardModel& model, Ensemble ens,
                        const InvertOptions& options, const StepFn& step) {
  InvertResult result;
  Eigen::MatrixXd pred = model.predict_many(ens.xi);
  double mis = data_mismatch(pred, ens.d_obs);
  result.mis_trace.push_back(mis);

  for (int it = 1;; ++it) {
    double lambda = ens.lambda;
    Eigen::MatrixXd cand;
    double mis_cand = 0.0;
    bool accepted = false;
    for (int attempt = 0;; ++attempt) {
      ens.lambda = lambda;
      cand = step(ens);
      mis_cand = data_mismatch(model.predict_many(cand), ens.d_obs);
      accepted = std::isfinite(mis_cand) && mis_cand <= mis;
      if (accepted || attempt >= options.max_retries) break;
      lambda = std::min(lambda * 10.0, options.lambda_max);
    }
    if (!std::isfinite(mis_cand))
      throw NumericError("inversion diverged at iteration " +
                         std::to_string(it));

    const TerminationCheck check = check_termination(
        options.term, ens.xi, cand, mis, mis_cand, it);
    ens.xi = cand;
    ens.iteration = it;
    ens.lambda = accepted ? std::max(lambda / 10.0, options.lambda_min)
                          : lambda;
    mis = mis_cand;
    result.mis_trace.push_back(mis);
    if (check.stop) {
      result.xi = ens.xi;
      result.iterations = it;
      result.stop_reason = check.reason;
      return result;
    }
  }
}

}  // namespace

InvertResult invert_gradient_single(const ForwardModel& model,
                                    const Eigen::VectorXd& d_obs,
                                    const PriorSpec& prior,
                                    const InvertOptions& options,
                                    const Eigen::VectorXd& xi0) {
  prior.validate(model.n_param(), model.n_obs());
  if (d_obs.size() != model.n_obs())
    throw ConfigError("invert: observation length does not match model");
  if (xi0.size() != model.n_param())
    throw ConfigError("invert: initial xi length does not match model");

  Ensemble ens;
  ens.xi = xi0;
  ens.xi_pr = prior.xi_pr;
  ens.d_obs = d_obs;
  ens.lambda = options.lambda0;
  return run_damped(model, std::move(ens), options,
                    [&](const Ensemble& e) -> Eigen::MatrixXd {
                      return lm_single_update(model, e.xi.col(0),
                                              e.d_obs.col(0), prior, e.lambda);
                    });
}

InvertResult invert_gradient_ensemble(const ForwardModel& model,
                                      const Eigen::VectorXd& d_obs,
                                      const PriorSpec& prior,
                                      const InvertOptions& options, Rng& rng) {
  prior.validate(model.n_param(), model.n_obs());
  if (d_obs.size() != model.n_obs())
    throw ConfigError("invert: observation length does not match model");
  Ensemble ens = make_ensemble(model.n_param(), options.ensemble_size, d_obs,
                               prior.c_d_diag, options.lambda0, rng);
  return run_damped(model, std::move(ens), options,
                    [&](const Ensemble& e) -> Eigen::MatrixXd {
                      return lm_ensemble_update(model, e, prior);
                    });
}

InvertResult invert_ies(const ForwardModel& model, const Eigen::VectorXd& d_obs,
                        const PriorSpec& prior, const InvertOptions& options,
                        Rng& rng) {
  prior.validate(model.n_param(), model.n_obs());
  if (d_obs.size() != model.n_obs())
    throw ConfigError("invert: observation length does not match model");
  Ensemble ens = make_ensemble(model.n_param(), options.ensemble_size, d_obs,
                               prior.c_d_diag, options.lambda0, rng);
  return run_damped(model, std::move(ens), options,
                    [&](const Ensemble& e) -> Eigen::MatrixXd {
                      return ies_update(model, e, prior);
                    });
}

double training_objective(const ForwardModel& model, const Eigen::VectorXd& xi,
                          const Eigen::VectorXd& d_obs,
                          const PriorSpec& prior) {
  const Eigen::VectorXd r_d = d_obs - model.predict(xi);
  const Eigen::VectorXd r_pr = xi - prior.xi_pr;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(prior.c_xi);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("training_objective: prior covariance factorization "
                       "failed");
  return 0.5 * r_d.dot(r_d.cwiseQuotient(prior.c_d_diag)) +
         0.5 * r_pr.dot(ldlt.solve(r_pr));
}

Eigen::VectorXd training_objective_gradient(const ForwardModel& model,
                                            const Eigen::VectorXd& xi,
                                            const Eigen::VectorXd& d_obs,
                                            const PriorSpec& prior) {
  const Eigen::VectorXd g = model.predict(xi);
  const Eigen::VectorXd r_pr = xi - prior.xi_pr;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(prior.c_xi);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("training_objective_gradient: prior covariance "
                       "factorization failed");
  return model.vjp(xi, (g - d_obs).cwiseQuotient(prior.c_d_diag)) +
         ldlt.solve(r_pr);
}

InvertResult invert_training(const ForwardModel& model,
                             const Eigen::VectorXd& d_obs,
                             const PriorSpec& prior,
                             const TrainingInvertOptions& options,
                             const Eigen::VectorXd& xi0) {
  prior.validate(model.n_param(), model.n_obs());
  if (d_obs.size() != model.n_obs())
    throw ConfigError("invert: observation length does not match model");
  if (xi0.size() != model.n_param())
    throw ConfigError("invert: initial xi length does not match model");
  if (options.iterations < 1)
    throw ConfigError("invert: iteration count must be >= 1");

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(prior.c_xi);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("invert_training: prior covariance factorization "
                       "failed");

  InvertResult result;
  Eigen::VectorXd xi = xi0;
  AdamState adam(options.lr, static_cast<int>(xi.size()));
  const double inv_nd = 1.0 / static_cast<double>(model.n_obs());

  for (int it = 0; it <= options.iterations; ++it) {
    const Eigen::VectorXd g = model.predict(xi);
    const Eigen::VectorXd r_d = g - d_obs;
    const Eigen::VectorXd r_pr = xi - prior.xi_pr;
    const double objective =
        0.5 * r_d.dot(r_d.cwiseQuotient(prior.c_d_diag)) +
        0.5 * r_pr.dot(ldlt.solve(r_pr));
    if (!std::isfinite(objective))
      throw NumericError("invert_training: objective diverged at iteration " +
                         std::to_string(it));
    result.objective_trace.push_back(objective);
    result.mis_trace.push_back(r_d.squaredNorm() * inv_nd);
    if (it == options.iterations) break;

    const Eigen::VectorXd grad =
        model.vjp(xi, r_d.cwiseQuotient(prior.c_d_diag)) + ldlt.solve(r_pr);
    adam_step(adam, xi, grad);
  }

  result.xi = xi;
  result.iterations = options.iterations;
  result.stop_reason = "iteration limit reached";
  return result;
}

}  // namespace gwinv
