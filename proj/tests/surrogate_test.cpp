#include <cmath>
#include <filesystem>
#include <vector>

#include "doctest.h"
#include "gwinv/common.hpp"
#include "gwinv/field.hpp"
#include "gwinv/rng.hpp"
#include "gwinv/surrogate.hpp"
#include "test_support.hpp"

using namespace gwinv;

namespace {

KleBasis tiny_basis(const FlowProblem& p, int n = 3) {
  CovarianceSpec cov;
  return build_kle(cov, p.grid, n);
}

Mlp surrogate_like_net(const FlowProblem& p, int n, std::uint64_t seed) {
  Mlp net = Mlp::create(MlpSpec{3 + n, {8, 8}, 1});
  const Grid& g = p.grid;
  net.normalize_input(0, g.x0, g.x0 + g.lx);
  net.normalize_input(1, g.y0, g.y0 + g.ly);
  net.normalize_input(2, 0.0, p.t_end);
  net.out_shift = 201.0;
  net.out_scale = 1.0;
  Rng rng(seed);
  net.init_glorot(rng);
  return net;
}

}  // namespace

TEST_CASE("training data carries solver heads and a full label pool") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  Rng rng(10);
  const TrainingData data = generate_training_data(p, basis, 3, rng);
  REQUIRE(data.n_fields() == 3);
  REQUIRE(data.heads.size() == 3);
  CHECK(data.n_labels() ==
        static_cast<std::size_t>(3 * p.n_t * p.grid.cell_count()));

  // Labels index real solver output.
  const auto& lab = data.labels[data.n_labels() / 2];
  CHECK(lab.t >= 1);
  CHECK(lab.t <= static_cast<std::uint32_t>(p.n_t));
  const HeadHistory check = solve_flow(p, basis.evaluate_grid(data.xi[lab.field]));
  CHECK(data.heads[lab.field].h(lab.t, lab.cell) ==
        doctest::Approx(check.h(lab.t, lab.cell)));

  Rng rng2(11);
  const TrainingData sub = generate_training_data(p, basis, 2, rng2, 40);
  CHECK(sub.n_labels() == 80);
}

TEST_CASE("collocation sampler respects counts, ranges, and faces") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  Rng rng(20);
  const CollocationSet c = sample_collocation(p, basis, 100, 40, 30, rng);
  CHECK(c.n_pde() == 100);
  CHECK(c.n_bc() == 40);
  CHECK(c.n_ic() == 30);
  REQUIRE(c.pde_xi.rows() == 3);

  const Grid& g = p.grid;
  const double x1 = g.x0 + g.lx, y1 = g.y0 + g.ly;
  for (int k = 0; k < c.n_pde(); ++k) {
    CHECK(c.pde_xyt(0, k) >= g.x0);
    CHECK(c.pde_xyt(0, k) <= x1);
    CHECK(c.pde_xyt(2, k) > 0.0);
    CHECK(c.pde_xyt(2, k) <= p.t_end);
  }
  for (int k = 0; k < c.bcd_xyt.cols(); ++k) {
    const bool left = c.bcd_xyt(0, k) == g.x0;
    const bool right = c.bcd_xyt(0, k) == x1;
    CHECK((left || right));
    CHECK(c.bcd_value(k) == (left ? p.h_left : p.h_right));
  }
  for (int k = 0; k < c.bcn_xyt.cols(); ++k) {
    const bool bottom = c.bcn_xyt(1, k) == g.y0;
    const bool top = c.bcn_xyt(1, k) == y1;
    CHECK((bottom || top));
  }
  for (int k = 0; k < c.n_ic(); ++k) {
    CHECK(c.ic_xyt(2, k) == 0.0);
    CHECK(c.ic_value(k) == p.h_init);
  }
}

TEST_CASE("pde residual matches a finite-difference composition") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  const int n = basis.n_terms();
  const Mlp net = surrogate_like_net(p, n, 5);
  Rng rng(6);
  const Eigen::VectorXd xi = sample_xi(rng, n);

  const Grid& g = p.grid;
  const double x = 0.5 * (g.xc(3) + g.xc(4));
  const double y = 0.5 * (g.yc(6) + g.yc(7));
  const double t = 3.7;

  auto head = [&](double xx, double yy, double tt) {
    Eigen::VectorXd in(3 + n);
    in(0) = xx;
    in(1) = yy;
    in(2) = tt;
    in.tail(n) = xi;
    return net.forward(in)(0);
  };
  const double d = 0.05;
  const double dt = 1e-4;
  const double f0 = head(x, y, t);
  const double hx = (head(x + d, y, t) - head(x - d, y, t)) / (2.0 * d);
  const double hy = (head(x, y + d, t) - head(x, y - d, t)) / (2.0 * d);
  const double ht = (head(x, y, t + dt) - head(x, y, t - dt)) / (2.0 * dt);
  const double hxx =
      (head(x + d, y, t) - 2.0 * f0 + head(x - d, y, t)) / (d * d);
  const double hyy =
      (head(x, y + d, t) - 2.0 * f0 + head(x, y - d, t)) / (d * d);

  std::vector<double> phi(n), phi_x(n), phi_y(n);
  basis.mode_values(x, y, phi.data(), phi_x.data(), phi_y.data());
  double yx = 0.0, yyv = 0.0;
  for (int k = 0; k < n; ++k) {
    yx += phi_x[k] * xi(k);
    yyv += phi_y[k] * xi(k);
  }
  const double K = std::exp(basis.evaluate(xi, x, y));
  const double expect =
      p.ss * ht - K * (hxx + hyy) - K * (yx * hx + yyv * hy);

  const double got = pde_residual(net, basis, x, y, t, xi, p.ss);
  CHECK(got == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("pure data training fits a linear target") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  const Grid& g = p.grid;

  TrainingData data;
  data.xi.push_back(Eigen::VectorXd::Zero(3));
  HeadHistory hist;
  hist.grid = g;
  hist.dt = p.dt();
  hist.h.resize(p.n_t + 1, g.cell_count());
  for (int t = 0; t <= p.n_t; ++t)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i)
        hist.h(t, g.index(i, j)) =
            200.0 + 0.001 * g.xc(i) + 0.0005 * g.yc(j) + 0.05 * t * hist.dt;
  data.heads.push_back(hist);
  for (std::uint32_t t = 1; t <= static_cast<std::uint32_t>(p.n_t); ++t)
    for (std::uint32_t c = 0; c < static_cast<std::uint32_t>(g.cell_count());
         ++c)
      data.labels.push_back({0, c, t});

  LossWeights w;
  w.pde = 0.0;
  w.bc = 0.0;
  w.ic = 0.0;
  TrainSchedule schedule;
  schedule.hidden = {12, 12};
  schedule.epochs = 150;
  schedule.lr = 5e-3;
  schedule.batch_data = 128;
  Rng rng(30);
  const TgnnSurrogate surr =
      train_surrogate(p, basis, CollocationSet{}, data, w, schedule, rng);

  REQUIRE(!surr.loss_curve.empty());
  CHECK(surr.loss_curve.back().mse_data < 1e-3);
  CHECK(surr.loss_curve.back().total ==
        doctest::Approx(surr.loss_curve.back().mse_data));
  CHECK(surr.loss_curve.back().mse_data < surr.loss_curve.front().mse_data);

  // Spot prediction against the target away from label noise (there is none).
  const double pred = surr.predict(data.xi[0], 510.0, 510.0, 2 * hist.dt);
  const double want = 200.0 + 0.001 * 510.0 + 0.0005 * 510.0 + 0.05 * 2 * hist.dt;
  CHECK(std::abs(pred - want) < 0.1);
}

TEST_CASE("loss curve total is the weighted sum of its parts") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  Rng drng(40);
  const TrainingData data = generate_training_data(p, basis, 1, drng, 50);
  Rng crng(41);
  const CollocationSet colloc = sample_collocation(p, basis, 60, 20, 20, crng);

  LossWeights w;
  w.data = 2.0;
  w.pde = 0.5;
  w.bc = 1.5;
  w.ic = 3.0;
  TrainSchedule schedule;
  schedule.hidden = {8};
  schedule.epochs = 3;
  schedule.batch_pde = 32;
  schedule.batch_data = 32;
  schedule.batch_bc = 16;
  schedule.batch_ic = 16;
  Rng rng(42);
  const TgnnSurrogate surr =
      train_surrogate(p, basis, colloc, data, w, schedule, rng);
  REQUIRE(surr.loss_curve.size() == 3);
  for (const LossCurvePoint& pt : surr.loss_curve) {
    const double expect = w.data * pt.mse_data + w.pde * pt.mse_pde +
                          w.bc * pt.mse_bc + w.ic * pt.mse_ic;
    CHECK(pt.total == doctest::Approx(expect).epsilon(1e-12));
    CHECK(pt.mse_pde >= 0.0);
    CHECK(pt.mse_bc >= 0.0);
  }
}

TEST_CASE("training is deterministic per seed") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  Rng drng(50);
  const TrainingData data = generate_training_data(p, basis, 1, drng, 30);
  Rng crng(51);
  const CollocationSet colloc = sample_collocation(p, basis, 40, 10, 10, crng);

  TrainSchedule schedule;
  schedule.hidden = {8};
  schedule.epochs = 4;
  auto run = [&]() {
    Rng rng(52);
    return train_surrogate(p, basis, colloc, data, LossWeights{}, schedule,
                           rng);
  };
  const TgnnSurrogate a = run();
  const TgnnSurrogate b = run();
  CHECK((a.net.params().array() == b.net.params().array()).all());
  REQUIRE(a.loss_curve.size() == b.loss_curve.size());
  for (std::size_t i = 0; i < a.loss_curve.size(); ++i)
    CHECK(a.loss_curve[i].total == b.loss_curve[i].total);
}

TEST_CASE("sensitivity matches finite differences of predict_obs") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  TgnnSurrogate surr;
  surr.net = surrogate_like_net(p, basis.n_terms(), 60);
  surr.basis = basis;
  surr.problem = p;

  const Eigen::VectorXd lnK = basis.evaluate_grid(Eigen::VectorXd::Zero(3));
  const HeadHistory hist = solve_flow(p, lnK);
  const ObservationSet set = make_head_observations(
      hist, {{255.0, 255.0}, {765.0, 765.0}}, 1, p.n_t, 0.01, nullptr);

  Rng rng(61);
  const Eigen::VectorXd xi = sample_xi(rng, 3);
  const Eigen::MatrixXd jac = sensitivity(surr, xi, set);
  REQUIRE(jac.rows() == set.size());
  REQUIRE(jac.cols() == 3);

  const double h = 1e-5;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd xp = xi, xm = xi;
    xp(k) += h;
    xm(k) -= h;
    const Eigen::VectorXd fd =
        (predict_obs(surr, xp, set) - predict_obs(surr, xm, set)) / (2.0 * h);
    for (int r = 0; r < set.size(); ++r)
      CHECK(jac(r, k) == doctest::Approx(fd(r)).epsilon(1e-6));
  }
}

TEST_CASE("predict_obs follows record order and times") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  TgnnSurrogate surr;
  surr.net = surrogate_like_net(p, basis.n_terms(), 70);
  surr.basis = basis;
  surr.problem = p;

  ObservationSet set;
  ObsRecord r;
  r.x = 400.0;
  r.y = 600.0;
  r.t_index = 3;
  r.stddev = 0.01;
  r.kind = ObsKind::head;
  set.records.push_back(r);

  Rng rng(71);
  const Eigen::VectorXd xi = sample_xi(rng, 3);
  const Eigen::VectorXd g = predict_obs(surr, xi, set);
  REQUIRE(g.size() == 1);
  CHECK(g(0) == doctest::Approx(surr.predict(xi, 400.0, 600.0, 3 * p.dt())));
}

TEST_CASE("validation error is zero for a surrogate that equals the solver") {
  // Use the solver itself as the reference: an untrained net cannot match it,
  // but the metric must be finite, positive, and scale-free.
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  TgnnSurrogate surr;
  surr.net = surrogate_like_net(p, basis.n_terms(), 80);
  surr.basis = basis;
  surr.problem = p;
  Rng rng(81);
  std::vector<Eigen::VectorXd> held = {sample_xi(rng, 3), sample_xi(rng, 3)};
  const double err = validation_error(surr, held);
  CHECK(std::isfinite(err));
  CHECK(err > 0.0);
  CHECK(err < 1.0);
}

TEST_CASE("surrogate checkpoint round trip and basis hash guard") {
  const FlowProblem p = gwtest::tiny_problem();
  const KleBasis basis = tiny_basis(p);
  TgnnSurrogate surr;
  surr.net = surrogate_like_net(p, basis.n_terms(), 90);
  surr.basis = basis;
  surr.problem = p;

  const std::string dir = gwtest::temp_dir("surr");
  const std::string path = gwtest::temp_file(dir, "surrogate.txt");
  const std::string basis_path = gwtest::temp_file(dir, "basis.txt");
  save_surrogate(surr, path, basis_path);

  const TgnnSurrogate back = load_surrogate(path);
  CHECK(back.problem == p);
  CHECK(back.n_terms() == 3);
  Rng rng(91);
  const Eigen::VectorXd xi = sample_xi(rng, 3);
  CHECK(back.predict(xi, 300.0, 700.0, 2.0) ==
        surr.predict(xi, 300.0, 700.0, 2.0));

  // Corrupting the basis file must be detected on load.
  std::string text = read_text_file(basis_path);
  text[text.size() / 2] = text[text.size() / 2] == '1' ? '2' : '1';
  write_text_file(basis_path, text);
  CHECK_THROWS_AS(load_surrogate(path), IoError);
  std::filesystem::remove(basis_path);
  CHECK_THROWS_AS(load_surrogate(path), IoError);
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  w.data = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  LossWeights zero;
  zero.data = zero.pde = zero.bc = zero.ic = 0.0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
}
