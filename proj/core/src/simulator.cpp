#include "gwinv/simulator.hpp"

#include <Eigen/Sparse>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gwinv/common.hpp"

namespace gwinv {

void FlowProblem::validate() const {
  if (grid.nx < 3 || grid.ny < 1)
    throw ConfigError("flow problem: grid must be at least 3x1 cells");
  if (!(ss > 0)) throw ConfigError("flow problem: specific storage must be > 0");
  if (!(t_end > 0) || n_t < 1)
    throw ConfigError("flow problem: need t_end > 0 and n_t >= 1");
}

double HeadHistory::interp(int t, double x, double y) const {
  BilinearStencil s = bilinear_stencil(grid, x, y);
  return s.w[0] * h(t, s.cell[0]) + s.w[1] * h(t, s.cell[1]) +
         s.w[2] * h(t, s.cell[2]) + s.w[3] * h(t, s.cell[3]);
}

int ObservationSet::count(ObsKind kind) const {
  int c = 0;
  for (const auto& r : records)
    if (r.kind == kind) ++c;
  return c;
}

Eigen::VectorXd ObservationSet::values() const {
  Eigen::VectorXd v(size());
  for (int i = 0; i < size(); ++i) v(i) = records[i].value;
  return v;
}

Eigen::VectorXd ObservationSet::variances() const {
  Eigen::VectorXd v(size());
  for (int i = 0; i < size(); ++i)
    v(i) = records[i].stddev * records[i].stddev;
  return v;
}

void ObservationSet::validate(const Grid& grid, int n_t) const {
  for (const auto& r : records) {
    if (!(r.stddev > 0))
      throw ConfigError("observation set: noise std must be > 0");
    if (!grid.contains(r.x, r.y))
      throw ConfigError("observation set: location outside domain");
    if (r.kind == ObsKind::head && (r.t_index < 1 || r.t_index > n_t))
      throw ConfigError("observation set: head time index outside [1, n_t]");
  }
}

namespace {

// Face transmissibilities (harmonic mean conductivity times face geometry).
struct Transmissibility {
  Eigen::VectorXd kx;  // between (i,j) and (i+1,j): (nx-1)*ny entries
  Eigen::VectorXd ky;  // between (i,j) and (i,j+1): nx*(ny-1) entries
};

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

Transmissibility face_transmissibilities(const Grid& g,
                                         const Eigen::VectorXd& lnK) {
  Transmissibility t;
  Eigen::VectorXd K = lnK.array().exp();
  t.kx.resize((g.nx - 1) * g.ny);
  t.ky.resize(g.nx * (g.ny - 1));
  const double fx = g.dy() / g.dx();
  const double fy = g.dx() / g.dy();
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i + 1 < g.nx; ++i)
      t.kx(j * (g.nx - 1) + i) =
          fx * harmonic(K(g.index(i, j)), K(g.index(i + 1, j)));
  for (int j = 0; j + 1 < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      t.ky(j * g.nx + i) = fy * harmonic(K(g.index(i, j)), K(g.index(i, j + 1)));
  return t;
}

}  // namespace

HeadHistory solve_flow(const FlowProblem& problem, const Eigen::VectorXd& lnK) {
  problem.validate();
  const Grid& g = problem.grid;
  if (lnK.size() != g.cell_count())
    throw ConfigError("solve_flow: lnK size does not match grid");
  if (!lnK.allFinite()) throw ConfigError("solve_flow: lnK has non-finite values");

  const int nfree_x = g.nx - 2;  // all columns except the fixed-head ones
  const int nfree = nfree_x * g.ny;
  auto free_index = [&](int i, int j) { return j * nfree_x + (i - 1); };

  Transmissibility tr = face_transmissibilities(g, lnK);
  auto tx = [&](int i, int j) { return tr.kx(j * (g.nx - 1) + i); };
  auto ty = [&](int i, int j) { return tr.ky(j * g.nx + i); };

  const double storage = problem.ss * g.dx() * g.dy() / problem.dt();

  // Implicit system (storage + L) h_new = storage*h_old + fixed-head inflow.
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(nfree) * 5);
  Eigen::VectorXd rhs_fixed = Eigen::VectorXd::Zero(nfree);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 1; i + 1 < g.nx; ++i) {
      int row = free_index(i, j);
      double diag = storage;
      double t_left = tx(i - 1, j);
      diag += t_left;
      if (i - 1 == 0)
        rhs_fixed(row) += t_left * problem.h_left;
      else
        trip.emplace_back(row, free_index(i - 1, j), -t_left);
      double t_right = tx(i, j);
      diag += t_right;
      if (i + 1 == g.nx - 1)
        rhs_fixed(row) += t_right * problem.h_right;
      else
        trip.emplace_back(row, free_index(i + 1, j), -t_right);
      if (j > 0) {
        double t_down = ty(i, j - 1);
        diag += t_down;
        trip.emplace_back(row, free_index(i, j - 1), -t_down);
      }
      if (j + 1 < g.ny) {
        double t_up = ty(i, j);
        diag += t_up;
        trip.emplace_back(row, free_index(i, j + 1), -t_up);
      }
      trip.emplace_back(row, row, diag);
    }
  }
  Eigen::SparseMatrix<double> A(nfree, nfree);
  A.setFromTriplets(trip.begin(), trip.end());

  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>,
                           Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  cg.setTolerance(1e-12);
  cg.setMaxIterations(20LL * nfree);
  cg.compute(A);

  HeadHistory hist;
  hist.grid = g;
  hist.dt = problem.dt();
  hist.h.resize(problem.n_t + 1, g.cell_count());

  Eigen::VectorXd level = Eigen::VectorXd::Constant(g.cell_count(), problem.h_init);
  for (int j = 0; j < g.ny; ++j) {
    level(g.index(0, j)) = problem.h_left;
    level(g.index(g.nx - 1, j)) = problem.h_right;
  }
  hist.h.row(0) = level.transpose();

  Eigen::VectorXd h_free(nfree);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 1; i + 1 < g.nx; ++i)
      h_free(free_index(i, j)) = level(g.index(i, j));

  for (int step = 1; step <= problem.n_t; ++step) {
    Eigen::VectorXd rhs = storage * h_free + rhs_fixed;
    h_free = cg.solveWithGuess(rhs, h_free);
    if (cg.info() != Eigen::Success)
      throw NumericError("solve_flow: CG failed at step " + std::to_string(step) +
                         " after " + std::to_string(cg.iterations()) +
                         " iterations, residual " + fmt17(cg.error()));
    for (int j = 0; j < g.ny; ++j)
      for (int i = 1; i + 1 < g.nx; ++i)
        level(g.index(i, j)) = h_free(free_index(i, j));
    hist.h.row(step) = level.transpose();
  }
  return hist;
}

Eigen::VectorXd observe(const HeadHistory& history, const ObservationSet& set,
                        Rng* rng) {
  Eigen::VectorXd out(set.size());
  for (int i = 0; i < set.size(); ++i) {
    const ObsRecord& r = set.records[i];
    if (r.kind == ObsKind::head) {
      double v = history.interp(r.t_index, r.x, r.y);
      if (rng) v += rng->normal(0.0, r.stddev);
      out(i) = v;
    } else {
      out(i) = r.value;
    }
  }
  return out;
}

ObservationSet make_head_observations(
    const HeadHistory& history,
    const std::vector<std::pair<double, double>>& points, int t_first,
    int t_last, double noise_std, Rng* rng) {
  ObservationSet set;
  set.records.reserve(points.size() * (t_last - t_first + 1));
  for (const auto& [x, y] : points) {
    for (int t = t_first; t <= t_last; ++t) {
      ObsRecord r;
      r.x = x;
      r.y = y;
      r.t_index = t;
      r.stddev = noise_std;
      r.kind = ObsKind::head;
      r.value = history.interp(t, x, y);
      if (rng) r.value += rng->normal(0.0, noise_std);
      set.records.push_back(r);
    }
  }
  return set;
}

void append_logk_observations(ObservationSet& set, const Grid& grid,
                              const Eigen::VectorXd& lnK_truth,
                              const std::vector<std::pair<double, double>>& points,
                              double noise_std, Rng* rng) {
  for (const auto& [x, y] : points) {
    BilinearStencil s = bilinear_stencil(grid, x, y);
    ObsRecord r;
    r.x = x;
    r.y = y;
    r.t_index = 0;
    r.stddev = noise_std;
    r.kind = ObsKind::log_k;
    r.value = s.w[0] * lnK_truth(s.cell[0]) + s.w[1] * lnK_truth(s.cell[1]) +
              s.w[2] * lnK_truth(s.cell[2]) + s.w[3] * lnK_truth(s.cell[3]);
    if (rng) r.value += rng->normal(0.0, noise_std);
    set.records.push_back(r);
  }
}

double mass_balance_residual(const FlowProblem& problem,
                             const Eigen::VectorXd& lnK,
                             const HeadHistory& history) {
  const Grid& g = problem.grid;
  Transmissibility tr = face_transmissibilities(g, lnK);
  auto tx = [&](int i, int j) { return tr.kx(j * (g.nx - 1) + i); };
  auto ty = [&](int i, int j) { return tr.ky(j * g.nx + i); };
  const double storage = problem.ss * g.dx() * g.dy() / problem.dt();

  double worst = 0.0;
  for (int step = 1; step < history.n_levels(); ++step) {
    double flux_scale =
        std::max(std::abs(boundary_flux(problem, lnK, history, step, true)), 1e-30);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 1; i + 1 < g.nx; ++i) {
        double hc = history.at(step, i, j);
        double r = storage * (hc - history.at(step - 1, i, j));
        r -= tx(i - 1, j) * (history.at(step, i - 1, j) - hc);
        r -= tx(i, j) * (history.at(step, i + 1, j) - hc);
        if (j > 0) r -= ty(i, j - 1) * (history.at(step, i, j - 1) - hc);
        if (j + 1 < g.ny) r -= ty(i, j) * (history.at(step, i, j + 1) - hc);
        worst = std::max(worst, std::abs(r) / flux_scale);
      }
  }
  return worst;
}

double boundary_flux(const FlowProblem& problem, const Eigen::VectorXd& lnK,
                     const HeadHistory& history, int t, bool left) {
  const Grid& g = problem.grid;
  Transmissibility tr = face_transmissibilities(g, lnK);
  double flux = 0.0;
  if (left) {
    for (int j = 0; j < g.ny; ++j)
      flux += tr.kx(j * (g.nx - 1) + 0) *
              (history.at(t, 0, j) - history.at(t, 1, j));
  } else {
    for (int j = 0; j < g.ny; ++j)
      flux += tr.kx(j * (g.nx - 1) + (g.nx - 2)) *
              (history.at(t, g.nx - 2, j) - history.at(t, g.nx - 1, j));
  }
  return flux;
}

void save_history_csv(const HeadHistory& history, const std::string& path) {
  std::ostringstream out;
  out << "i,j,t,h\n";
  for (int t = 0; t < history.n_levels(); ++t)
    for (int j = 0; j < history.grid.ny; ++j)
      for (int i = 0; i < history.grid.nx; ++i)
        out << i << "," << j << "," << t << ","
            << fmt17(history.at(t, i, j)) << "\n";
  write_text_file(path, out.str());
}

void save_history_binary(const HeadHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path);
  const char magic[8] = {'G', 'W', 'H', 'B', '1', 0, 0, 0};
  out.write(magic, 8);
  std::int32_t dims[3] = {history.grid.nx, history.grid.ny,
                          static_cast<std::int32_t>(history.n_levels())};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  double geo[5] = {history.grid.x0, history.grid.y0, history.grid.lx,
                   history.grid.ly, history.dt};
  out.write(reinterpret_cast<const char*>(geo), sizeof(geo));
  for (int t = 0; t < history.n_levels(); ++t) {
    Eigen::VectorXd row = history.h.row(t);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(sizeof(double)) * row.size());
  }
  if (!out) throw IoError("write failure: " + path);
}

HeadHistory load_history_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "GWHB1\0\0\0", 8) != 0)
    throw IoError("not a gwinv head-history binary: " + path);
  std::int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  double geo[5];
  in.read(reinterpret_cast<char*>(geo), sizeof(geo));
  HeadHistory hist;
  hist.grid = Grid{dims[0], dims[1], geo[0], geo[1], geo[2], geo[3]};
  hist.dt = geo[4];
  hist.h.resize(dims[2], hist.grid.cell_count());
  for (int t = 0; t < dims[2]; ++t) {
    Eigen::VectorXd row(hist.grid.cell_count());
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(sizeof(double)) * row.size());
    hist.h.row(t) = row.transpose();
  }
  if (!in) throw IoError("head-history binary truncated: " + path);
  return hist;
}

void save_observations_csv(const ObservationSet& set, const std::string& path) {
  std::ostringstream out;
  out << "x,y,t_index,value,std,kind\n";
  for (const auto& r : set.records)
    out << fmt17(r.x) << "," << fmt17(r.y) << "," << r.t_index << ","
        << fmt17(r.value) << "," << fmt17(r.stddev) << ","
        << (r.kind == ObsKind::head ? "head" : "logk") << "\n";
  write_text_file(path, out.str());
}

ObservationSet load_observations_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != "x,y,t_index,value,std,kind")
    throw IoError("bad observation CSV header: " + path);
  ObservationSet set;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto parts = split(line, ',');
    if (parts.size() != 6)
      throw IoError("bad observation CSV row: '" + line + "'");
    ObsRecord r;
    r.x = parse_double(parts[0]);
    r.y = parse_double(parts[1]);
    r.t_index = static_cast<int>(parse_int(parts[2]));
    r.value = parse_double(parts[3]);
    r.stddev = parse_double(parts[4]);
    std::string kind = trim(parts[5]);
    if (kind == "head")
      r.kind = ObsKind::head;
    else if (kind == "logk")
      r.kind = ObsKind::log_k;
    else
      throw IoError("bad observation kind: '" + kind + "'");
    set.records.push_back(r);
  }
  return set;
}

}  // namespace gwinv
