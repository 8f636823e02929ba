#include "gwinv/field.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

#include "gwinv/common.hpp"

namespace gwinv {

double CovarianceSpec::operator()(double dx, double dy) const {
  double ax = std::abs(dx) / eta_x;
  double ay = std::abs(dy) / eta_y;
  if (exponent == 1.0) return variance * std::exp(-ax - ay);
  return variance * std::exp(-std::pow(ax, exponent) - std::pow(ay, exponent));
}

void CovarianceSpec::validate() const {
  if (!(variance > 0)) throw ConfigError("covariance: variance must be > 0");
  if (!(eta_x > 0) || !(eta_y > 0))
    throw ConfigError("covariance: correlation lengths must be > 0");
  if (!(exponent > 0)) throw ConfigError("covariance: exponent must be > 0");
}

double KleBasis::energy_fraction() const {
  if (total_energy <= 0) return 0.0;
  return lambda.sum() / total_energy;
}

namespace {

// Shared full-spectrum decomposition used by both build entry points.
struct Spectrum {
  Eigen::VectorXd lambda;  // descending, clamped
  Eigen::MatrixXd f;       // cell_count x cell_count
  double total_energy = 0.0;
};

Spectrum decompose(const CovarianceSpec& cov, const Grid& grid) {
  cov.validate();
  if (grid.nx < 2 || grid.ny < 2)
    throw ConfigError("build_kle: grid needs at least 2 cells per direction");
  const int n = grid.cell_count();
  const double area = grid.dx() * grid.dy();

  Eigen::MatrixXd B(n, n);
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) {
      int a = grid.index(i, j);
      for (int jj = 0; jj < grid.ny; ++jj)
        for (int ii = 0; ii < grid.nx; ++ii) {
          int b = grid.index(ii, jj);
          if (b > a) continue;
          double c = cov(grid.xc(i) - grid.xc(ii), grid.yc(j) - grid.yc(jj));
          B(a, b) = area * c;
          B(b, a) = area * c;
        }
    }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  if (es.info() != Eigen::Success)
    throw NumericError("build_kle: eigendecomposition failed");

  Spectrum s;
  s.total_energy = area * n * cov.variance;  // = trace(B)
  s.lambda.resize(n);
  s.f.resize(n, n);
  const double lambda_max = es.eigenvalues()(n - 1);
  if (!(lambda_max > 0))
    throw NumericError("build_kle: numerical covariance has no positive modes");
  const double clamp = 1e-12 * lambda_max;
  // Eigen returns ascending order; store descending with the sign convention
  // that each eigenvector's largest-magnitude entry is positive.
  const double inv_sqrt_area = 1.0 / std::sqrt(area);
  for (int k = 0; k < n; ++k) {
    int src = n - 1 - k;
    double lam = es.eigenvalues()(src);
    s.lambda(k) = lam < clamp ? 0.0 : lam;
    Eigen::VectorXd vec = es.eigenvectors().col(src);
    int imax = 0;
    vec.cwiseAbs().maxCoeff(&imax);
    if (vec(imax) < 0) vec = -vec;
    // Orthonormal in R^n -> orthonormal in discrete L2 after 1/sqrt(dA).
    s.f.col(k) = vec * inv_sqrt_area;
  }
  return s;
}

KleBasis take_terms(Spectrum&& s, const CovarianceSpec& cov, const Grid& grid,
                    int n_terms) {
  KleBasis basis;
  basis.grid = grid;
  basis.cov = cov;
  basis.lambda = s.lambda.head(n_terms);
  basis.f = s.f.leftCols(n_terms);
  basis.total_energy = s.total_energy;
  return basis;
}

}  // namespace

KleBasis build_kle(const CovarianceSpec& cov, const Grid& grid, int term_count) {
  if (term_count < 1) throw ConfigError("build_kle: term_count must be >= 1");
  Spectrum s = decompose(cov, grid);
  if (term_count > s.lambda.size())
    throw ConfigError("build_kle: term_count exceeds grid mode count");
  return take_terms(std::move(s), cov, grid, term_count);
}

KleBasis build_kle_energy(const CovarianceSpec& cov, const Grid& grid,
                          double energy_target) {
  if (!(energy_target > 0) || energy_target > 1.0)
    throw ConfigError("build_kle: energy_target must be in (0, 1]");
  Spectrum s = decompose(cov, grid);
  double acc = 0.0;
  const double need = energy_target * s.total_energy;
  for (int k = 0; k < s.lambda.size(); ++k) {
    acc += s.lambda(k);
    if (acc >= need) return take_terms(std::move(s), cov, grid, k + 1);
  }
  throw NumericError("build_kle: energy target " + fmt17(energy_target) +
                     " unreachable; full spectrum holds " +
                     fmt17(acc / s.total_energy));
}

double KleBasis::evaluate(const Eigen::VectorXd& xi, double x, double y) const {
  if (xi.size() != n_terms())
    throw ConfigError("evaluate_field: xi length does not match basis");
  if (!grid.contains(x, y))
    throw ConfigError("evaluate_field: point (" + fmt17(x) + ", " + fmt17(y) +
                      ") outside domain");
  BilinearStencil s = bilinear_stencil(grid, x, y);
  double acc = cov.mean;
  for (int k = 0; k < n_terms(); ++k) {
    double fk = s.w[0] * f(s.cell[0], k) + s.w[1] * f(s.cell[1], k) +
                s.w[2] * f(s.cell[2], k) + s.w[3] * f(s.cell[3], k);
    acc += std::sqrt(lambda(k)) * fk * xi(k);
  }
  return acc;
}

void KleBasis::mode_values(double x, double y, double* phi, double* phi_x,
                           double* phi_y) const {
  BilinearStencil s = bilinear_stencil(grid, x, y);
  for (int k = 0; k < n_terms(); ++k) {
    double f0 = f(s.cell[0], k), f1 = f(s.cell[1], k), f2 = f(s.cell[2], k),
           f3 = f(s.cell[3], k);
    double root = std::sqrt(lambda(k));
    if (phi) phi[k] = root * (s.w[0] * f0 + s.w[1] * f1 + s.w[2] * f2 + s.w[3] * f3);
    if (phi_x)
      phi_x[k] = root * (s.wx[0] * f0 + s.wx[1] * f1 + s.wx[2] * f2 + s.wx[3] * f3);
    if (phi_y)
      phi_y[k] = root * (s.wy[0] * f0 + s.wy[1] * f1 + s.wy[2] * f2 + s.wy[3] * f3);
  }
}

Eigen::VectorXd KleBasis::evaluate_grid(const Eigen::VectorXd& xi) const {
  if (xi.size() != n_terms())
    throw ConfigError("evaluate_field: xi length does not match basis");
  Eigen::VectorXd scaled = lambda.array().sqrt() * xi.array();
  return (f * scaled).array() + cov.mean;
}

Eigen::VectorXd KleBasis::project_grid(const Eigen::VectorXd& field_cells) const {
  if (field_cells.size() != grid.cell_count())
    throw ConfigError("project_grid: field size does not match grid");
  const double area = grid.dx() * grid.dy();
  Eigen::VectorXd centered = field_cells.array() - cov.mean;
  Eigen::VectorXd xi = f.transpose() * centered * area;
  for (int k = 0; k < n_terms(); ++k)
    xi(k) = lambda(k) > 0 ? xi(k) / std::sqrt(lambda(k)) : 0.0;
  return xi;
}

Eigen::VectorXd sample_xi(Rng& rng, int n) {
  if (n < 1) throw ConfigError("sample_xi: n must be >= 1");
  Eigen::VectorXd xi(n);
  for (int i = 0; i < n; ++i) xi(i) = rng.normal();
  return xi;
}

void save_kle(const KleBasis& basis, const std::string& path) {
  std::ostringstream out;
  out << "gwinv-kle 1\n";
  out << "grid " << basis.grid.nx << " " << basis.grid.ny << " "
      << fmt17(basis.grid.x0) << " " << fmt17(basis.grid.y0) << " "
      << fmt17(basis.grid.lx) << " " << fmt17(basis.grid.ly) << "\n";
  out << "cov " << fmt17(basis.cov.variance) << " " << fmt17(basis.cov.eta_x)
      << " " << fmt17(basis.cov.eta_y) << " " << fmt17(basis.cov.exponent)
      << " " << fmt17(basis.cov.mean) << "\n";
  out << "terms " << basis.n_terms() << " " << fmt17(basis.total_energy) << "\n";
  out << "lambda\n";
  for (int k = 0; k < basis.n_terms(); ++k) out << fmt17(basis.lambda(k)) << "\n";
  out << "modes\n";
  for (int c = 0; c < basis.grid.cell_count(); ++c) {
    for (int k = 0; k < basis.n_terms(); ++k) {
      if (k) out << " ";
      out << fmt17(basis.f(c, k));
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

KleBasis load_kle(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::string tok;
  int version = 0;
  in >> tok >> version;
  if (tok != "gwinv-kle" || version != 1)
    throw IoError("not a gwinv-kle v1 file: " + path);
  KleBasis basis;
  in >> tok;
  if (tok != "grid") throw IoError("kle file: expected 'grid'");
  in >> basis.grid.nx >> basis.grid.ny >> basis.grid.x0 >> basis.grid.y0 >>
      basis.grid.lx >> basis.grid.ly;
  in >> tok;
  if (tok != "cov") throw IoError("kle file: expected 'cov'");
  in >> basis.cov.variance >> basis.cov.eta_x >> basis.cov.eta_y >>
      basis.cov.exponent >> basis.cov.mean;
  int n_terms = 0;
  in >> tok;
  if (tok != "terms") throw IoError("kle file: expected 'terms'");
  in >> n_terms >> basis.total_energy;
  in >> tok;
  if (tok != "lambda") throw IoError("kle file: expected 'lambda'");
  basis.lambda.resize(n_terms);
  for (int k = 0; k < n_terms; ++k) in >> basis.lambda(k);
  in >> tok;
  if (tok != "modes") throw IoError("kle file: expected 'modes'");
  basis.f.resize(basis.grid.cell_count(), n_terms);
  for (int c = 0; c < basis.grid.cell_count(); ++c)
    for (int k = 0; k < n_terms; ++k) in >> basis.f(c, k);
  if (!in) throw IoError("kle file truncated: " + path);
  return basis;
}

}  // namespace gwinv
