#include "gwinv/grid.hpp"

#include <algorithm>
#include <cmath>

namespace gwinv {

BilinearStencil bilinear_stencil(const Grid& g, double x, double y) {
  const double dx = g.dx(), dy = g.dy();
  // Clamp to the cell-center hull; tx, ty are fractions within the cell pair.
  double fx = (x - g.xc(0)) / dx;
  double fy = (y - g.yc(0)) / dy;
  double cx = std::clamp(fx, 0.0, static_cast<double>(g.nx - 1));
  double cy = std::clamp(fy, 0.0, static_cast<double>(g.ny - 1));
  int i0 = std::min(static_cast<int>(cx), g.nx - 2);
  int j0 = std::min(static_cast<int>(cy), g.ny - 2);
  i0 = std::max(i0, 0);
  j0 = std::max(j0, 0);
  double tx = cx - i0;
  double ty = cy - j0;
  // Derivative factors vanish where the coordinate was clamped.
  double gx = (fx > 0.0 && fx < g.nx - 1) ? 1.0 / dx : 0.0;
  double gy = (fy > 0.0 && fy < g.ny - 1) ? 1.0 / dy : 0.0;

  BilinearStencil s;
  s.cell = {g.index(i0, j0), g.index(i0 + 1, j0), g.index(i0, j0 + 1),
            g.index(i0 + 1, j0 + 1)};
  s.w = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
  s.wx = {-(1 - ty) * gx, (1 - ty) * gx, -ty * gx, ty * gx};
  s.wy = {-(1 - tx) * gy, -tx * gy, (1 - tx) * gy, tx * gy};
  return s;
}

}  // namespace gwinv
