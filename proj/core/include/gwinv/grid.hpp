#pragma once

#include <array>

namespace gwinv {

// Uniform cell-centered rectangular grid. Cell (i, j) has its center at
// (x0 + (i+0.5)dx, y0 + (j+0.5)dy); flat indexing is x-fastest.
struct Grid {
  int nx = 0;
  int ny = 0;
  double x0 = 0.0;
  double y0 = 0.0;
  double lx = 0.0;
  double ly = 0.0;

  double dx() const { return lx / nx; }
  double dy() const { return ly / ny; }
  int cell_count() const { return nx * ny; }
  int index(int i, int j) const { return j * nx + i; }
  double xc(int i) const { return x0 + (i + 0.5) * dx(); }
  double yc(int j) const { return y0 + (j + 0.5) * dy(); }

  bool contains(double x, double y) const {
    return x >= x0 && x <= x0 + lx && y >= y0 && y <= y0 + ly;
  }

  bool operator==(const Grid&) const = default;
};

// Bilinear interpolation stencil on cell-center values: four flat cell
// indices with weights, plus the x/y derivative weights of the interpolant.
// Coordinates outside the cell-center hull are clamped to it, which makes the
// interpolant constant (zero derivative) in the clamped direction there.
struct BilinearStencil {
  std::array<int, 4> cell;
  std::array<double, 4> w;
  std::array<double, 4> wx;  // d(weight)/dx
  std::array<double, 4> wy;  // d(weight)/dy
};

BilinearStencil bilinear_stencil(const Grid& g, double x, double y);

}  // namespace gwinv
