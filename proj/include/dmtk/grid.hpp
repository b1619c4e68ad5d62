#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmtk/detail/numerics.hpp"
#include "dmtk/errors.hpp"
#include "dmtk/shapes.hpp"

namespace dmtk {

/// Uniform cell-centered grid over an axis-aligned box.  Cell (i,j,k) has
/// center origin + h*(i+1/2, j+1/2, k+1/2); the flat layout is row-major
/// with axis 0 varying fastest.
struct GridSpec {
  int dim = 2;
  Vec origin{-2.0, -2.0, 0.0};
  double spacing = 1.0 / 64.0;
  std::array<int, 3> cells{128, 128, 1};

  GridSpec() = default;
  GridSpec(int dim_, Vec origin_, double spacing_, std::array<int, 3> cells_)
      : dim(dim_), origin(origin_), spacing(spacing_), cells(cells_) {
    validate();
  }

  /// Cube grid over [lo,hi]^dim with n cells per axis.
  static GridSpec cube(int dim, double lo, double hi, int n) {
    GridSpec g;
    g.dim = dim;
    g.origin = Vec{lo, dim > 1 ? lo : 0.0, dim > 2 ? lo : 0.0};
    g.spacing = (hi - lo) / n;
    g.cells = {n, dim > 1 ? n : 1, dim > 2 ? n : 1};
    g.validate();
    return g;
  }

  void validate() const {
    if (dim < 1 || dim > 3) throw ConfigError("GridSpec: dim must be 1, 2, or 3");
    if (!(spacing > 0.0)) throw ConfigError("GridSpec: spacing must be positive");
    for (int a = 0; a < dim; ++a)
      if (cells[a] < 4) throw ConfigError("GridSpec: needs at least 4 cells per axis");
    for (int a = dim; a < 3; ++a)
      if (cells[a] != 1) throw ConfigError("GridSpec: unused axes must have 1 cell");
  }

  std::int64_t cell_count() const {
    return std::int64_t(cells[0]) * cells[1] * cells[2];
  }
  double cell_volume() const {
    double v = 1.0;
    for (int a = 0; a < dim; ++a) v *= spacing;
    return v;
  }
  Vec extent_hi() const {
    return {origin.x + spacing * cells[0], dim > 1 ? origin.y + spacing * cells[1] : 0.0,
            dim > 2 ? origin.z + spacing * cells[2] : 0.0};
  }
  std::int64_t index(int i, int j = 0, int k = 0) const {
    return (std::int64_t(k) * cells[1] + j) * cells[0] + i;
  }
  Vec center(int i, int j = 0, int k = 0) const {
    return {origin.x + spacing * (i + 0.5), dim > 1 ? origin.y + spacing * (j + 0.5) : 0.0,
            dim > 2 ? origin.z + spacing * (k + 0.5) : 0.0};
  }
  /// Cell containing p (clamped to the grid).
  std::array<int, 3> locate(const Vec& p) const {
    std::array<int, 3> c{0, 0, 0};
    for (int a = 0; a < dim; ++a) {
      int i = static_cast<int>(std::floor((p[a] - origin[a]) / spacing));
      c[a] = std::clamp(i, 0, cells[a] - 1);
    }
    return c;
  }
  bool same_layout(const GridSpec& o) const {
    return dim == o.dim && cells == o.cells && spacing == o.spacing &&
           dist(origin, o.origin) < 1e-12;
  }
};

/// Scalar samples on a GridSpec, one value per cell center.
struct ScalarGridField {
  GridSpec grid;
  std::vector<double> values;

  ScalarGridField() = default;
  explicit ScalarGridField(const GridSpec& g, double fill = 0.0)
      : grid(g), values(static_cast<size_t>(g.cell_count()), fill) {}

  double at(int i, int j = 0, int k = 0) const { return values[grid.index(i, j, k)]; }
  double& at(int i, int j = 0, int k = 0) { return values[grid.index(i, j, k)]; }

  /// Multilinear interpolation at an arbitrary point; clamps to the grid.
  double sample(const Vec& p) const {
    double w[3][2];
    int base[3] = {0, 0, 0};
    for (int a = 0; a < grid.dim; ++a) {
      double u = (p[a] - grid.origin[a]) / grid.spacing - 0.5;
      double fl = std::floor(u);
      int i0 = std::clamp(static_cast<int>(fl), 0, grid.cells[a] - 1);
      int i1 = std::min(i0 + 1, grid.cells[a] - 1);
      double f = std::clamp(u - fl, 0.0, 1.0);
      base[a] = i0;
      w[a][0] = (i1 == i0) ? 1.0 : 1.0 - f;
      w[a][1] = (i1 == i0) ? 0.0 : f;
    }
    double out = 0.0;
    int n0 = grid.dim > 0 ? 2 : 1, n1 = grid.dim > 1 ? 2 : 1, n2 = grid.dim > 2 ? 2 : 1;
    for (int c = 0; c < n2; ++c)
      for (int b = 0; b < n1; ++b)
        for (int a = 0; a < n0; ++a) {
          double wt = w[0][a] * (grid.dim > 1 ? w[1][b] : 1.0) * (grid.dim > 2 ? w[2][c] : 1.0);
          if (wt == 0.0) continue;
          out += wt * values[grid.index(std::min(base[0] + a, grid.cells[0] - 1),
                                        grid.dim > 1 ? std::min(base[1] + b, grid.cells[1] - 1) : 0,
                                        grid.dim > 2 ? std::min(base[2] + c, grid.cells[2] - 1) : 0)];
        }
    return out;
  }

  /// Sum of values times cell volume.
  double mass() const {
    detail::KahanSum s;
    for (double v : values) s.add(v);
    return s.value() * grid.cell_volume();
  }
  double max_value() const { return *std::max_element(values.begin(), values.end()); }
  double min_value() const { return *std::min_element(values.begin(), values.end()); }
};

/// One scalar field per component.
struct VectorGridField {
  GridSpec grid;
  std::vector<ScalarGridField> comp;

  VectorGridField() = default;
  explicit VectorGridField(const GridSpec& g) : grid(g) {
    for (int a = 0; a < g.dim; ++a) comp.emplace_back(g);
  }
  Vec at(int i, int j = 0, int k = 0) const {
    Vec v;
    for (int a = 0; a < grid.dim; ++a) v[a] = comp[a].at(i, j, k);
    return v;
  }
  Vec sample(const Vec& p) const {
    Vec v;
    for (int a = 0; a < grid.dim; ++a) v[a] = comp[a].sample(p);
    return v;
  }
};

// ---------------------------------------------------------------------------
// Mollifier kernels
// ---------------------------------------------------------------------------

/// Compactly supported, radially symmetric, unit-mass kernel.
///
/// smooth_bump is the standard exponential bump.  plateau equals its maximum
/// on a central ball (radius epsilon/2 in dim >= 2); in dim 1 a unit-mass
/// kernel that is 1 on B(0,1/2) cannot exist, so the plateau radius drops to
/// 0.4*epsilon there and derived constants must account for it.
class MollifierKernel {
public:
  enum class Kind { smooth_bump, plateau };

  MollifierKernel(Kind kind, double epsilon, int dim) : kind_(kind), eps_(epsilon), dim_(dim) {
    if (!(epsilon > 0.0)) throw ConfigError("MollifierKernel: epsilon must be positive");
    if (dim < 1 || dim > 3) throw ConfigError("MollifierKernel: dim must be 1..3");
    if (kind_ == Kind::plateau) {
      plateau_radius_ = dim_ == 1 ? 0.4 : 0.5;
      calibrate_plateau();
    } else {
      norm_ = 1.0 / radial_mass([](double r) { return bump_profile(r); });
    }
  }

  static MollifierKernel bump(double epsilon, int dim) {
    return MollifierKernel(Kind::smooth_bump, epsilon, dim);
  }
  static MollifierKernel plateau(double epsilon, int dim) {
    return MollifierKernel(Kind::plateau, epsilon, dim);
  }

  Kind kind() const { return kind_; }
  double epsilon() const { return eps_; }
  int dim() const { return dim_; }
  double plateau_radius_fraction() const { return plateau_radius_; }

  /// Normalized profile on the unit ball: integral over R^dim equals 1.
  double unit_profile(double r) const {
    if (r >= 1.0) return 0.0;
    if (kind_ == Kind::smooth_bump) return norm_ * bump_profile(r);
    if (r <= plateau_radius_) return norm_;
    double w = (r - plateau_radius_) / (1.0 - plateau_radius_);
    return norm_ * std::pow(smooth_step_down(w), tail_exponent_);
  }

  /// Scaled kernel rho_eps(offset) = eps^-dim * rho(offset/eps).
  double density(const Vec& offset) const {
    double scale = std::pow(eps_, -dim_);
    return scale * unit_profile(norm(offset) / eps_);
  }

  /// Continuum mass (for verification; equals 1 up to quadrature tolerance).
  double continuum_mass() const {
    return radial_mass([this](double r) { return unit_profile(r); });
  }

private:
  Kind kind_;
  double eps_;
  int dim_;
  double norm_ = 1.0;
  double plateau_radius_ = 0.5;
  double tail_exponent_ = 1.0;

  static double bump_profile(double r) {
    if (r >= 1.0) return 0.0;
    return std::exp(-1.0 / (1.0 - r * r));
  }

  /// C-infinity step: 1 at w=0, 0 at w=1, flat at both ends.
  static double smooth_step_down(double w) {
    auto f = [](double t) { return t > 0.0 ? std::exp(-1.0 / t) : 0.0; };
    double a = f(1.0 - w), b = f(w);
    return a / (a + b);
  }

  double sphere_area() const {
    // H^{dim-1} measure of the unit sphere in R^dim.
    return dim_ == 1 ? 2.0 : (dim_ == 2 ? 2.0 * M_PI : 4.0 * M_PI);
  }

  double radial_mass(const std::function<double(double)>& prof) const {
    return sphere_area() *
           detail::integrate([&](double r) { return prof(r) * std::pow(r, dim_ - 1); }, 0.0, 1.0,
                             1e-14);
  }

  void calibrate_plateau() {
    // Unit value on the plateau; tail exponent chosen so total mass is 1.
    auto mass_at = [&](double gamma) {
      auto prof = [&](double r) {
        if (r <= plateau_radius_) return 1.0;
        double w = (r - plateau_radius_) / (1.0 - plateau_radius_);
        return std::pow(smooth_step_down(w), gamma);
      };
      return radial_mass(prof);
    };
    double lo = 1e-6, hi = 64.0;
    if (mass_at(lo) < 1.0) throw ConfigError("plateau kernel infeasible in this dimension");
    for (int it = 0; it < 200; ++it) {
      double mid = 0.5 * (lo + hi);
      if (mass_at(mid) > 1.0)
        lo = mid;
      else
        hi = mid;
    }
    tail_exponent_ = 0.5 * (lo + hi);
    norm_ = 1.0 / mass_at(tail_exponent_);  // removes the residual bisection error
  }
};

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

/// Exact {0,1} indicator by cell-center sampling.  The shape's bounding box
/// must sit strictly inside the grid with the given margin so later
/// convolutions neither wrap nor truncate.
inline ScalarGridField rasterize(const ShapeSpec& shape, const GridSpec& grid,
                                 double min_margin = -1.0) {
  grid.validate();
  ScalarGridField out(grid);
  if (shape.is_empty_spec()) return out;

  BBox box = shape.bounding_box();
  if (!box.finite(grid.dim))
    throw BoundsError("rasterize: shape has unbounded extent; wrap it in an intersection");
  double margin = std::max(min_margin, 2.0 * grid.spacing);
  Vec hi = grid.extent_hi();
  for (int a = 0; a < grid.dim; ++a) {
    if (box.lo[a] - grid.origin[a] < margin || hi[a] - box.hi[a] < margin)
      throw BoundsError("rasterize: shape touches the margin zone on axis " + std::to_string(a));
  }

  for (int k = 0; k < grid.cells[2]; ++k)
    for (int j = 0; j < grid.cells[1]; ++j)
      for (int i = 0; i < grid.cells[0]; ++i)
        out.at(i, j, k) = shape.contains(grid.center(i, j, k)) ? 1.0 : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Mollification (discrete convolution via FFT)
// ---------------------------------------------------------------------------

namespace detail {

inline std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

/// Cyclic convolution of `data` with `kernel` (same layout), in place into
/// the returned vector.  Sizes: n = {cells[2], cells[1], cells[0]} for FFTW's
/// row-major convention (last dimension fastest).
inline std::vector<double> cyclic_convolve(const GridSpec& grid, const std::vector<double>& data,
                                           const std::vector<double>& kernel) {
  int rank = grid.dim;
  int n[3] = {1, 1, 1};
  // FFTW wants the fastest-varying dimension last; ours is axis 0.
  for (int a = 0; a < rank; ++a) n[a] = grid.cells[rank - 1 - a];
  std::int64_t total = grid.cell_count();
  std::int64_t complex_count = 1;
  for (int a = 0; a < rank - 1; ++a) complex_count *= n[a];
  complex_count *= n[rank - 1] / 2 + 1;

  std::vector<double> in(data);
  std::vector<std::complex<double>> fa(complex_count), fb(complex_count);
  std::vector<double> out(total);

  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_plan fwd = fftw_plan_dft_r2c(rank, n, in.data(),
                                      reinterpret_cast<fftw_complex*>(fa.data()), FFTW_ESTIMATE);
    fftw_execute(fwd);
    std::memcpy(in.data(), kernel.data(), sizeof(double) * total);
    fftw_execute_dft_r2c(fwd, in.data(), reinterpret_cast<fftw_complex*>(fb.data()));
    fftw_destroy_plan(fwd);

    for (std::int64_t idx = 0; idx < complex_count; ++idx) fa[idx] *= fb[idx];

    fftw_plan bwd = fftw_plan_dft_c2r(rank, n, reinterpret_cast<fftw_complex*>(fa.data()),
                                      out.data(), FFTW_ESTIMATE);
    fftw_execute(bwd);
    fftw_destroy_plan(bwd);
  }
  double scale = 1.0 / static_cast<double>(total);
  for (double& v : out) v *= scale;
  return out;
}

}  // namespace detail

/// The kernel sampled at cell offsets and renormalized to exact unit
/// discrete mass (sum of weights * h^dim == 1).
inline std::vector<std::pair<std::array<int, 3>, double>> sampled_kernel_stencil(
    const MollifierKernel& kernel, const GridSpec& grid) {
  double h = grid.spacing;
  int radius = static_cast<int>(std::ceil(kernel.epsilon() / h));
  std::vector<std::pair<std::array<int, 3>, double>> stencil;
  int rj = grid.dim > 1 ? radius : 0;
  int rk = grid.dim > 2 ? radius : 0;
  detail::KahanSum total;
  for (int k = -rk; k <= rk; ++k)
    for (int j = -rj; j <= rj; ++j)
      for (int i = -radius; i <= radius; ++i) {
        Vec off{i * h, j * h, k * h};
        double w = kernel.density(off);
        if (w > 0.0) {
          stencil.push_back({{i, j, k}, w});
          total.add(w);
        }
      }
  double cellvol = grid.cell_volume();
  double scale = 1.0 / (total.value() * cellvol);
  for (auto& s : stencil) s.second *= scale;
  return stencil;
}

/// Discrete convolution with the sampled, renormalized kernel.  The output
/// is clamped to [0,1] (FFT roundoff only); total mass is preserved to
/// machine accuracy.  Requires epsilon >= 2h and the field's support to be
/// at least epsilon away from the grid border.
inline ScalarGridField mollify(const ScalarGridField& chi, const MollifierKernel& kernel) {
  const GridSpec& grid = chi.grid;
  double h = grid.spacing;
  if (kernel.epsilon() < 2.0 * h)
    throw ResolutionError("mollify: epsilon " + std::to_string(kernel.epsilon()) +
                          " below 2h = " + std::to_string(2.0 * h));
  if (kernel.dim() != grid.dim) throw ConfigError("mollify: kernel/grid dimension mismatch");

  int radius = static_cast<int>(std::ceil(kernel.epsilon() / h));
  // Support check: convolution must never wrap around the torus.
  {
    auto nonzero_in_border = [&](int axis) {
      for (int k = 0; k < grid.cells[2]; ++k)
        for (int j = 0; j < grid.cells[1]; ++j)
          for (int i = 0; i < grid.cells[0]; ++i) {
            int idx[3] = {i, j, k};
            if (idx[axis] >= radius && idx[axis] < grid.cells[axis] - radius) continue;
            if (chi.at(i, j, k) != 0.0) return true;
          }
      return false;
    };
    for (int a = 0; a < grid.dim; ++a)
      if (grid.cells[a] <= 2 * radius || nonzero_in_border(a))
        throw BoundsError("mollify: field support within epsilon of the grid border");
  }

  auto stencil = sampled_kernel_stencil(kernel, grid);
  std::vector<double> kgrid(static_cast<size_t>(grid.cell_count()), 0.0);
  double cellvol = grid.cell_volume();
  for (const auto& [offset, w] : stencil) {
    int i = (offset[0] + grid.cells[0]) % grid.cells[0];
    int j = (offset[1] + grid.cells[1]) % grid.cells[1];
    int k = (offset[2] + grid.cells[2]) % grid.cells[2];
    kgrid[grid.index(i, j, k)] = w * cellvol;  // discrete weights summing to 1
  }

  ScalarGridField out(grid);
  out.values = detail::cyclic_convolve(grid, chi.values, kgrid);
  for (double& v : out.values) v = std::clamp(v, 0.0, 1.0);
  return out;
}

/// Centered finite-difference gradient, one-sided at the grid margin.
inline VectorGridField gradient(const ScalarGridField& u) {
  const GridSpec& g = u.grid;
  for (int a = 0; a < g.dim; ++a)
    if (g.cells[a] < 3) throw ConfigError("gradient: needs at least 3 cells per axis");
  VectorGridField out(g);
  double inv2h = 1.0 / (2.0 * g.spacing), invh = 1.0 / g.spacing;
  for (int k = 0; k < g.cells[2]; ++k)
    for (int j = 0; j < g.cells[1]; ++j)
      for (int i = 0; i < g.cells[0]; ++i) {
        int idx[3] = {i, j, k};
        for (int a = 0; a < g.dim; ++a) {
          int lo[3] = {i, j, k}, hi[3] = {i, j, k};
          double scale;
          if (idx[a] == 0) {
            hi[a] = idx[a] + 1;
            scale = invh;
          } else if (idx[a] == g.cells[a] - 1) {
            lo[a] = idx[a] - 1;
            scale = invh;
          } else {
            lo[a] = idx[a] - 1;
            hi[a] = idx[a] + 1;
            scale = inv2h;
          }
          out.comp[a].at(i, j, k) =
              scale * (u.at(hi[0], hi[1], hi[2]) - u.at(lo[0], lo[1], lo[2]));
        }
      }
  return out;
}

/// L1 mass of the gradient: sum |grad u| h^dim.
inline double gradient_mass(const ScalarGridField& u) {
  VectorGridField g = gradient(u);
  detail::KahanSum s;
  for (std::int64_t idx = 0; idx < u.grid.cell_count(); ++idx) {
    double q = 0.0;
    for (int a = 0; a < u.grid.dim; ++a) {
      double v = g.comp[a].values[idx];
      q += v * v;
    }
    s.add(std::sqrt(q));
  }
  return s.value() * u.grid.cell_volume();
}

// ---------------------------------------------------------------------------
// Flat binary export (row-major, 8-byte little-endian floats, JSON header)
// ---------------------------------------------------------------------------

inline void write_field(const ScalarGridField& f, const std::string& basename) {
  nlohmann::json header;
  header["dim"] = f.grid.dim;
  header["origin"] = {f.grid.origin.x, f.grid.origin.y, f.grid.origin.z};
  header["spacing"] = f.grid.spacing;
  header["cells"] = {f.grid.cells[0], f.grid.cells[1], f.grid.cells[2]};
  std::ofstream js(basename + ".json");
  js << header.dump(2) << "\n";

  std::ofstream bin(basename + ".f64", std::ios::binary);
  static_assert(sizeof(double) == 8);
  bin.write(reinterpret_cast<const char*>(f.values.data()),
            static_cast<std::streamsize>(f.values.size() * sizeof(double)));
}

inline ScalarGridField read_field(const std::string& basename) {
  std::ifstream js(basename + ".json");
  if (!js) throw ConfigError("read_field: missing header " + basename + ".json");
  nlohmann::json header = nlohmann::json::parse(js);
  GridSpec g;
  g.dim = header.at("dim").get<int>();
  auto o = header.at("origin");
  g.origin = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()};
  g.spacing = header.at("spacing").get<double>();
  auto c = header.at("cells");
  g.cells = {c[0].get<int>(), c[1].get<int>(), c[2].get<int>()};
  g.validate();
  ScalarGridField f(g);
  std::ifstream bin(basename + ".f64", std::ios::binary);
  if (!bin) throw ConfigError("read_field: missing data " + basename + ".f64");
  bin.read(reinterpret_cast<char*>(f.values.data()),
           static_cast<std::streamsize>(f.values.size() * sizeof(double)));
  if (!bin) throw ConfigError("read_field: truncated data in " + basename + ".f64");
  return f;
}

}  // namespace dmtk
