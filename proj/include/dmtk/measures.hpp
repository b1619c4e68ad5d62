#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dmtk/geometry.hpp"
#include "dmtk/grid.hpp"

namespace dmtk {

/// Signed Radon measure in the structural form used throughout: an
/// absolutely continuous density against Lebesgue, surface-concentrated
/// parts carried by meshes with per-facet densities, and exact atoms.
/// Region arguments are grid masks; facet membership is decided by the
/// facet midpoint, atoms by exact containment.
class SignedMeasure {
public:
  struct SurfacePart {
    SurfaceMesh mesh;
    std::vector<double> density;  // per facet, units 1/length^{N-1}
  };
  struct Atom {
    Vec point;
    double weight = 0.0;
  };

  std::optional<ScalarGridField> ac;
  std::vector<SurfacePart> surface_parts;
  std::vector<Atom> atoms;

  SignedMeasure() = default;

  static SignedMeasure zero() { return SignedMeasure(); }

  static SignedMeasure from_density(ScalarGridField density) {
    SignedMeasure m;
    m.ac = std::move(density);
    return m;
  }

  static SignedMeasure lebesgue(const GridSpec& grid) {
    return from_density(ScalarGridField(grid, 1.0));
  }

  void add_surface_part(SurfaceMesh mesh, std::vector<double> density) {
    if (mesh.facets.size() != density.size())
      throw ConfigError("SignedMeasure: density size must match facet count");
    surface_parts.push_back({std::move(mesh), std::move(density)});
  }

  void add_surface_part(SurfaceMesh mesh, double constant_density) {
    std::vector<double> d(mesh.facets.size(), constant_density);
    add_surface_part(std::move(mesh), std::move(d));
  }

  void add_atom(Vec point, double weight) { atoms.push_back({point, weight}); }

  bool has_atoms() const { return !atoms.empty(); }

  /// Signed value on a masked region.
  double eval(const ScalarGridField& mask) const {
    check_atoms_clear_of_boundary(mask);
    return accumulate(mask, /*absolute=*/false);
  }

  /// Total variation on a masked region.
  double tv(const ScalarGridField& mask) const { return accumulate(mask, /*absolute=*/true); }

  double eval_total() const { return accumulate(nullptr, false, nullptr); }
  double tv_total() const { return accumulate(nullptr, true, nullptr); }

  /// Integral of a test function against the measure, restricted to a mask
  /// (pass nullptr for the whole space).
  double integrate(const std::function<double(Vec)>& phi, const ScalarGridField* mask) const {
    return accumulate(mask, false, &phi);
  }

private:
  static bool mask_contains(const ScalarGridField& mask, const Vec& p) {
    auto c = mask.grid.locate(p);
    return mask.at(c[0], c[1], c[2]) > 0.5;
  }

  void check_atoms_clear_of_boundary(const ScalarGridField& mask) const {
    const GridSpec& g = mask.grid;
    for (const auto& a : atoms) {
      auto c = g.locate(a.point);
      double v0 = mask.at(c[0], c[1], c[2]);
      for (int dk = -1; dk <= (g.dim > 2 ? 1 : -1); ++dk)
        for (int dj = -1; dj <= (g.dim > 1 ? 1 : -1); ++dj)
          for (int di = -1; di <= 1; ++di) {
            int i = std::clamp(c[0] + di, 0, g.cells[0] - 1);
            int j = g.dim > 1 ? std::clamp(c[1] + dj, 0, g.cells[1] - 1) : 0;
            int k = g.dim > 2 ? std::clamp(c[2] + dk, 0, g.cells[2] - 1) : 0;
            if (mask.at(i, j, k) != v0)
              throw AtomOnBoundary("eval: region boundary within one cell of an atom");
          }
    }
  }

  double accumulate(const ScalarGridField& mask, bool absolute) const {
    return accumulate(&mask, absolute, nullptr);
  }

  double accumulate(const ScalarGridField* mask, bool absolute,
                    const std::function<double(Vec)>* phi = nullptr) const {
    detail::KahanSum s;
    if (ac) {
      const GridSpec& g = ac->grid;
      if (mask && !mask->grid.same_layout(g))
        throw ConfigError("SignedMeasure: mask grid incompatible with density grid");
      double vol = g.cell_volume();
      for (int k = 0; k < g.cells[2]; ++k)
        for (int j = 0; j < g.cells[1]; ++j)
          for (int i = 0; i < g.cells[0]; ++i) {
            if (mask && mask->at(i, j, k) <= 0.5) continue;
            double v = ac->at(i, j, k);
            if (phi) v *= (*phi)(g.center(i, j, k));
            s.add((absolute ? std::abs(v) : v) * vol);
          }
    }
    for (const auto& part : surface_parts)
      for (size_t f = 0; f < part.mesh.facets.size(); ++f) {
        const Facet& fc = part.mesh.facets[f];
        if (mask && !mask_contains(*mask, fc.midpoint)) continue;
        double v = part.density[f] * fc.area;
        if (phi) v *= (*phi)(fc.midpoint);
        s.add(absolute ? std::abs(v) : v);
      }
    for (const auto& a : atoms) {
      if (mask && !mask_contains(*mask, a.point)) continue;
      double v = a.weight;
      if (phi) v *= (*phi)(a.point);
      s.add(absolute ? std::abs(v) : v);
    }
    return s.value();
  }
};

/// ||mu|| of the symmetric difference of two masked regions on one grid.
inline double symdiff_measure(const SignedMeasure& mu, const ScalarGridField& mask_a,
                              const ScalarGridField& mask_b) {
  if (!mask_a.grid.same_layout(mask_b.grid))
    throw ConfigError("symdiff_measure: masks on different grids");
  ScalarGridField sym(mask_a.grid);
  for (size_t i = 0; i < sym.values.size(); ++i)
    sym.values[i] = ((mask_a.values[i] > 0.5) != (mask_b.values[i] > 0.5)) ? 1.0 : 0.0;
  return mu.tv(sym);
}

/// mollify() without the [0,1] clamp, for signed densities.
inline ScalarGridField mollify_unclamped(const ScalarGridField& f, const MollifierKernel& kernel) {
  const GridSpec& grid = f.grid;
  if (kernel.epsilon() < 2.0 * grid.spacing)
    throw ResolutionError("mollify_unclamped: epsilon below 2h");
  auto stencil = sampled_kernel_stencil(kernel, grid);
  std::vector<double> kgrid(static_cast<size_t>(grid.cell_count()), 0.0);
  double cellvol = grid.cell_volume();
  for (const auto& [offset, w] : stencil) {
    int i = (offset[0] + grid.cells[0]) % grid.cells[0];
    int j = (offset[1] + grid.cells[1]) % grid.cells[1];
    int k = (offset[2] + grid.cells[2]) % grid.cells[2];
    kgrid[grid.index(i, j, k)] = w * cellvol;
  }
  ScalarGridField out(grid);
  out.values = detail::cyclic_convolve(grid, f.values, kgrid);
  return out;
}

/// Smooth density rho_eps * mu sampled on `grid`.  Surface parts and atoms
/// are splatted with a per-site renormalized stencil so the discrete mass of
/// the output equals the measure's total exactly.
inline ScalarGridField mollify_measure(const SignedMeasure& mu, const MollifierKernel& kernel,
                                       const GridSpec& grid) {
  ScalarGridField out(grid);
  double cellvol = grid.cell_volume();
  if (mu.ac) {
    if (!mu.ac->grid.same_layout(grid))
      throw ConfigError("mollify_measure: density grid mismatch");
    ScalarGridField smooth = mollify_unclamped(*mu.ac, kernel);
    out.values = smooth.values;
  }
  int radius = static_cast<int>(std::ceil(kernel.epsilon() / grid.spacing));
  auto splat = [&](const Vec& p, double weight) {
    auto c = grid.locate(p);
    detail::KahanSum local_mass;
    std::vector<std::pair<std::int64_t, double>> touched;
    int rj = grid.dim > 1 ? radius : 0, rk = grid.dim > 2 ? radius : 0;
    for (int dk = -rk; dk <= rk; ++dk)
      for (int dj = -rj; dj <= rj; ++dj)
        for (int di = -radius; di <= radius; ++di) {
          int i = c[0] + di, j = c[1] + dj, k = c[2] + dk;
          if (i < 0 || i >= grid.cells[0] || (grid.dim > 1 && (j < 0 || j >= grid.cells[1])) ||
              (grid.dim > 2 && (k < 0 || k >= grid.cells[2])))
            continue;
          double w = kernel.density(grid.center(i, std::max(j, 0), std::max(k, 0)) - p);
          if (w > 0.0) {
            touched.push_back({grid.index(i, std::max(j, 0), std::max(k, 0)), w});
            local_mass.add(w * cellvol);
          }
        }
    if (touched.empty() || local_mass.value() <= 0.0)
      throw BoundsError("mollify_measure: splat support leaves the grid");
    double scale = weight / local_mass.value();
    for (auto& [idx, w] : touched) out.values[idx] += w * scale;
  };
  for (const auto& part : mu.surface_parts)
    for (size_t f = 0; f < part.mesh.facets.size(); ++f)
      splat(part.mesh.facets[f].midpoint, part.density[f] * part.mesh.facets[f].area);
  for (const auto& a : mu.atoms) splat(a.point, a.weight);
  return out;
}

}  // namespace dmtk
