#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dmtk/fields.hpp"

namespace dmtk {

/// Epsilon/level schedule for the trace limit process.  Interior traces use
/// levels in (1/2 + delta_t, 1 - delta_t), exterior traces the mirrored band
/// below 1/2; delta_t keeps the bands away from the t = 1/2 endpoint.
struct TraceSchedule {
  std::vector<double> eps{0.2, 0.1, 0.05};
  double delta_t = 0.05;
  int levels_per_band = 8;

  void validate(double h) const {
    if (eps.empty()) throw ConfigError("TraceSchedule: empty epsilon list");
    for (size_t i = 0; i < eps.size(); ++i) {
      if (eps[i] < 2.0 * h) throw ConfigError("TraceSchedule: epsilon below 2h");
      if (i > 0 && !(eps[i] < eps[i - 1]))
        throw ConfigError("TraceSchedule: epsilons must decrease");
    }
    if (levels_per_band < 4) throw ConfigError("TraceSchedule: need at least 4 levels per band");
  }
  double finest() const { return eps.back(); }
  std::pair<double, double> interior_band() const { return {0.5 + delta_t, 1.0 - delta_t}; }
  std::pair<double, double> exterior_band() const { return {delta_t, 0.5 - delta_t}; }
};

enum class TraceSide { interior, exterior };

/// Per-facet normal-trace density on the frozen discrete reduced boundary,
/// with the (epsilon, t) totals recorded as a convergence table.  The trace
/// is stored only as a density against facet area, so the measure it
/// represents is absolutely continuous with respect to surface measure by
/// construction.
struct TraceResult {
  TraceSide side = TraceSide::interior;
  SurfaceMesh boundary_mesh;
  std::vector<double> density;                       // finest-eps band mean
  std::vector<std::vector<double>> density_per_eps;  // one entry per schedule epsilon
  double total = 0.0;                                // sum density * area
  ConvergenceTable table;                            // rows (eps, t, sigma_kt total)
  double sup_density = 0.0;
  double unassigned_flux = 0.0;  // band-mean |flux| that missed the projection cap
  double residual = 0.0;         // |mu(region proxy) + total|
  double proxy_measure = 0.0;    // mu(region proxy)
};

struct FatnessConfig {
  double c0 = 0.4;
  double r0 = 0.25;
};

namespace detail {

struct LevelSurface {
  double t = 0.0;
  SurfaceMesh mesh;
  std::vector<double> density;  // F . nu at facet midpoints (side-resolved)
  double total = 0.0;
};

/// sigma_{eps;t} facet data over the boundary of {u > t}.  `inward` selects
/// the side a piecewise field is sampled from when the level set runs within
/// one cell of its interface: +1 nudges along nu (into the superlevel set),
/// -1 away from it.
inline LevelSurface sigma_level(const DMField& F, const ScalarGridField& u, double t,
                                double inward) {
  LevelSurface out;
  out.t = t;
  out.mesh = extract_level_set(u, t);
  out.density.resize(out.mesh.facets.size());
  KahanSum total;
  for (size_t f = 0; f < out.mesh.facets.size(); ++f) {
    const Facet& fc = out.mesh.facets[f];
    Vec val = F.eval_sided(fc.midpoint, fc.normal * inward);
    out.density[f] = dot(val, fc.normal);
    total.add(out.density[f] * fc.area);
  }
  out.total = total.value();
  return out;
}

}  // namespace detail

/// The measure sigma_{k;t}: surface measure on the boundary of
/// A_{k;t} = {u_k > t} with density F . nu, nu the interior normal of A_{k;t}.
inline SignedMeasure sigma_kt(const DMField& F, const ShapeSpec& E, const GridSpec& grid,
                              double eps, double t) {
  ScalarGridField u =
      mollify(rasterize(E, grid, 2.0 * eps), MollifierKernel::bump(eps, grid.dim));
  detail::LevelSurface lv = detail::sigma_level(F, u, t, +1.0);
  SignedMeasure m;
  m.add_surface_part(std::move(lv.mesh), std::move(lv.density));
  return m;
}

/// The frozen discrete reduced boundary: the half-level set of the finest
/// mollification.
inline SurfaceMesh boundary_mesh(const ShapeSpec& E, const GridSpec& grid, double fine_eps) {
  ScalarGridField u =
      mollify(rasterize(E, grid, 2.0 * fine_eps), MollifierKernel::bump(fine_eps, grid.dim));
  return extract_level_set(u, 0.5);
}

namespace detail {

inline TraceResult trace_compute(const DMField& F, const ShapeSpec& E, const GridSpec& grid,
                                 const TraceSchedule& schedule, TraceSide side) {
  schedule.validate(grid.spacing);
  ScalarGridField chi = rasterize(E, grid, 2.0 * schedule.eps.front());
  ScalarGridField u_fine =
      mollify(chi, MollifierKernel::bump(schedule.finest(), grid.dim));

  TraceResult out;
  out.side = side;
  out.boundary_mesh = extract_level_set(u_fine, 0.5);
  FacetHash hash(out.boundary_mesh, std::max(grid.spacing * 8.0, 1e-9));
  size_t nfac = out.boundary_mesh.facets.size();

  auto band = side == TraceSide::interior ? schedule.interior_band() : schedule.exterior_band();
  double inward = side == TraceSide::interior ? +1.0 : -1.0;

  for (double eps : schedule.eps) {
    ScalarGridField u = (eps == schedule.finest())
                            ? u_fine
                            : mollify(chi, MollifierKernel::bump(eps, grid.dim));
    std::vector<double> levels =
        select_levels(u, band.first, band.second, schedule.levels_per_band);
    // Collected flux is normalized by collected source area, not by the
    // target facet area: the estimate is then a genuine local density,
    // bounded by sup|F| no matter how small the target facet is.
    std::vector<KahanSum> flux_acc(nfac), area_acc(nfac);
    KahanSum missed;
    for (double t : levels) {
      LevelSurface lv = sigma_level(F, u, t, inward);
      out.table.add(eps, t, lv.total);
      for (size_t f = 0; f < lv.mesh.facets.size(); ++f) {
        const Facet& fc = lv.mesh.facets[f];
        int target = hash.nearest(fc.midpoint, 3.0 * eps);
        if (target < 0) {
          missed.add(std::abs(lv.density[f] * fc.area));
        } else {
          flux_acc[target].add(lv.density[f] * fc.area);
          area_acc[target].add(fc.area);
        }
      }
    }
    std::vector<double> dens(nfac);
    for (size_t f = 0; f < nfac; ++f) {
      double area = area_acc[f].value();
      dens[f] = area > 0.0 ? flux_acc[f].value() / area : 0.0;
    }
    out.density_per_eps.push_back(std::move(dens));
    if (eps == schedule.finest())
      out.unassigned_flux = missed.value() / static_cast<double>(levels.size());
  }

  out.density = out.density_per_eps.back();
  KahanSum total;
  for (size_t f = 0; f < nfac; ++f) {
    total.add(out.density[f] * out.boundary_mesh.facets[f].area);
    out.sup_density = std::max(out.sup_density, std::abs(out.density[f]));
  }
  out.total = total.value();

  // Residual against the measure of the discrete region proxy: A at the
  // finest epsilon with t = 0.55 (interior) or 0.45 (exterior).
  double proxy_t = side == TraceSide::interior ? 0.55 : 0.45;
  ScalarGridField proxy = region_mask(u_fine, proxy_t);
  out.proxy_measure = F.divergence.eval(proxy);
  out.residual = std::abs(out.proxy_measure + out.total);
  return out;
}

}  // namespace detail

/// Interior normal trace relative to E: sigma_{k;t} for t in the upper band
/// projected onto the frozen boundary mesh (nearest facet within 3 eps,
/// unassigned flux reported, never dropped) and averaged over the band.
inline TraceResult interior_trace(const DMField& F, const ShapeSpec& E, const GridSpec& grid,
                                  const TraceSchedule& schedule = {}) {
  return detail::trace_compute(F, E, grid, schedule, TraceSide::interior);
}

/// Exterior normal trace: the lower band, with piecewise fields sampled one
/// cell outward.
inline TraceResult exterior_trace(const DMField& F, const ShapeSpec& E, const GridSpec& grid,
                                  const TraceSchedule& schedule = {}) {
  return detail::trace_compute(F, E, grid, schedule, TraceSide::exterior);
}

// ---------------------------------------------------------------------------
// Gauss-Green verification
// ---------------------------------------------------------------------------

struct GaussGreenReport {
  TraceResult trace;
  std::vector<std::pair<double, double>> residual_per_eps;  // (eps, r)
  double residual = 0.0;                                    // finest eps
  double normalizer = 0.0;                                  // sup_bound * Per(E)
};

/// Residual of the Gauss-Green identity
///   int_{E^1} phi d(div F) + int_{E^1} F . grad phi + int_{d*E} phi Fi.nu dH
/// normalized by sup_bound * Per(E), per schedule epsilon.  Defaults to
/// phi == 1.
inline GaussGreenReport gauss_green_check(
    const DMField& F, const ShapeSpec& E, const GridSpec& grid,
    const TraceSchedule& schedule = {},
    const std::function<double(const Vec&)>& phi = nullptr,
    const std::function<Vec(const Vec&)>& grad_phi = nullptr) {
  GaussGreenReport rep;
  rep.trace = interior_trace(F, E, grid, schedule);
  const SurfaceMesh& mesh = rep.trace.boundary_mesh;
  rep.normalizer = F.sup_bound * mesh.total_area();

  ScalarGridField chi = rasterize(E, grid, 2.0 * schedule.eps.front());
  ScalarGridField u_fine = mollify(chi, MollifierKernel::bump(schedule.finest(), grid.dim));
  ScalarGridField proxy = region_mask(u_fine, 0.55);

  auto phi_or_one = [&](const Vec& p) { return phi ? phi(p) : 1.0; };

  double bulk_term = F.divergence.integrate(phi_or_one, &proxy);
  double grad_term = 0.0;
  if (grad_phi) {
    detail::KahanSum s;
    for (int k = 0; k < grid.cells[2]; ++k)
      for (int j = 0; j < grid.cells[1]; ++j)
        for (int i = 0; i < grid.cells[0]; ++i) {
          if (proxy.at(i, j, k) <= 0.5) continue;
          Vec p = grid.center(i, j, k);
          s.add(dot(F.evaluate(p), grad_phi(p)) * grid.cell_volume());
        }
    grad_term = s.value();
  }
  for (size_t e = 0; e < schedule.eps.size(); ++e) {
    detail::KahanSum btotal;
    for (size_t f = 0; f < mesh.facets.size(); ++f)
      btotal.add(phi_or_one(mesh.facets[f].midpoint) * rep.trace.density_per_eps[e][f] *
                 mesh.facets[f].area);
    double r = std::abs(bulk_term + grad_term + btotal.value()) / rep.normalizer;
    rep.residual_per_eps.push_back({schedule.eps[e], r});
  }
  rep.residual = rep.residual_per_eps.back().second;
  return rep;
}

// ---------------------------------------------------------------------------
// Jump formula and classical consistency
// ---------------------------------------------------------------------------

struct JumpReport {
  double jump_integral = 0.0;  // int (Fi.nu - Fe.nu) dH
  double collar_eval = 0.0;    // div F on the one-cell interface collar
  double collar_tv = 0.0;
  double residual = 0.0;       // |collar_eval - jump_integral| / collar_tv
  TraceResult interior;
  TraceResult exterior;
};

inline JumpReport jump_check(const DMField& F, const ShapeSpec& E, const GridSpec& grid,
                             const TraceSchedule& schedule = {}) {
  if (F.structure != DMField::Structure::piecewise)
    throw ConfigError("jump_check: field must be piecewise with interface = boundary of E");
  JumpReport rep;
  rep.interior = interior_trace(F, E, grid, schedule);
  rep.exterior = exterior_trace(F, E, grid, schedule);
  const SurfaceMesh& mesh = rep.interior.boundary_mesh;

  detail::KahanSum jump;
  for (size_t f = 0; f < mesh.facets.size(); ++f)
    jump.add((rep.interior.density[f] - rep.exterior.density[f]) * mesh.facets[f].area);
  rep.jump_integral = jump.value();

  // one-cell collar of the field's interface
  ScalarGridField collar(grid);
  for (const auto& fc : F.piecewise->interface.facets) {
    auto c = grid.locate(fc.midpoint);
    for (int dk = (grid.dim > 2 ? -1 : 0); dk <= (grid.dim > 2 ? 1 : 0); ++dk)
      for (int dj = (grid.dim > 1 ? -1 : 0); dj <= (grid.dim > 1 ? 1 : 0); ++dj)
        for (int di = -1; di <= 1; ++di) {
          int i = std::clamp(c[0] + di, 0, grid.cells[0] - 1);
          int j = std::clamp(c[1] + dj, 0, grid.cells[1] - 1);
          int k = std::clamp(c[2] + dk, 0, grid.cells[2] - 1);
          collar.at(i, j, k) = 1.0;
        }
  }
  rep.collar_eval = F.divergence.eval(collar);
  rep.collar_tv = F.divergence.tv(collar);
  rep.residual = rep.collar_tv > 0.0
                     ? std::abs(rep.collar_eval - rep.jump_integral) / rep.collar_tv
                     : std::abs(rep.collar_eval - rep.jump_integral);
  return rep;
}

struct ConsistencyReport {
  double max_dev_interior = 0.0;   // vs classical F . nu, per facet
  double max_dev_exterior = 0.0;
  double max_side_gap = 0.0;       // |density_i - density_e| per facet
  double total_interior = 0.0;
  double total_exterior = 0.0;
  double tolerance = 0.0;          // 0.05 * sup_bound
};

/// For continuous fields the normal trace must coincide with the classical
/// dot product F . nu on both sides.
inline ConsistencyReport classical_consistency(const DMField& F, const ShapeSpec& E,
                                               const GridSpec& grid,
                                               const TraceSchedule& schedule = {}) {
  TraceResult ti = interior_trace(F, E, grid, schedule);
  TraceResult te = exterior_trace(F, E, grid, schedule);
  ConsistencyReport rep;
  rep.tolerance = 0.05 * F.sup_bound;
  rep.total_interior = ti.total;
  rep.total_exterior = te.total;
  const SurfaceMesh& mesh = ti.boundary_mesh;
  for (size_t f = 0; f < mesh.facets.size(); ++f) {
    double classical = dot(F.evaluate(mesh.facets[f].midpoint), mesh.facets[f].normal);
    rep.max_dev_interior = std::max(rep.max_dev_interior, std::abs(ti.density[f] - classical));
    rep.max_dev_exterior = std::max(rep.max_dev_exterior, std::abs(te.density[f] - classical));
    rep.max_side_gap = std::max(rep.max_side_gap, std::abs(ti.density[f] - te.density[f]));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// One-sided (uniformly fat) inclusion
// ---------------------------------------------------------------------------

struct InclusionReport {
  double c_tilde = 0.0;        // c0 / 2^dim
  double smallest_passing_t = 0.0;
  std::vector<double> tested_levels;
  double min_exterior_density = 1.0;  // over sampled boundary points and radii
};

/// Verifies the uniform exterior-density hypothesis at sampled boundary
/// points and then the exact cellwise inclusion A_{k;t} within E for
/// t > 1 - c0/2^dim at the two finest epsilons, using the plateau kernel.
inline InclusionReport one_sided_inclusion(const ShapeSpec& E, const FatnessConfig& fatness,
                                           const GridSpec& grid,
                                           const TraceSchedule& schedule = {}) {
  if (grid.dim < 2) throw ConfigError("one_sided_inclusion: dim >= 2 required");
  if (!(fatness.c0 > 0.0 && fatness.c0 < 1.0 && fatness.r0 > 0.0))
    throw ConfigError("one_sided_inclusion: invalid fatness constants");
  schedule.validate(grid.spacing);

  InclusionReport rep;
  rep.c_tilde = fatness.c0 / std::pow(2.0, grid.dim);

  ScalarGridField chi = rasterize(E, grid, 2.0 * schedule.eps.front());
  double fine = schedule.finest();
  ScalarGridField u_fine = mollify(chi, MollifierKernel::plateau(fine, grid.dim));
  SurfaceMesh mesh = extract_level_set(u_fine, 0.5);

  // (a) exterior-density hypothesis at 32 boundary samples, radii from r0 down.
  ShapeSpec exterior = ShapeSpec::complement(E);
  std::vector<double> radii{fatness.r0, fatness.r0 / 2.0, fatness.r0 / 4.0,
                            std::max(fatness.r0 / 8.0, 2.0 * grid.spacing)};
  size_t stride = std::max<size_t>(1, mesh.facets.size() / 32);
  int tested = 0;
  for (size_t f = 0; f < mesh.facets.size() && tested < 32; f += stride, ++tested) {
    Vec y = mesh.facets[f].midpoint;
    for (double r : radii) {
      DensityClass d = classify_density(exterior, y, {r}, 0.05, 128, grid.dim);
      rep.min_exterior_density = std::min(rep.min_exterior_density, d.alpha);
      if (d.alpha < fatness.c0)
        throw FatnessViolated("exterior density " + std::to_string(d.alpha) + " < c0 at (" +
                              std::to_string(y.x) + "," + std::to_string(y.y) + "), r=" +
                              std::to_string(r));
    }
  }

  // (b) exact cellwise inclusion for t in (1 - c_tilde, 1) at the two finest
  // epsilons.  The assertion is about superlevel masks, which are defined at
  // every t, so the band is laddered directly instead of level-selected.
  double lo = 1.0 - rep.c_tilde;
  std::vector<double> levels;
  for (int q = 0; q < schedule.levels_per_band; ++q)
    levels.push_back(lo + rep.c_tilde * (q + 1) / (schedule.levels_per_band + 1.0));
  rep.tested_levels = levels;
  std::vector<double> eps_pair{schedule.eps.back()};
  if (schedule.eps.size() > 1) eps_pair.push_back(schedule.eps[schedule.eps.size() - 2]);

  double smallest_pass = -1.0;
  for (double t : levels) {
    bool ok = true;
    for (double eps : eps_pair) {
      ScalarGridField u = (eps == fine) ? u_fine : mollify(chi, MollifierKernel::plateau(eps, grid.dim));
      ScalarGridField mask = region_mask(u, t);
      for (size_t idx = 0; idx < mask.values.size() && ok; ++idx)
        if (mask.values[idx] > 0.5 && chi.values[idx] < 0.5) ok = false;
      if (!ok) break;
    }
    if (ok && (smallest_pass < 0.0 || t < smallest_pass)) smallest_pass = t;
  }
  if (smallest_pass < 0.0)
    throw InclusionFailed("no level in (1-c0/2^dim, 1) gives a cellwise inclusion");
  rep.smallest_passing_t = smallest_pass;
  return rep;
}

// ---------------------------------------------------------------------------
// Approximation diagnostics
// ---------------------------------------------------------------------------

struct DiagnosticsReport {
  ConvergenceTable symdiff;         // ||mu||(A_{k;t} delta E1-proxy)
  ConvergenceTable exterior_area;   // H^{N-1}(dA_{k;t} outside eroded E)
  ConvergenceTable exterior_flux;   // tv of sigma_kt on that exterior zone
  std::vector<double> per_eps_symdiff;
  std::vector<double> per_eps_exterior_area;
  bool symdiff_halves = false;
  bool exterior_area_halves = false;
};

/// Tables behind the almost-one-sided approximation statement: the measure
/// of A_{k;t} delta E^1 and the boundary area escaping the eroded set must
/// shrink along the schedule.  Measures with atoms are rejected in dim >= 2
/// (the theory requires mu absolutely continuous w.r.t. H^{N-1}).  The flux
/// table needs a field and is filled only when one is supplied.
inline DiagnosticsReport convergence_diagnostics(const ShapeSpec& E, const SignedMeasure& mu,
                                                 const GridSpec& grid,
                                                 const TraceSchedule& schedule = {},
                                                 const DMField* F = nullptr) {
  if (grid.dim >= 2 && mu.has_atoms())
    throw AtomRejected("convergence_diagnostics: measure has atoms in dim >= 2");
  schedule.validate(grid.spacing);

  ScalarGridField chi = rasterize(E, grid, 2.0 * schedule.eps.front());
  ScalarGridField u_fine = mollify(chi, MollifierKernel::bump(schedule.finest(), grid.dim));
  ScalarGridField proxy = region_mask(u_fine, 0.55);

  // The discrete exterior zone: strictly outside the rasterized set, eroded
  // by one cell (equivalently, more than one cell away from any E-cell).
  // This stands in for E^0 away from the unavoidable rasterization halo.
  ScalarGridField exterior_zone(grid);
  for (int k = 0; k < grid.cells[2]; ++k)
    for (int j = 0; j < grid.cells[1]; ++j)
      for (int i = 0; i < grid.cells[0]; ++i) {
        bool all_out = chi.at(i, j, k) < 0.5;
        for (int dk = (grid.dim > 2 ? -1 : 0); dk <= (grid.dim > 2 ? 1 : 0) && all_out; ++dk)
          for (int dj = (grid.dim > 1 ? -1 : 0); dj <= (grid.dim > 1 ? 1 : 0) && all_out; ++dj)
            for (int di = -1; di <= 1 && all_out; ++di) {
              int ii = std::clamp(i + di, 0, grid.cells[0] - 1);
              int jj = std::clamp(j + dj, 0, grid.cells[1] - 1);
              int kk = std::clamp(k + dk, 0, grid.cells[2] - 1);
              if (chi.at(ii, jj, kk) > 0.5) all_out = false;
            }
        exterior_zone.at(i, j, k) = all_out ? 1.0 : 0.0;
      }

  DiagnosticsReport rep;
  auto band = schedule.interior_band();
  for (double eps : schedule.eps) {
    ScalarGridField u = (eps == schedule.finest())
                            ? u_fine
                            : mollify(chi, MollifierKernel::bump(eps, grid.dim));
    std::vector<double> levels =
        select_levels(u, band.first, band.second, schedule.levels_per_band);
    detail::KahanSum sym_acc, area_acc;
    for (double t : levels) {
      ScalarGridField mask = region_mask(u, t);
      double sym = symdiff_measure(mu, mask, proxy);
      rep.symdiff.add(eps, t, sym);
      sym_acc.add(sym);

      SurfaceMesh mesh = extract_level_set(u, t);
      detail::KahanSum area, flux;
      for (size_t f = 0; f < mesh.facets.size(); ++f) {
        const auto& fc = mesh.facets[f];
        auto c = grid.locate(fc.midpoint);
        if (exterior_zone.at(c[0], c[1], c[2]) < 0.5) continue;
        area.add(fc.area);
        if (F) flux.add(std::abs(dot(F->eval_sided(fc.midpoint, fc.normal), fc.normal)) * fc.area);
      }
      rep.exterior_area.add(eps, t, area.value());
      if (F) rep.exterior_flux.add(eps, t, flux.value());
      area_acc.add(area.value());
    }
    rep.per_eps_symdiff.push_back(sym_acc.value() / levels.size());
    rep.per_eps_exterior_area.push_back(area_acc.value() / levels.size());
  }
  auto halves = [](const std::vector<double>& v) {
    double floor = 1e-9;
    return v.back() <= std::max(v.front() / 2.0, floor);
  };
  rep.symdiff_halves = halves(rep.per_eps_symdiff);
  rep.exterior_area_halves = halves(rep.per_eps_exterior_area);
  return rep;
}

// ---------------------------------------------------------------------------
// Extension by zero
// ---------------------------------------------------------------------------

/// F* = chi_U F: the divergence restricted to the proxy interior of U plus a
/// surface part on the discrete reduced boundary carrying the interior
/// normal trace.  A compactly supported bounded field has zero total
/// divergence; the surface densities get a uniform shift (the projection
/// residual spread over the boundary) so the budget closes exactly.
inline DMField extend_by_zero(const DMField& F, const ShapeSpec& U, const GridSpec& grid,
                              const TraceSchedule& schedule = {}) {
  TraceResult tr = interior_trace(F, U, grid, schedule);
  const SurfaceMesh& mesh = tr.boundary_mesh;
  double per = mesh.total_area();

  DMField out;
  out.structure = F.structure;
  out.piecewise = F.piecewise;
  out.sup_bound = F.sup_bound;
  ShapeSpec shape = U;
  out.evaluate = [shape, f = F.evaluate](const Vec& p) -> Vec {
    return shape.contains(p) ? f(p) : Vec{};
  };

  ScalarGridField chi = rasterize(U, grid, 2.0 * schedule.eps.front());
  SignedMeasure div;
  if (F.divergence.ac) {
    ScalarGridField masked = *F.divergence.ac;
    for (size_t i = 0; i < masked.values.size(); ++i)
      if (chi.values[i] < 0.5) masked.values[i] = 0.0;
    div.ac = std::move(masked);
  }
  for (const auto& part : F.divergence.surface_parts) {
    SurfaceMesh kept;
    kept.dim = part.mesh.dim;
    std::vector<double> kept_density;
    for (size_t f = 0; f < part.mesh.facets.size(); ++f) {
      auto c = grid.locate(part.mesh.facets[f].midpoint);
      if (chi.at(c[0], c[1], c[2]) > 0.5) {
        kept.facets.push_back(part.mesh.facets[f]);
        kept_density.push_back(part.density[f]);
      }
    }
    if (!kept.facets.empty()) div.add_surface_part(std::move(kept), std::move(kept_density));
  }
  for (const auto& a : F.divergence.atoms) {
    auto c = grid.locate(a.point);
    if (chi.at(c[0], c[1], c[2]) > 0.5) div.add_atom(a.point, a.weight);
  }

  double interior_total = div.eval_total();
  detail::KahanSum raw_surface;
  for (size_t f = 0; f < mesh.facets.size(); ++f)
    raw_surface.add(tr.density[f] * mesh.facets[f].area);
  double shift = (interior_total + raw_surface.value()) / per;
  std::vector<double> boundary_density(mesh.facets.size());
  for (size_t f = 0; f < mesh.facets.size(); ++f) boundary_density[f] = tr.density[f] - shift;
  div.add_surface_part(mesh, std::move(boundary_density));
  out.divergence = std::move(div);
  return out;
}

}  // namespace dmtk
