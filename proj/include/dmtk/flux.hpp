#pragma once

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dmtk/traces.hpp"

namespace dmtk {

/// A Borel piece of some set's reduced boundary, oriented by that set's
/// interior normal.  Facets are taken from the frozen boundary mesh of the
/// reference set; -S is the same carrier with the reversed orientation.
struct OrientedSurface {
  SurfaceMesh mesh;           // selected facets, normals = interior normal of E
  ShapeSpec reference_set;
  bool flipped = false;

  OrientedSurface reversed() const {
    OrientedSurface s = *this;
    s.flipped = !s.flipped;
    return s;
  }
  double area() const { return mesh.total_area(); }
};

/// Select the part of the reference set's discrete reduced boundary where
/// `keep(midpoint)` holds.
inline OrientedSurface make_oriented_surface(const ShapeSpec& E, const GridSpec& grid,
                                             double fine_eps,
                                             const std::function<bool(const Vec&)>& keep = nullptr) {
  OrientedSurface s;
  s.reference_set = E;
  SurfaceMesh whole = boundary_mesh(E, grid, fine_eps);
  s.mesh.dim = whole.dim;
  for (const auto& f : whole.facets)
    if (!keep || keep(f.midpoint)) s.mesh.facets.push_back(f);
  return s;
}

// ---------------------------------------------------------------------------
// Reconstruction lattice and axis-aligned faces
// ---------------------------------------------------------------------------

/// Coarse cube lattice for slice averaging, decoupled from the sampling grid
/// (default 16x coarser), with n_slices + 1 slice planes per cube and axis.
struct FluxLattice {
  GridSpec grid;      // lattice cubes as grid cells
  int n_slices = 8;

  static FluxLattice coarsen(const GridSpec& fine, int factor = 16, int n_slices = 8) {
    FluxLattice lat;
    GridSpec g = fine;
    for (int a = 0; a < fine.dim; ++a) {
      if (fine.cells[a] % factor != 0)
        throw ConfigError("FluxLattice: grid cells not divisible by the coarsening factor");
      g.cells[a] = fine.cells[a] / factor;
    }
    g.spacing = fine.spacing * factor;
    lat.grid = g;
    lat.n_slices = n_slices;
    return lat;
  }

  double slice_step() const { return grid.spacing / n_slices; }
};

/// Axis-aligned lattice face: the plane {y_axis = origin + plane * step}
/// clipped to one transverse cube.  `plane` counts slice planes globally, so
/// the shared face of adjacent cubes has a single identity.
struct FaceId {
  int axis = 0;
  int plane = 0;              // global slice-plane index along `axis`
  std::array<int, 3> cube{};  // transverse cube indices; cube[axis] zeroed
  auto operator<=>(const FaceId&) const = default;
};

/// Canonical face key: the along-axis cube index lives in `plane` only.
inline FaceId make_face(int axis, int plane, std::array<int, 3> cube) {
  cube[axis] = 0;
  return FaceId{axis, plane, cube};
}

/// A face together with an orientation: canonical means the paper's e_axis
/// (the unit vector whose `axis` component is -1).
struct FaceQuery {
  FaceId face;
  bool canonical = true;
};

namespace detail {

inline double face_coordinate(const FluxLattice& lat, const FaceId& f) {
  return lat.grid.origin[f.axis] + f.plane * lat.slice_step();
}

/// Quadrature of the field component over a lattice face.  With e_axis the
/// negative unit vector, F(face) = -int F . e_axis dH = +int F_axis dH.
/// Piecewise fields within a cell of their interface are sampled from the
/// e_axis side, matching the interior-trace convention (the two coincide for
/// continuous fields by the classical-consistency theorem).
inline double face_flux_from_field(const DMField& F, const FluxLattice& lat, const FaceId& face) {
  const GridSpec& g = lat.grid;
  double coord = face_coordinate(lat, face);
  Vec e_axis{};
  e_axis[face.axis] = -1.0;
  int t1 = -1, t2 = -1;
  for (int a = 0; a < g.dim; ++a)
    if (a != face.axis) (t1 < 0 ? t1 : t2) = a;

  auto value_at = [&](double u1, double u2) {
    Vec p{};
    p[face.axis] = coord;
    if (t1 >= 0) p[t1] = u1;
    if (t2 >= 0) p[t2] = u2;
    return F.eval_sided(p, e_axis)[face.axis];
  };

  if (g.dim == 1) return value_at(0, 0);

  double lo1 = g.origin[t1] + face.cube[t1] * g.spacing;
  if (g.dim == 2) {
    const int panels = 8;
    KahanSum s;
    double w = g.spacing / panels;
    for (int p = 0; p < panels; ++p)
      for (int q = 0; q < 4; ++q) {
        double u = lo1 + p * w + 0.5 * w * (1.0 + Gauss4::x[q]);
        s.add(0.5 * w * Gauss4::w[q] * value_at(u, 0));
      }
    return s.value();
  }
  double lo2 = g.origin[t2] + face.cube[t2] * g.spacing;
  const int panels = 4;
  KahanSum s;
  double w = g.spacing / panels;
  for (int p1 = 0; p1 < panels; ++p1)
    for (int q1 = 0; q1 < 4; ++q1)
      for (int p2 = 0; p2 < panels; ++p2)
        for (int q2 = 0; q2 < 4; ++q2) {
          double u1 = lo1 + p1 * w + 0.5 * w * (1.0 + Gauss4::x[q1]);
          double u2 = lo2 + p2 * w + 0.5 * w * (1.0 + Gauss4::x[q2]);
          s.add(0.25 * w * w * Gauss4::w[q1] * Gauss4::w[q2] * value_at(u1, u2));
        }
  return s.value();
}

}  // namespace detail

/// Synthetic Cauchy flux: an explicit face table in the canonical
/// orientation, plus shock faces carrying the orientation defect
/// J = F(S) + F(-S).  Optional named face groups declare aggregate values
/// for additivity audits.
struct SyntheticFlux {
  FluxLattice lattice;
  std::map<FaceId, double> values;
  std::map<FaceId, double> shock_jump;
  struct Group {
    std::string name;
    std::vector<FaceId> faces;
    double declared = 0.0;
  };
  std::vector<Group> groups;
};

/// A Cauchy flux together with its axiom witnesses: the bounding measure
/// sigma (nonnegative) and the area-bound constant.
struct CauchyFluxSpec {
  std::optional<DMField> field;
  std::optional<SyntheticFlux> synthetic;
  SignedMeasure sigma_bound;
  double c_bound = 0.0;

  static CauchyFluxSpec from_field(DMField f, SignedMeasure sigma, double c_bound) {
    CauchyFluxSpec s;
    s.field = std::move(f);
    s.sigma_bound = std::move(sigma);
    s.c_bound = c_bound;
    return s;
  }
  static CauchyFluxSpec synthetic_flux(SyntheticFlux f, SignedMeasure sigma, double c_bound) {
    CauchyFluxSpec s;
    s.synthetic = std::move(f);
    s.sigma_bound = std::move(sigma);
    s.c_bound = c_bound;
    return s;
  }
};

/// Flux through an axis-aligned lattice face.  Synthetic sources are pure
/// table lookups (with the shock defect on reversal); field sources use face
/// quadrature of the normal component.
inline double evaluate_flux(const CauchyFluxSpec& flux, const FluxLattice& lat,
                            const FaceQuery& q) {
  if (flux.synthetic) {
    auto it = flux.synthetic->values.find(q.face);
    if (it == flux.synthetic->values.end()) {
      std::ostringstream os;
      os << "synthetic flux: unknown face axis=" << q.face.axis << " plane=" << q.face.plane;
      throw UnknownFace(os.str());
    }
    double v = it->second;
    if (q.canonical) return v;
    auto sh = flux.synthetic->shock_jump.find(q.face);
    double jump = sh == flux.synthetic->shock_jump.end() ? 0.0 : sh->second;
    return -v + jump;
  }
  if (!flux.field) throw ConfigError("evaluate_flux: empty flux spec");
  double v = detail::face_flux_from_field(*flux.field, lat, q.face);
  return q.canonical ? v : -v;
}

/// Flux through an oriented surface via the normal traces of the inducing
/// field: F(S) = -int_S Fi.nu dH, and F(-S) = +int_S Fe.nu dH.
inline double evaluate_flux(const CauchyFluxSpec& flux, const OrientedSurface& S,
                            const GridSpec& grid, const TraceSchedule& schedule = {}) {
  if (!flux.field)
    throw UnknownFace("evaluate_flux: synthetic sources are defined on lattice faces only");
  TraceResult tr = S.flipped ? exterior_trace(*flux.field, S.reference_set, grid, schedule)
                             : interior_trace(*flux.field, S.reference_set, grid, schedule);
  detail::FacetHash hash(tr.boundary_mesh, std::max(grid.spacing * 8.0, 1e-9));
  detail::KahanSum total;
  for (const auto& f : S.mesh.facets) {
    int idx = hash.nearest(f.midpoint, 2.0 * grid.spacing);
    if (idx < 0) throw ConfigError("evaluate_flux: surface facet off the reference boundary");
    total.add(tr.density[idx] * f.area);
  }
  return S.flipped ? total.value() : -total.value();
}

/// Both one-sided fluxes across a jump piece: (F(S), F(-S)) from the interior
/// and exterior traces restricted to S.  Their sum is the shock defect,
/// equal to minus the surface divergence carried by S.
inline std::pair<double, double> exceptional_recovery(const DMField& F, const OrientedSurface& S,
                                                      const GridSpec& grid,
                                                      const TraceSchedule& schedule = {}) {
  TraceResult ti = interior_trace(F, S.reference_set, grid, schedule);
  TraceResult te = exterior_trace(F, S.reference_set, grid, schedule);
  detail::FacetHash hash(ti.boundary_mesh, std::max(grid.spacing * 8.0, 1e-9));
  detail::KahanSum fi, fe;
  for (const auto& f : S.mesh.facets) {
    int idx = hash.nearest(f.midpoint, 2.0 * grid.spacing);
    if (idx < 0) throw ConfigError("exceptional_recovery: facet off the reference boundary");
    fi.add(ti.density[idx] * f.area);
    fe.add(te.density[idx] * f.area);
  }
  return {-fi.value(), fe.value()};
}

// ---------------------------------------------------------------------------
// Axiom checking
// ---------------------------------------------------------------------------

struct AxiomReport {
  double worst_additivity = 0.0;   // relative defect over splits/groups
  double worst_sigma_slack = 0.0;  // |F(dE)| - sigma(E), normalized
  double worst_area_slack = 0.0;   // |F(S)| - C area(S), normalized
  bool passed = true;
};

/// Checks the three Cauchy-flux axioms on sample sets and surfaces:
/// additivity over compatible disjoint splits, domination by sigma on full
/// boundaries of sets whose boundary collar is sigma-null, and the area
/// bound on surfaces with sigma(S) = 0.
inline AxiomReport axioms_check(const CauchyFluxSpec& flux,
                                const std::vector<ShapeSpec>& sample_sets,
                                const std::vector<OrientedSurface>& sample_surfaces,
                                const GridSpec& grid, const TraceSchedule& schedule = {}) {
  AxiomReport rep;
  const double tol = 1e-6;

  if (flux.synthetic) {
    // (i) declared group values against the sum of their parts
    for (const auto& g : flux.synthetic->groups) {
      detail::KahanSum sum;
      for (const auto& f : g.faces)
        sum.add(evaluate_flux(flux, flux.synthetic->lattice, {f, true}));
      double defect =
          std::abs(sum.value() - g.declared) / std::max(1.0, std::abs(g.declared));
      rep.worst_additivity = std::max(rep.worst_additivity, defect);
      if (defect > tol)
        throw AxiomViolation("axiom (i) additivity fails on face group '" + g.name + "'");
    }
    // (iii) area bound on every tabulated face
    double face_area = std::pow(flux.synthetic->lattice.grid.spacing, grid.dim - 1);
    for (const auto& [face, v] : flux.synthetic->values) {
      double slack = std::abs(v) - flux.c_bound * face_area * (1.0 + tol);
      rep.worst_area_slack = std::max(rep.worst_area_slack, slack);
      if (slack > 0.0) {
        std::ostringstream os;
        os << "axiom (iii) area bound fails on face axis=" << face.axis
           << " plane=" << face.plane;
        throw AxiomViolation(os.str());
      }
    }
    return rep;
  }

  for (const ShapeSpec& E : sample_sets) {
    TraceResult tr = interior_trace(*flux.field, E, grid, schedule);
    const SurfaceMesh& mesh = tr.boundary_mesh;

    // (i): split the boundary at the vertical midline; fluxes must add.
    detail::KahanSum left, right, whole;
    for (size_t f = 0; f < mesh.facets.size(); ++f) {
      double flx = tr.density[f] * mesh.facets[f].area;
      whole.add(flx);
      (mesh.facets[f].midpoint.x < 0.0 ? left : right).add(flx);
    }
    double defect = std::abs((left.value() + right.value()) - whole.value()) /
                    std::max(1.0, std::abs(whole.value()));
    rep.worst_additivity = std::max(rep.worst_additivity, defect);
    if (defect > tol) throw AxiomViolation("axiom (i) additivity fails on a boundary split");

    // (ii): |F(d*E)| <= sigma(E) when the boundary collar is sigma-null.
    ScalarGridField collar(grid);
    for (const auto& fc : mesh.facets) {
      auto c = grid.locate(fc.midpoint);
      for (int dj = (grid.dim > 1 ? -1 : 0); dj <= (grid.dim > 1 ? 1 : 0); ++dj)
        for (int di = -1; di <= 1; ++di) {
          int i = std::clamp(c[0] + di, 0, grid.cells[0] - 1);
          int j = std::clamp(c[1] + dj, 0, grid.cells[1] - 1);
          collar.at(i, j, c[2]) = 1.0;
        }
    }
    if (flux.sigma_bound.tv(collar) < 1e-6) {
      ScalarGridField mask = rasterize(E, grid, 2.0 * schedule.eps.front());
      double bound = flux.sigma_bound.eval(mask);
      double slack = std::abs(whole.value()) - bound * (1.0 + tol);
      rep.worst_sigma_slack = std::max(rep.worst_sigma_slack, slack);
      if (slack > 0.0)
        throw AxiomViolation("axiom (ii) sigma bound fails: |flux| " +
                             std::to_string(std::abs(whole.value())) + " > " +
                             std::to_string(bound));
    }
  }

  // (iii): |F(S)| <= C H^{N-1}(S) for surfaces with sigma(S) = 0.
  for (const OrientedSurface& S : sample_surfaces) {
    ScalarGridField scollar(grid);
    for (const auto& fc : S.mesh.facets) {
      auto c = grid.locate(fc.midpoint);
      scollar.at(c[0], c[1], c[2]) = 1.0;
    }
    if (flux.sigma_bound.tv(scollar) > 1e-6) continue;
    double v = evaluate_flux(flux, S, grid, schedule);
    double slack = std::abs(v) - flux.c_bound * S.area() * (1.0 + tol);
    rep.worst_area_slack = std::max(rep.worst_area_slack, slack);
    if (slack > 0.0)
      throw AxiomViolation("axiom (iii) area bound fails: |flux| " + std::to_string(std::abs(v)) +
                           " > C*area " + std::to_string(flux.c_bound * S.area()));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Slice reconstruction and production measure
// ---------------------------------------------------------------------------

/// Field recovery by cube-slice averaging: for each axis j and cube I,
/// mu_j(I) = int F(I_tau) dtau by the trapezoid rule over the slice planes,
/// and the cell value is mu_j(I) / |I| (with F(I_tau) = -int F.e_j dH, e_j
/// the negative unit vector, this reproduces the j-th component).
inline VectorGridField slice_reconstruct(const CauchyFluxSpec& flux, const FluxLattice& lat) {
  const GridSpec& g = lat.grid;
  if (lat.n_slices < 8) throw ConfigError("slice_reconstruct: need at least 8 slices");
  VectorGridField out(g);
  double step = lat.slice_step();
  double cube_vol = g.cell_volume();
  for (int axis = 0; axis < g.dim; ++axis)
    for (int ck = 0; ck < g.cells[2]; ++ck)
      for (int cj = 0; cj < g.cells[1]; ++cj)
        for (int ci = 0; ci < g.cells[0]; ++ci) {
          std::array<int, 3> cube{ci, cj, ck};
          detail::KahanSum mu;
          for (int m = 0; m <= lat.n_slices; ++m) {
            FaceId face = make_face(axis, cube[axis] * lat.n_slices + m, cube);
            double v = evaluate_flux(flux, lat, {face, true});
            mu.add((m == 0 || m == lat.n_slices) ? 0.5 * step * v : step * v);
          }
          out.comp[axis].at(ci, cj, ck) = mu.value() / cube_vol;
        }
  return out;
}

struct BalanceLawReport {
  ScalarGridField production;        // P(I) / |I| per lattice cube
  ScalarGridField residual;          // |div F_rec - P/|I|| per cube (smooth cubes)
  double max_residual_smooth = 0.0;  // over cubes away from shock faces
  double total_production = 0.0;
  VectorGridField reconstructed;
};

/// Production per cube as the flux through the cube boundary with interior
/// orientation; the balance residual compares it against the divergence of
/// the reconstructed field (finite differences away from shock cubes).
inline BalanceLawReport production_measure(const CauchyFluxSpec& flux, const FluxLattice& lat) {
  const GridSpec& g = lat.grid;
  BalanceLawReport rep{ScalarGridField(g), ScalarGridField(g), 0.0, 0.0,
                       slice_reconstruct(flux, lat)};
  double cube_vol = g.cell_volume();

  ScalarGridField is_shock(g);
  if (flux.synthetic)
    for (const auto& [face, jump] : flux.synthetic->shock_jump) {
      // mark cubes on both sides of the shock plane
      std::array<int, 3> c = face.cube;
      int hi_cube = face.plane / lat.n_slices;
      for (int side = 0; side < 2; ++side) {
        c[face.axis] = std::clamp(hi_cube - side, 0, g.cells[face.axis] - 1);
        is_shock.at(c[0], c[1], c[2]) = 1.0;
      }
    }

  detail::KahanSum total;
  for (int ck = 0; ck < g.cells[2]; ++ck)
    for (int cj = 0; cj < g.cells[1]; ++cj)
      for (int ci = 0; ci < g.cells[0]; ++ci) {
        std::array<int, 3> cube{ci, cj, ck};
        detail::KahanSum p;
        for (int axis = 0; axis < g.dim; ++axis) {
          FaceId high = make_face(axis, (cube[axis] + 1) * lat.n_slices, cube);
          FaceId low = make_face(axis, cube[axis] * lat.n_slices, cube);
          // interior normal at the high face is e_axis (canonical), at the
          // low face the reversed orientation
          p.add(evaluate_flux(flux, lat, {high, true}));
          p.add(evaluate_flux(flux, lat, {low, false}));
        }
        rep.production.at(ci, cj, ck) = p.value() / cube_vol;
        total.add(p.value());
      }
  rep.total_production = total.value();

  // Balance residual on smooth cubes: centered divergence of the
  // reconstruction against the production density.
  for (int a = 0; a < g.dim; ++a) {
    VectorGridField d = gradient(rep.reconstructed.comp[a]);
    for (std::int64_t idx = 0; idx < g.cell_count(); ++idx)
      rep.residual.values[idx] += d.comp[a].values[idx];
  }
  for (std::int64_t idx = 0; idx < g.cell_count(); ++idx) {
    rep.residual.values[idx] = std::abs(rep.residual.values[idx] - rep.production.values[idx]);
    if (is_shock.values[idx] < 0.5)
      rep.max_residual_smooth = std::max(rep.max_residual_smooth, rep.residual.values[idx]);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Synthetic flux CSV I/O
// ---------------------------------------------------------------------------

/// Rows: axis,ci,cj,ck,slice,value  (slice 0..n_slices within the cube);
/// shock rows: shock,axis,ci,cj,ck,slice,jump.  Duplicate face keys must
/// agree.
inline void write_synthetic_flux(const SyntheticFlux& f, const std::string& path) {
  std::ofstream os(path);
  os.precision(17);
  os << "# axis,ci,cj,ck,slice,value\n";
  for (const auto& [face, v] : f.values) {
    int cube_axis = face.plane / f.lattice.n_slices;
    int slice = face.plane % f.lattice.n_slices;
    std::array<int, 3> c = face.cube;
    c[face.axis] = cube_axis;
    os << face.axis << "," << c[0] << "," << c[1] << "," << c[2] << "," << slice << "," << v
       << "\n";
  }
  for (const auto& [face, j] : f.shock_jump) {
    int cube_axis = face.plane / f.lattice.n_slices;
    int slice = face.plane % f.lattice.n_slices;
    std::array<int, 3> c = face.cube;
    c[face.axis] = cube_axis;
    os << "shock," << face.axis << "," << c[0] << "," << c[1] << "," << c[2] << "," << slice << ","
       << j << "\n";
  }
}

inline SyntheticFlux read_synthetic_flux(const FluxLattice& lat, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("read_synthetic_flux: cannot open " + path);
  SyntheticFlux f;
  f.lattice = lat;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tok;
    std::vector<std::string> parts;
    while (std::getline(ls, tok, ',')) parts.push_back(tok);
    bool shock = parts.size() == 7 && parts[0] == "shock";
    if (!(shock || parts.size() == 6))
      throw ConfigError("read_synthetic_flux: malformed row '" + line + "'");
    int off = shock ? 1 : 0;
    FaceId face;
    face.axis = std::stoi(parts[off + 0]);
    std::array<int, 3> cube{std::stoi(parts[off + 1]), std::stoi(parts[off + 2]),
                            std::stoi(parts[off + 3])};
    int slice = std::stoi(parts[off + 4]);
    double v = std::stod(parts[off + 5]);
    face = make_face(face.axis, cube[face.axis] * lat.n_slices + slice, cube);
    auto& table = shock ? f.shock_jump : f.values;
    auto [it, inserted] = table.insert({face, v});
    if (!inserted && it->second != v)
      throw ConfigError("read_synthetic_flux: conflicting duplicate for a shared face");
  }
  return f;
}

/// Face table of a field source, for constructing synthetic fluxes in tests
/// and experiments.
inline SyntheticFlux tabulate_field_flux(const DMField& F, const FluxLattice& lat) {
  SyntheticFlux f;
  f.lattice = lat;
  const GridSpec& g = lat.grid;
  for (int axis = 0; axis < g.dim; ++axis)
    for (int ck = 0; ck < g.cells[2]; ++ck)
      for (int cj = 0; cj < g.cells[1]; ++cj)
        for (int ci = 0; ci < g.cells[0]; ++ci) {
          std::array<int, 3> cube{ci, cj, ck};
          for (int m = 0; m <= lat.n_slices; ++m) {
            FaceId face = make_face(axis, cube[axis] * lat.n_slices + m, cube);
            if (!f.values.count(face))
              f.values[face] = detail::face_flux_from_field(F, lat, face);
          }
        }
  return f;
}

}  // namespace dmtk
