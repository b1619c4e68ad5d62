#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dmtk/flux.hpp"

namespace dmtk {

/// Scalar conservation law u_t + f(u)_x = 0.
struct ScalarLaw {
  std::function<double(double)> f;
  std::function<double(double)> fprime;
  bool convex = true;

  static ScalarLaw burgers() {
    ScalarLaw law;
    law.f = [](double u) { return 0.5 * u * u; };
    law.fprime = [](double u) { return u; };
    law.convex = true;
    return law;
  }
};

/// Exact piecewise-smooth Riemann solution in the (t,x) half-plane.
/// Shocks satisfy Rankine-Hugoniot by construction; solutions produced by
/// solve_riemann are additionally Lax-admissible.  For t <= 0 the solution
/// continues the same structure (the shock line extends through the origin),
/// which keeps the space-time field a divergence-measure field on the whole
/// plane.
struct EntropySolution1D {
  enum class Kind { constant, shock, rarefaction };
  ScalarLaw law;
  Kind kind = Kind::constant;
  double u_left = 0.0;
  double u_right = 0.0;
  double speed = 0.0;         // shock speed
  bool lax_admissible = true;

  double operator()(double t, double x) const {
    switch (kind) {
      case Kind::constant:
        return u_left;
      case Kind::shock:
        return x < speed * t ? u_left : u_right;
      case Kind::rarefaction: {
        double tt = std::max(t, 1e-12);
        if (x <= law.fprime(u_left) * tt) return u_left;
        if (x >= law.fprime(u_right) * tt) return u_right;
        // invert f' on [u_left, u_right] (convex law: f' increasing)
        double lo = u_left, hi = u_right, target = x / tt;
        for (int it = 0; it < 80; ++it) {
          double mid = 0.5 * (lo + hi);
          (law.fprime(mid) < target ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
      }
    }
    return u_left;
  }

  double state_min() const { return std::min(u_left, u_right); }
  double state_max() const { return std::max(u_left, u_right); }
};

/// Exact Riemann solution for a convex law: a Lax shock for u_L > u_R, a
/// rarefaction fan for u_L < u_R, a constant otherwise.
inline EntropySolution1D solve_riemann(const ScalarLaw& law, double u_left, double u_right) {
  if (!law.convex) throw NonConvexUnsupported("solve_riemann: convex flux required");
  EntropySolution1D sol;
  sol.law = law;
  sol.u_left = u_left;
  sol.u_right = u_right;
  if (u_left == u_right) {
    sol.kind = EntropySolution1D::Kind::constant;
    return sol;
  }
  if (u_left > u_right) {
    sol.kind = EntropySolution1D::Kind::shock;
    sol.speed = (law.f(u_right) - law.f(u_left)) / (u_right - u_left);
    double rh = (law.f(u_right) - law.f(u_left)) - sol.speed * (u_right - u_left);
    if (std::abs(rh) > 1e-12) throw ConfigError("solve_riemann: Rankine-Hugoniot defect");
    return sol;
  }
  sol.kind = EntropySolution1D::Kind::rarefaction;
  return sol;
}

/// A Rankine-Hugoniot jump forced as a shock without the admissibility
/// screen, for diagnosing inadmissible data.
inline EntropySolution1D make_rankine_jump(const ScalarLaw& law, double u_left, double u_right) {
  EntropySolution1D sol;
  sol.law = law;
  sol.kind = EntropySolution1D::Kind::shock;
  sol.u_left = u_left;
  sol.u_right = u_right;
  sol.speed = (law.f(u_right) - law.f(u_left)) / (u_right - u_left);
  sol.lax_admissible = law.convex ? u_left > u_right : true;
  return sol;
}

/// Entropy pair (eta, q) with q' = eta' f'; q is anchored at q(u_min) = 0 and
/// evaluated by adaptive quadrature, while q' is carried in closed form so
/// the compatibility identity is structural.
struct EntropyPair {
  std::function<double(double)> eta;
  std::function<double(double)> eta_prime;
  std::function<double(double)> q;
  std::function<double(double)> q_prime;
  double u_min = 0.0;
};

inline EntropyPair make_entropy_pair(const ScalarLaw& law,
                                     const std::function<double(double)>& eta,
                                     const std::function<double(double)>& eta_prime,
                                     double u_min = 0.0) {
  EntropyPair pair;
  pair.eta = eta;
  pair.eta_prime = eta_prime;
  pair.u_min = u_min;
  pair.q_prime = [eta_prime, fp = law.fprime](double u) { return eta_prime(u) * fp(u); };
  pair.q = [qp = pair.q_prime, u_min](double u) {
    return detail::integrate(qp, u_min, u, 1e-12);
  };
  return pair;
}

/// Checks convexity of eta on a state lattice by second differences.
inline bool entropy_is_convex(const EntropyPair& pair, double lo, double hi, int samples = 64) {
  double step = (hi - lo) / samples;
  for (int i = 0; i <= samples; ++i) {
    double u = lo + i * step;
    double d2 = (pair.eta(u + step) - 2.0 * pair.eta(u) + pair.eta(u - step)) / (step * step);
    if (d2 < -1e-8) return false;
  }
  return true;
}

/// Axis-aligned window in the (t,x) plane.
struct TXBox {
  double t0 = 0.0, t1 = 1.0;
  double x0 = -1.0, x1 = 1.0;
};

/// The entropy-dissipation measure div_{(t,x)}(eta(u), q(u)) inside a box.
/// Exact piecewise solutions have no absolutely continuous part; each shock
/// carries the bracket per unit arc length, with [a] = a(u_R) - a(u_L) and
/// the arc normal (-s, 1)/sqrt(1+s^2):
///   density = ([q] - s [eta]) / sqrt(1 + s^2).
inline SignedMeasure entropy_dissipation(const EntropySolution1D& sol, const EntropyPair& pair,
                                         const TXBox& box, int facets = 64) {
  SignedMeasure out;
  if (sol.kind != EntropySolution1D::Kind::shock) return out;
  double s = sol.speed;
  // clip the shock line x = s t to the box
  double t_lo = box.t0, t_hi = box.t1;
  if (s > 0.0) {
    t_lo = std::max(t_lo, box.x0 / s);
    t_hi = std::min(t_hi, box.x1 / s);
  } else if (s < 0.0) {
    t_lo = std::max(t_lo, box.x1 / s);
    t_hi = std::min(t_hi, box.x0 / s);
  }
  if (!(t_hi > t_lo)) return out;

  double bracket = (pair.q(sol.u_right) - pair.q(sol.u_left)) -
                   s * (pair.eta(sol.u_right) - pair.eta(sol.u_left));
  double slope = std::sqrt(1.0 + s * s);
  double density = bracket / slope;

  SurfaceMesh mesh;
  mesh.dim = 2;
  Vec normal{-s / slope, 1.0 / slope, 0.0};  // toward larger x
  double dt = (t_hi - t_lo) / facets;
  for (int i = 0; i < facets; ++i) {
    Facet fc;
    fc.nverts = 2;
    double ta = t_lo + i * dt, tb = ta + dt;
    fc.verts[0] = {ta, s * ta, 0};
    fc.verts[1] = {tb, s * tb, 0};
    fc.area = dist(fc.verts[0], fc.verts[1]);
    fc.midpoint = (fc.verts[0] + fc.verts[1]) * 0.5;
    fc.normal = normal;
    mesh.facets.push_back(fc);
  }
  out.add_surface_part(std::move(mesh), density);
  return out;
}

struct LaxWitness {
  size_t pair_index = 0;
  size_t box_index = 0;
  double value = 0.0;
};

struct LaxReport {
  std::vector<double> values;  // eval per (pair, box), row-major in pairs
  LaxWitness worst;
  bool passed = true;
};

/// Lax admissibility: the dissipation measure of every convex pair must be
/// nonpositive on every box (within 1e-10).
inline LaxReport lax_check(const EntropySolution1D& sol, const std::vector<EntropyPair>& pairs,
                           const std::vector<TXBox>& boxes) {
  LaxReport rep;
  double lo = sol.state_min() - 1.0, hi = sol.state_max() + 1.0;
  for (size_t p = 0; p < pairs.size(); ++p) {
    if (!entropy_is_convex(pairs[p], lo, hi))
      throw ConfigError("lax_check: entropy " + std::to_string(p) + " is not convex");
    for (size_t b = 0; b < boxes.size(); ++b) {
      double v = entropy_dissipation(sol, pairs[p], boxes[b]).eval_total();
      rep.values.push_back(v);
      if (v > rep.worst.value) rep.worst = {p, b, v};
    }
  }
  if (rep.worst.value > 1e-10) {
    rep.passed = false;
    throw LaxViolation("entropy dissipation positive: " + std::to_string(rep.worst.value) +
                       " (pair " + std::to_string(rep.worst.pair_index) + ", box " +
                       std::to_string(rep.worst.box_index) + ")");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Space-time machinery: (t,x) reuse of the 2D trace pipeline
// ---------------------------------------------------------------------------

/// The divergence-measure field G(t,x) = (eta(u), q(u)) on a 2D grid whose
/// axes are read as (t, x).  Shock solutions yield a piecewise-constant
/// field split by the shock line (with the exact line as the interface);
/// continuous solutions yield an analytic field with zero divergence.
inline DMField space_time_field(const EntropySolution1D& sol, const EntropyPair& pair,
                                const GridSpec& grid) {
  if (grid.dim != 2) throw ConfigError("space_time_field: (t,x) grid must be 2D");
  double sup = 0.0;
  for (double u : {sol.u_left, sol.u_right})
    sup = std::max(sup, std::hypot(pair.eta(u), pair.q(u)));

  if (sol.kind == EntropySolution1D::Kind::shock) {
    double s = sol.speed;
    Vec gl{pair.eta(sol.u_left), pair.q(sol.u_left), 0};
    Vec gr{pair.eta(sol.u_right), pair.q(sol.u_right), 0};
    // region 0: right of the shock {x >= s t}; its interior normal points
    // toward larger x.
    ShapeSpec right = ShapeSpec::halfspace({s, -1.0, 0}, 0.0);
    std::vector<PiecewiseRegion> regions;
    regions.push_back({right, [gr](const Vec&) -> Vec { return gr; },
                       [](const Vec&) { return 0.0; }});
    regions.push_back({ShapeSpec::complement(right), [gl](const Vec&) -> Vec { return gl; },
                       [](const Vec&) { return 0.0; }});

    // exact shock-line interface across the grid
    SurfaceMesh interface;
    interface.dim = 2;
    double slope = std::sqrt(1.0 + s * s);
    Vec normal{-s / slope, 1.0 / slope, 0.0};
    Vec hi = grid.extent_hi();
    int segments = grid.cells[0];
    double dt = (hi.x - grid.origin.x) / segments;
    for (int i = 0; i < segments; ++i) {
      double ta = grid.origin.x + i * dt, tb = ta + dt;
      double xa = s * ta, xb = s * tb;
      if (std::max(xa, xb) < grid.origin.y || std::min(xa, xb) > hi.y) continue;
      Facet fc;
      fc.nverts = 2;
      fc.verts[0] = {ta, xa, 0};
      fc.verts[1] = {tb, xb, 0};
      fc.area = dist(fc.verts[0], fc.verts[1]);
      fc.midpoint = (fc.verts[0] + fc.verts[1]) * 0.5;
      fc.normal = normal;
      interface.facets.push_back(fc);
    }
    return make_piecewise(regions, grid, 0.05, sup, interface);
  }

  DMField out;
  out.structure = DMField::Structure::analytic;
  out.sup_bound = sup + 1e-9;
  out.divergence = SignedMeasure::zero();
  out.evaluate = [sol, eta = pair.eta, q = pair.q](const Vec& p) -> Vec {
    double u = sol(p.x, p.y);
    return {eta(u), q(u), 0};
  };
  return out;
}

/// Entropy flux through an oriented surface in the (t,x) plane:
/// F_eta(S) = int_S (eta(u), q(u)) . nu dH, with the interior normal trace
/// of the space-time field supplying the integrand.  (The shock-pair
/// bookkeeping F(S), F(-S) with the opposite sign convention lives in
/// exceptional_recovery.)
inline double cauchy_entropy_flux(const EntropySolution1D& sol, const EntropyPair& pair,
                                  const OrientedSurface& S, const GridSpec& grid,
                                  const TraceSchedule& schedule = {}) {
  DMField G = space_time_field(sol, pair, grid);
  TraceResult tr = interior_trace(G, S.reference_set, grid, schedule);
  detail::FacetHash hash(tr.boundary_mesh, std::max(grid.spacing * 8.0, 1e-9));
  detail::KahanSum total;
  for (const auto& f : S.mesh.facets) {
    int idx = hash.nearest(f.midpoint, 2.0 * grid.spacing);
    if (idx < 0) throw ConfigError("cauchy_entropy_flux: facet off the reference boundary");
    total.add(tr.density[idx] * f.area);
  }
  return total.value();
}

/// Space-time Gauss-Green closure: the dissipation inside a rectangle
/// recovered purely from boundary traces, mu_eta(R) = -sigma_i(d*R).
inline double dissipation_via_traces(const EntropySolution1D& sol, const EntropyPair& pair,
                                     const TXBox& box, const GridSpec& grid,
                                     const TraceSchedule& schedule = {}) {
  DMField G = space_time_field(sol, pair, grid);
  ShapeSpec rect = ShapeSpec::axis_box({box.t0, box.x0, 0}, {box.t1, box.x1, 0});
  TraceResult tr = interior_trace(G, rect, grid, schedule);
  return -tr.total;
}

}  // namespace dmtk
