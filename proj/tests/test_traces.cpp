#include <catch2/catch_amalgamated.hpp>

#include "dmtk/traces.hpp"

using namespace dmtk;

namespace {
GridSpec ref_grid() { return GridSpec::cube(2, -2.0, 2.0, 1024); }  // h = 1/256
ShapeSpec unit_disk() { return ShapeSpec::ball({0, 0, 0}, 1.0); }
ShapeSpec unit_square() { return ShapeSpec::axis_box({-0.5, -0.5, 0}, {0.5, 0.5, 0}); }

// Side-1 square with one side centered on the null line {y1 = y2}; the whole
// configuration is mirror symmetric under (y1,y2) -> (-y2,-y1).
ShapeSpec rotated_square() {
  double a = 0.5 / std::sqrt(2.0);
  return ShapeSpec::rotated_box({-a, a, 0}, {0.5, 0.5, 0}, M_PI / 4.0);
}

ShapeSpec cusp_shape() {
  double t = std::tan(0.1);
  ShapeSpec wedge = ShapeSpec::intersect(
      ShapeSpec::intersect(ShapeSpec::halfspace({-t, 1, 0}, 0.0),
                           ShapeSpec::halfspace({-t, -1, 0}, 0.0)),
      ShapeSpec::halfspace({-1, 0, 0}, 0.0));
  return ShapeSpec::difference(ShapeSpec::ball({0, 0, 0}, 1.0), wedge);
}

DMField zero_inside_radial_outside(const GridSpec& g) {
  ShapeSpec disk = unit_disk();
  std::vector<PiecewiseRegion> regions;
  regions.push_back({disk, [](const Vec&) -> Vec { return {}; }, [](const Vec&) { return 0.0; }});
  regions.push_back({ShapeSpec::complement(disk),
                     [](const Vec& p) -> Vec {
                       double r = norm(p);
                       return r > 0 ? p * (1.0 / r) : Vec{};
                     },
                     [](const Vec& p) {
                       double r = norm(p);
                       return r > 0 ? 1.0 / r : 0.0;
                     }});
  return make_piecewise(regions, g, 0.05, 1.0);
}
}  // namespace

TEST_CASE("sigma_kt: divergence theorem sign check on a smooth region") {
  GridSpec g = ref_grid();
  DMField lin = make_linear(g);
  SignedMeasure sigma = sigma_kt(lin, unit_disk(), g, 0.05, 0.7);
  ScalarGridField u = mollify(rasterize(unit_disk(), g, 0.4), MollifierKernel::bump(0.05, 2));
  ScalarGridField mask = region_mask(u, 0.7);
  double lhs = sigma.eval_total();
  double rhs = -lin.divergence.eval(mask);
  REQUIRE(std::abs(lhs - rhs) / std::abs(rhs) < 0.02);
}

TEST_CASE("sigma_kt: tangential field integrates to zero") {
  GridSpec g = ref_grid();
  DMField rot = make_rotation(g);
  SignedMeasure sigma = sigma_kt(rot, unit_disk(), g, 0.05, 0.7);
  REQUIRE(std::abs(sigma.eval_total()) < 1e-3);
}

TEST_CASE("sigma_kt: chen_frid over the rotated square vanishes level by level") {
  GridSpec g = ref_grid();
  DMField cf = make_chen_frid();
  for (double t : {0.6, 0.7, 0.85}) {
    SignedMeasure sigma = sigma_kt(cf, rotated_square(), g, 0.05, t);
    REQUIRE(std::abs(sigma.eval_total()) < 0.02);
  }
}

TEST_CASE("interior trace of the linear field over the disk") {
  GridSpec g = ref_grid();
  DMField lin = make_linear(g);
  TraceResult ti = interior_trace(lin, unit_disk(), g);

  // density close to the classical F . nu = -1 on the unit circle
  double worst = 0.0;
  for (size_t f = 0; f < ti.boundary_mesh.facets.size(); ++f)
    worst = std::max(worst, std::abs(ti.density[f] + 1.0));
  REQUIRE(worst < 0.05);

  REQUIRE(std::abs(ti.total + 2.0 * M_PI) / (2.0 * M_PI) < 0.02);
  REQUIRE(std::abs(ti.proxy_measure - 2.0 * M_PI) / (2.0 * M_PI) < 0.02);
  REQUIRE(ti.residual / (2.0 * M_PI) < 0.02);
  REQUIRE(ti.unassigned_flux < 1e-9);

  // trace bound and t-stability at the finest epsilon
  double norm_scale = lin.sup_bound * ti.boundary_mesh.total_area();
  REQUIRE(ti.sup_density <= 1.05 * lin.sup_bound);
  double tmin = 1e300, tmax = -1e300;
  for (const auto& r : ti.table.rows)
    if (r.epsilon == 0.05) {
      tmin = std::min(tmin, r.value);
      tmax = std::max(tmax, r.value);
    }
  REQUIRE((tmax - tmin) / norm_scale < 0.02);
}

TEST_CASE("interior trace does not see the outside of a piecewise field") {
  GridSpec g = ref_grid();
  DMField pw = zero_inside_radial_outside(g);
  TraceResult ti = interior_trace(pw, unit_disk(), g);
  REQUIRE(std::abs(ti.total) < 0.02);
  for (double d : ti.density) REQUIRE(std::abs(d) < 0.02);
}

TEST_CASE("exterior trace picks up the outer side") {
  GridSpec g = ref_grid();
  DMField pw = zero_inside_radial_outside(g);
  TraceResult te = exterior_trace(pw, unit_disk(), g);
  REQUIRE(std::abs(te.total + 2.0 * M_PI) < 0.02 * 2.0 * M_PI);
  // density is the outer-side normal product, -1
  double worst = 0.0;
  for (double d : te.density) worst = std::max(worst, std::abs(d + 1.0));
  REQUIRE(worst < 0.05);
}

TEST_CASE("continuous fields have two-sided traces") {
  GridSpec g = ref_grid();
  DMField lin = make_linear(g);
  TraceResult ti = interior_trace(lin, unit_disk(), g);
  TraceResult te = exterior_trace(lin, unit_disk(), g);
  double scale = lin.sup_bound * ti.boundary_mesh.total_area();
  REQUIRE(std::abs(ti.total - te.total) / scale < 0.02);
}

TEST_CASE("zero field has zero trace") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 256);
  DMField zero = make_analytic([](const Vec&) -> Vec { return {}; },
                               [](const Vec&) { return 0.0; }, 0.0, g);
  TraceSchedule sched;
  sched.eps = {0.2, 0.1};
  TraceResult ti = interior_trace(zero, unit_disk(), g, sched);
  REQUIRE(ti.total == 0.0);
  REQUIRE(ti.sup_density == 0.0);
}

TEST_CASE("chen_frid has a vanishing weak normal trace on the null line") {
  GridSpec g = ref_grid();
  DMField cf = make_chen_frid();
  TraceResult ti = interior_trace(cf, rotated_square(), g);
  REQUIRE(std::abs(ti.total) < 0.02);
}

TEST_CASE("gauss-green identity with phi == 1") {
  GridSpec g = ref_grid();
  DMField lin = make_linear(g);
  GaussGreenReport gg = gauss_green_check(lin, unit_disk(), g);
  REQUIRE(gg.residual < 0.02);
  GaussGreenReport ggs = gauss_green_check(lin, unit_square(), g);
  REQUIRE(ggs.residual < 0.02);
}

TEST_CASE("gauss-green identity with a gaussian test function") {
  GridSpec g = ref_grid();
  DMField lin = make_linear(g);
  auto phi = [](const Vec& p) { return std::exp(-dot(p, p)); };
  auto grad_phi = [](const Vec& p) -> Vec { return p * (-2.0 * std::exp(-dot(p, p))); };
  GaussGreenReport gg = gauss_green_check(lin, unit_disk(), g, {}, phi, grad_phi);
  REQUIRE(gg.residual < 0.02);

  // Independent oracle for each of the three integrals (radial quadrature):
  //   int_E phi d(div F) = 2 int e^{-r^2} = 2 pi (1 - e^{-1})
  //   int_E F.grad phi   = -2 pi (1 - 2 e^{-1})
  //   boundary term      = -2 pi e^{-1}
  double bulk_oracle = 2.0 * M_PI * (1.0 - std::exp(-1.0));
  double grad_oracle = -2.0 * M_PI * (1.0 - 2.0 * std::exp(-1.0));
  double boundary_oracle = -2.0 * M_PI * std::exp(-1.0);
  REQUIRE(std::abs(bulk_oracle + grad_oracle + boundary_oracle) < 1e-12);

  ScalarGridField u = mollify(rasterize(unit_disk(), g, 0.4), MollifierKernel::bump(0.05, 2));
  ScalarGridField proxy = region_mask(u, 0.55);
  double bulk = lin.divergence.integrate(phi, &proxy);
  REQUIRE(std::abs(bulk - bulk_oracle) / std::abs(bulk_oracle) < 0.02);
  detail::KahanSum grad_term;
  for (int j = 0; j < g.cells[1]; ++j)
    for (int i = 0; i < g.cells[0]; ++i) {
      if (proxy.at(i, j) <= 0.5) continue;
      Vec p = g.center(i, j);
      grad_term.add(dot(lin(p), grad_phi(p)) * g.cell_volume());
    }
  REQUIRE(std::abs(grad_term.value() - grad_oracle) / std::abs(grad_oracle) < 0.02);
  TraceResult ti = interior_trace(lin, unit_disk(), g);
  detail::KahanSum bterm;
  for (size_t f = 0; f < ti.boundary_mesh.facets.size(); ++f)
    bterm.add(phi(ti.boundary_mesh.facets[f].midpoint) * ti.density[f] *
              ti.boundary_mesh.facets[f].area);
  REQUIRE(std::abs(bterm.value() - boundary_oracle) / std::abs(boundary_oracle) < 0.02);
}

TEST_CASE("gauss-green for chen_frid over the rotated square") {
  GridSpec g = ref_grid();
  DMField cf = make_chen_frid();
  GaussGreenReport gg = gauss_green_check(cf, rotated_square(), g);
  REQUIRE(gg.residual < 0.02);
}

TEST_CASE("jump formula for the piecewise radial field") {
  GridSpec g = ref_grid();
  DMField pw = zero_inside_radial_outside(g);
  JumpReport jr = jump_check(pw, unit_disk(), g);
  REQUIRE(std::abs(jr.jump_integral - 2.0 * M_PI) / (2.0 * M_PI) < 0.02);
  REQUIRE(jr.residual < 0.02);
}

TEST_CASE("jump formula: continuous field across an interface") {
  GridSpec g = ref_grid();
  ShapeSpec disk = unit_disk();
  auto linear = [](const Vec& p) -> Vec { return Vec{p.x, p.y, 0}; };
  auto two = [](const Vec&) { return 2.0; };
  std::vector<PiecewiseRegion> regions;
  regions.push_back({disk, linear, two});
  regions.push_back({ShapeSpec::complement(disk), linear, two});
  DMField f = make_piecewise(regions, g, 0.05, 4.0);
  JumpReport jr = jump_check(f, disk, g);
  REQUIRE(std::abs(jr.jump_integral) < 0.02 * 2.0 * M_PI * f.sup_bound);
}

TEST_CASE("jump formula: constant jump 3 across a flat segment of length 2") {
  GridSpec g = ref_grid();
  ShapeSpec box = ShapeSpec::axis_box({-1.0, -1.25, 0}, {1.0, 0.0, 0});
  std::vector<PiecewiseRegion> regions;
  regions.push_back({box, [](const Vec&) -> Vec { return {0, 3, 0}; },
                     [](const Vec&) { return 0.0; }});
  regions.push_back({ShapeSpec::complement(box), [](const Vec&) -> Vec { return {}; },
                     [](const Vec&) { return 0.0; }});
  DMField f = make_piecewise(regions, g, 0.05, 3.0);

  TraceResult ti = interior_trace(f, box, g);
  TraceResult te = exterior_trace(f, box, g);
  detail::KahanSum strip;
  for (size_t fc = 0; fc < ti.boundary_mesh.facets.size(); ++fc) {
    const Vec& m = ti.boundary_mesh.facets[fc].midpoint;
    if (std::abs(m.y) > 0.05) continue;  // top side of the box
    strip.add((ti.density[fc] - te.density[fc]) * ti.boundary_mesh.facets[fc].area);
  }
  REQUIRE(std::abs(std::abs(strip.value()) - 6.0) / 6.0 < 0.02);
}

TEST_CASE("classical consistency for continuous fields") {
  GridSpec g = ref_grid();
  for (const DMField& f : {make_linear(g), make_rotation(g)}) {
    ConsistencyReport rep = classical_consistency(f, unit_disk(), g);
    REQUIRE(rep.max_dev_interior <= rep.tolerance);
    REQUIRE(rep.max_dev_exterior <= rep.tolerance);
    REQUIRE(rep.max_side_gap <= rep.tolerance);
  }
}

TEST_CASE("classical consistency: constant field over the square matches per side") {
  GridSpec g = ref_grid();
  DMField cx = make_analytic([](const Vec&) -> Vec { return {1, 0, 0}; },
                             [](const Vec&) { return 0.0; }, 1.0, g);
  TraceResult ti = interior_trace(cx, unit_square(), g);
  for (size_t f = 0; f < ti.boundary_mesh.facets.size(); ++f) {
    const Facet& fc = ti.boundary_mesh.facets[f];
    // away from the rounded corners the density is the side normal component
    if (std::abs(std::abs(fc.midpoint.x) - 0.5) < 0.1 && std::abs(fc.midpoint.y) > 0.4) continue;
    if (std::abs(std::abs(fc.midpoint.y) - 0.5) < 0.1 && std::abs(fc.midpoint.x) > 0.4) continue;
    REQUIRE(std::abs(ti.density[f] - fc.normal.x) < 0.05);
  }
}

TEST_CASE("one-sided inclusion: disk and square pass, cusp violates fatness") {
  GridSpec g = ref_grid();
  InclusionReport disk = one_sided_inclusion(unit_disk(), {0.4, 0.25}, g);
  REQUIRE(disk.c_tilde == Catch::Approx(0.1));
  REQUIRE(disk.smallest_passing_t > 0.9);
  REQUIRE(disk.min_exterior_density >= 0.4);

  InclusionReport square = one_sided_inclusion(unit_square(), {0.2, 0.25}, g);
  REQUIRE(square.c_tilde == Catch::Approx(0.05));
  REQUIRE(square.smallest_passing_t > 0.95);

  REQUIRE_THROWS_AS(one_sided_inclusion(cusp_shape(), {0.45, 0.25}, g), FatnessViolated);
}

TEST_CASE("one-sided inclusion is an exact cellwise subset when it passes") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 512);
  TraceSchedule sched;
  InclusionReport rep = one_sided_inclusion(unit_disk(), {0.4, 0.25}, g, sched);
  ScalarGridField chi = rasterize(unit_disk(), g, 0.4);
  ScalarGridField u =
      mollify(chi, MollifierKernel::plateau(sched.finest(), 2));
  ScalarGridField mask = region_mask(u, rep.smallest_passing_t);
  for (size_t i = 0; i < mask.values.size(); ++i)
    if (mask.values[i] > 0.5) REQUIRE(chi.values[i] > 0.5);
}

TEST_CASE("approximation diagnostics shrink along the schedule") {
  GridSpec g = ref_grid();
  SignedMeasure leb = SignedMeasure::lebesgue(g);
  DiagnosticsReport rep = convergence_diagnostics(unit_disk(), leb, g);
  REQUIRE(rep.symdiff_halves);
  REQUIRE(rep.exterior_area_halves);
  // ring-width scaling: roughly proportional to epsilon
  REQUIRE(rep.per_eps_symdiff.front() > 2.0 * rep.per_eps_symdiff.back());

  SignedMeasure surf;
  surf.add_surface_part(boundary_mesh(unit_disk(), g, 0.05), 1.0);
  DiagnosticsReport rep2 = convergence_diagnostics(unit_disk(), surf, g);
  REQUIRE(rep2.per_eps_exterior_area.back() < 0.05 * 2.0 * M_PI);
}

TEST_CASE("approximation diagnostics: disjoint components are additive") {
  GridSpec g = ref_grid();
  SignedMeasure leb = SignedMeasure::lebesgue(g);
  ShapeSpec left = ShapeSpec::ball({-0.8, 0, 0}, 0.45);
  ShapeSpec right = ShapeSpec::ball({0.8, 0, 0}, 0.45);
  DiagnosticsReport both = convergence_diagnostics(ShapeSpec::unite(left, right), leb, g);
  DiagnosticsReport l = convergence_diagnostics(left, leb, g);
  DiagnosticsReport r = convergence_diagnostics(right, leb, g);
  // same levels are selected for congruent shapes; totals add up
  REQUIRE(std::abs(both.per_eps_symdiff.back() -
                   (l.per_eps_symdiff.back() + r.per_eps_symdiff.back())) <
          1e-6 + 0.05 * both.per_eps_symdiff.back());
}

TEST_CASE("approximation diagnostics reject atoms in dim >= 2") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 256);
  SignedMeasure mu;
  mu.add_atom({0, 0, 0}, 1.0);
  TraceSchedule sched;
  sched.eps = {0.2, 0.1};
  REQUIRE_THROWS_AS(convergence_diagnostics(unit_disk(), mu, g, sched), AtomRejected);
}

TEST_CASE("extend_by_zero: constant field") {
  GridSpec g = ref_grid();
  DMField one = make_analytic([](const Vec&) -> Vec { return {1, 0, 0}; },
                              [](const Vec&) { return 0.0; }, 1.0, g);
  DMField ext = extend_by_zero(one, unit_disk(), g);
  REQUIRE(std::abs(ext.divergence.eval_total()) < 1e-3);
  // density tracks the first normal component
  const auto& part = ext.divergence.surface_parts.back();
  for (size_t f = 0; f < part.density.size(); ++f)
    REQUIRE(std::abs(part.density[f] - part.mesh.facets[f].normal.x) < 0.05);
  // outside the set the extension vanishes
  REQUIRE(norm(ext({1.5, 0, 0})) == 0.0);
  REQUIRE(norm(ext({0.5, 0, 0}) - Vec{1, 0, 0}) == 0.0);
}

TEST_CASE("extend_by_zero: linear field budget") {
  GridSpec g = ref_grid();
  DMField lin = make_linear(g);
  DMField ext = extend_by_zero(lin, unit_disk(), g);
  REQUIRE(std::abs(ext.divergence.eval_total()) < 1e-3);

  ScalarGridField u = mollify(rasterize(unit_disk(), g, 0.4), MollifierKernel::bump(0.05, 2));
  ScalarGridField proxy = region_mask(u, 0.55);
  REQUIRE(std::abs(ext.divergence.eval(proxy) - 2.0 * M_PI) / (2.0 * M_PI) < 0.02);

  detail::KahanSum surf;
  const auto& part = ext.divergence.surface_parts.back();
  for (size_t f = 0; f < part.density.size(); ++f)
    surf.add(part.density[f] * part.mesh.facets[f].area);
  REQUIRE(std::abs(surf.value() + 2.0 * M_PI) / (2.0 * M_PI) < 0.02);

  double bound = lin.divergence.tv(rasterize(unit_disk(), g, 0.4)) +
                 lin.sup_bound * 2.0 * M_PI * 1.05;
  REQUIRE(ext.divergence.tv_total() <= bound);
}

TEST_CASE("extend_by_zero of the zero field is the zero measure") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 256);
  DMField zero = make_analytic([](const Vec&) -> Vec { return {}; },
                               [](const Vec&) { return 0.0; }, 0.0, g);
  TraceSchedule sched;
  sched.eps = {0.2, 0.1};
  DMField ext = extend_by_zero(zero, unit_disk(), g, sched);
  REQUIRE(ext.divergence.tv_total() < 1e-12);
}

TEST_CASE("trace schedule validation") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 64);
  TraceSchedule bad;
  bad.eps = {0.05};  // below 2h for h = 1/16
  REQUIRE_THROWS_AS(bad.validate(g.spacing), ConfigError);
  TraceSchedule few;
  few.levels_per_band = 2;
  REQUIRE_THROWS_AS(few.validate(1.0 / 256.0), ConfigError);
}
