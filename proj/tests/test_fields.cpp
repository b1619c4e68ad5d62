#include <catch2/catch_amalgamated.hpp>

#include "dmtk/fields.hpp"

using namespace dmtk;

namespace {
GridSpec grid256() { return GridSpec::cube(2, -2.0, 2.0, 256); }
ShapeSpec unit_disk() { return ShapeSpec::ball({0, 0, 0}, 1.0); }

ScalarGridField full_mask(const GridSpec& g) { return ScalarGridField(g, 1.0); }

ScalarGridField box_mask(const GridSpec& g, Vec lo, Vec hi) {
  ScalarGridField m(g);
  for (int j = 0; j < g.cells[1]; ++j)
    for (int i = 0; i < g.cells[0]; ++i) {
      Vec p = g.center(i, j);
      m.at(i, j) = (p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y) ? 1.0 : 0.0;
    }
  return m;
}
}  // namespace

TEST_CASE("make_analytic: accepts correct divergences, rejects wrong ones") {
  GridSpec g = grid256();
  REQUIRE_NOTHROW(make_linear(g));
  REQUIRE_NOTHROW(make_rotation(g));
  REQUIRE_THROWS_AS(
      make_analytic([](const Vec& p) -> Vec { return {p.x, p.y, 0}; },
                    [](const Vec&) { return 3.0; }, 4.0, g),
      DivergenceMismatch);
}

TEST_CASE("make_analytic: declared sup bound is enforced") {
  GridSpec g = grid256();
  REQUIRE_THROWS_AS(make_analytic([](const Vec& p) -> Vec { return {p.x, p.y, 0}; },
                                  [](const Vec&) { return 2.0; }, 0.5, g),
                    ConfigError);
}

TEST_CASE("chen_frid: componentwise values and null-line convention") {
  DMField f = make_chen_frid();
  Vec v = f({1.0, 0.0, 0});
  REQUIRE(v.x == Catch::Approx(std::sin(1.0)));
  REQUIRE(v.y == Catch::Approx(std::sin(1.0)));
  Vec on_line = f({0.3, 0.3, 0});
  REQUIRE(on_line.x == 0.0);
  REQUIRE(on_line.y == 0.0);
  REQUIRE(f.sup_bound == Catch::Approx(std::sqrt(2.0)));
}

TEST_CASE("chen_frid: divergence vanishes on every box") {
  DMField f = make_chen_frid();
  GridSpec g = grid256();
  REQUIRE(f.divergence.eval(full_mask(g)) == 0.0);
  REQUIRE(f.divergence.eval(box_mask(g, {-1, -1, 0}, {1, 1, 0})) == 0.0);
  REQUIRE(f.divergence.tv_total() == 0.0);
}

TEST_CASE("make_piecewise: zero inside disk, radial unit outside") {
  GridSpec g = grid256();
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
  DMField f = make_piecewise(regions, g, 0.05, 1.0);

  // jump density (F_in - F_out) . nu = 0 - (-1) = 1 per unit length
  REQUIRE(f.divergence.surface_parts.size() == 1);
  const auto& part = f.divergence.surface_parts[0];
  for (size_t i = 0; i < part.density.size(); ++i)
    REQUIRE(std::abs(part.density[i] - 1.0) < 0.02);

  // bulk density outside is 1/|y| (spot cells)
  const ScalarGridField& bulk = *f.divergence.ac;
  for (Vec p : {Vec{1.5, 0.3, 0}, Vec{-1.2, 0.9, 0}, Vec{0.2, -1.6, 0}}) {
    auto c = g.locate(p);
    REQUIRE(bulk.at(c[0], c[1]) == Catch::Approx(1.0 / norm(g.center(c[0], c[1]))).epsilon(1e-12));
  }
  for (Vec p : {Vec{0.2, 0.1, 0}, Vec{-0.4, 0.3, 0}}) {
    auto c = g.locate(p);
    REQUIRE(bulk.at(c[0], c[1]) == 0.0);
  }
}

TEST_CASE("make_piecewise: continuous field reports a machine-zero jump") {
  GridSpec g = grid256();
  ShapeSpec disk = unit_disk();
  auto linear = [](const Vec& p) -> Vec { return {p.x, p.y, 0}; };
  auto two = [](const Vec&) { return 2.0; };
  std::vector<PiecewiseRegion> regions;
  regions.push_back({disk, linear, two});
  regions.push_back({ShapeSpec::complement(disk), linear, two});
  DMField f = make_piecewise(regions, g, 0.05, 4.0);
  for (double d : f.divergence.surface_parts[0].density) REQUIRE(std::abs(d) < 1e-6);
}

TEST_CASE("make_piecewise: regions must partition the domain") {
  GridSpec g = grid256();
  std::vector<PiecewiseRegion> overlapping;
  overlapping.push_back({ShapeSpec::ball({0, 0, 0}, 1.0), [](const Vec&) -> Vec { return {}; },
                         [](const Vec&) { return 0.0; }});
  overlapping.push_back({ShapeSpec::ball({0.5, 0, 0}, 1.0), [](const Vec&) -> Vec { return {}; },
                         [](const Vec&) { return 0.0; }});
  REQUIRE_THROWS_AS(make_piecewise(overlapping, g, 0.05, 1.0), PartitionError);
}

TEST_CASE("radial_inv: flux budget concentrates on the core circle") {
  GridSpec g = grid256();
  DMField f = make_radial_inv(g);
  REQUIRE(f.sup_bound == Catch::Approx(4.0));
  // surface part carries mass 2*pi: density 1/0.25 on a circle of length 2*pi*0.25
  double mass = 0.0;
  const auto& part = f.divergence.surface_parts[0];
  for (size_t i = 0; i < part.density.size(); ++i)
    mass += part.density[i] * part.mesh.facets[i].area;
  REQUIRE(std::abs(mass - 2.0 * M_PI) / (2.0 * M_PI) < 0.02);
}

TEST_CASE("jump-formula bookkeeping is additive") {
  GridSpec g = grid256();
  DMField f = make_radial_inv(g);
  ScalarGridField all = full_mask(g);
  double whole = f.divergence.eval(all);
  SignedMeasure bulk_only = SignedMeasure::from_density(*f.divergence.ac);
  SignedMeasure surf_only;
  surf_only.add_surface_part(f.divergence.surface_parts[0].mesh,
                             f.divergence.surface_parts[0].density);
  double parts = bulk_only.eval(all) + surf_only.eval(all);
  REQUIRE(std::abs(whole - parts) <= 1e-6 * std::max(1.0, std::abs(whole)));
}

TEST_CASE("product_rule: identity weight returns the divergence unchanged") {
  GridSpec g = grid256();
  DMField f = make_linear(g);
  BVWeight one = BVWeight::from_field(ScalarGridField(g, 1.0), {0.2, 0.1});
  ProductRuleResult r = product_rule(one, f, {0.2, 0.1});
  REQUIRE(r.field.divergence.eval_total() == f.divergence.eval_total());
  REQUIRE(r.field.divergence.tv_total() == f.divergence.tv_total());
}

TEST_CASE("product_rule: smooth weight reduces to the classical identity") {
  GridSpec g = grid256();
  DMField f = make_linear(g);
  ScalarGridField gy(g);
  for (int j = 0; j < g.cells[1]; ++j)
    for (int i = 0; i < g.cells[0]; ++i) gy.at(i, j) = g.center(i, j).x;
  BVWeight w = BVWeight::from_field(gy, {0.2, 0.1});
  ProductRuleResult r = product_rule(w, f, {0.2, 0.1});
  // div(gF) = g divF + F . grad g = 2 y1 + y1 = 3 y1, away from the border band
  const ScalarGridField& dens = *r.field.divergence.ac;
  double worst = 0.0;
  for (int j = 0; j < g.cells[1]; ++j)
    for (int i = 0; i < g.cells[0]; ++i) {
      Vec p = g.center(i, j);
      if (std::abs(p.x) > 1.0 || std::abs(p.y) > 1.0) continue;
      worst = std::max(worst, std::abs(dens.at(i, j) - 3.0 * p.x));
    }
  REQUIRE(worst < 1e-3);
}

TEST_CASE("product_rule: indicator weight against a constant field") {
  GridSpec g = grid256();
  DMField f = make_analytic([](const Vec&) -> Vec { return {1.0, 0.0, 0}; },
                            [](const Vec&) { return 0.0; }, 1.0, g);
  BVWeight chi = BVWeight::from_field(rasterize(unit_disk(), g), {0.2, 0.1, 0.05});
  ProductRuleResult r = product_rule(chi, f, {0.2, 0.1, 0.05});

  // total divergence over the grid vanishes (compact support)
  for (const auto& row : r.total_table.rows) REQUIRE(std::abs(row.value) < 1e-6);

  // Oracle: row-by-row 1D variation of g_k integrates |F . grad g_k|
  // exactly for F = (1,0); the mass tends to 2 x diameter = 4.
  ScalarGridField gk = mollify_unclamped(rasterize(unit_disk(), g), MollifierKernel::bump(0.05, 2));
  detail::KahanSum oracle;
  for (int j = 0; j < g.cells[1]; ++j) {
    double tv_row = 0.0;
    for (int i = 0; i + 1 < g.cells[0]; ++i) tv_row += std::abs(gk.at(i + 1, j) - gk.at(i, j));
    oracle.add(tv_row * g.spacing);
  }
  double tv_finest = r.tv_table.rows.back().value;
  REQUIRE(std::abs(tv_finest - oracle.value()) / oracle.value() < 0.02);
  REQUIRE(std::abs(tv_finest - 4.0) / 4.0 < 0.05);

  // Cauchy property: successive tv gaps shrink along the schedule
  const auto& rows = r.tv_table.rows;
  REQUIRE(std::abs(rows[2].value - rows[1].value) < std::abs(rows[1].value - rows[0].value));
}

TEST_CASE("sampled fields interpolate within their bound") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 64);
  VectorGridField data(g);
  for (int j = 0; j < g.cells[1]; ++j)
    for (int i = 0; i < g.cells[0]; ++i) {
      Vec p = g.center(i, j);
      data.comp[0].at(i, j) = std::sin(p.x);
      data.comp[1].at(i, j) = std::cos(p.y);
    }
  DMField f = make_sampled(data);
  std::uint64_t st = 7;
  for (int s = 0; s < 2000; ++s) {
    Vec p{-2.0 + 4.0 * detail::uniform01(st), -2.0 + 4.0 * detail::uniform01(st), 0};
    REQUIRE(norm(f(p)) <= f.sup_bound + 1e-12);
  }
  REQUIRE(norm(f({0.5, 0.5, 0}) - Vec{std::sin(0.5), std::cos(0.5), 0}) < 1e-3);
}
