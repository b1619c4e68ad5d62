#include <catch2/catch_amalgamated.hpp>

#include "dmtk/grid.hpp"
#include "dmtk/shapes.hpp"

using namespace dmtk;

namespace {
GridSpec grid64() { return GridSpec::cube(2, -2.0, 2.0, 256); }
ShapeSpec unit_disk() { return ShapeSpec::ball({0, 0, 0}, 1.0); }
}  // namespace

TEST_CASE("rasterize: unit disk area") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 128);  // h = 1/32 ... use finer below
  g = GridSpec::cube(2, -2.0, 2.0, 256);           // h = 1/64
  ScalarGridField chi = rasterize(unit_disk(), g);
  for (double v : chi.values) REQUIRE((v == 0.0 || v == 1.0));
  double area = chi.mass();
  double tol = 2.0 * g.spacing * 2.0 * M_PI;  // 2h * Per(E)
  REQUIRE(std::abs(area - M_PI) < tol);
}

TEST_CASE("rasterize: empty shape and unit square") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 256);
  ScalarGridField z = rasterize(ShapeSpec::empty(), g);
  REQUIRE(z.mass() == 0.0);

  ScalarGridField sq = rasterize(ShapeSpec::axis_box({0, 0, 0}, {1, 1, 0}), g);
  REQUIRE(std::abs(sq.mass() - 1.0) < 2.0 * g.spacing * 4.0);
}

TEST_CASE("rasterize: margin violation raises BoundsError") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 128);
  REQUIRE_THROWS_AS(rasterize(ShapeSpec::ball({0, 0, 0}, 1.0), g, 1.5), BoundsError);
  REQUIRE_THROWS_AS(rasterize(ShapeSpec::ball({1.5, 0, 0}, 0.6), g), BoundsError);
}

TEST_CASE("mollifier kernels have unit continuum mass") {
  for (int dim : {1, 2, 3}) {
    REQUIRE(std::abs(MollifierKernel::bump(0.1, dim).continuum_mass() - 1.0) < 1e-10);
    REQUIRE(std::abs(MollifierKernel::plateau(0.1, dim).continuum_mass() - 1.0) < 1e-10);
  }
}

TEST_CASE("plateau kernel is flat at its maximum on the inner ball") {
  MollifierKernel k2 = MollifierKernel::plateau(0.2, 2);
  double top = k2.unit_profile(0.0);
  for (double r : {0.1, 0.25, 0.4, 0.499})
    REQUIRE(k2.unit_profile(r) == Catch::Approx(top).epsilon(1e-14));
  REQUIRE(k2.unit_profile(0.6) < top);
  // dim 1 uses the reduced plateau radius 0.4
  MollifierKernel k1 = MollifierKernel::plateau(0.2, 1);
  REQUIRE(k1.plateau_radius_fraction() == Catch::Approx(0.4));
  REQUIRE(k1.unit_profile(0.39) == Catch::Approx(k1.unit_profile(0.0)).epsilon(1e-14));
}

TEST_CASE("mollify: mass conservation, range, and center value") {
  GridSpec g = grid64();
  ScalarGridField chi = rasterize(unit_disk(), g);
  MollifierKernel kern = MollifierKernel::bump(0.1, 2);
  ScalarGridField u = mollify(chi, kern);

  double m0 = chi.mass(), m1 = u.mass();
  REQUIRE(std::abs(m1 - m0) / m0 < 1e-8);
  REQUIRE(u.min_value() >= 0.0);
  REQUIRE(u.max_value() <= 1.0);
  // kernel support strictly inside E at the center
  REQUIRE(u.sample({0, 0, 0}) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("mollify: boundary value is one half at a flat-resolvable point") {
  GridSpec g = grid64();
  ScalarGridField u = mollify(rasterize(unit_disk(), g), MollifierKernel::bump(0.1, 2));
  REQUIRE(std::abs(u.sample({1.0, 0.0, 0.0}) - 0.5) < 0.02);
}

TEST_CASE("mollify: rejects unresolved kernels") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 64);  // h = 1/16
  ScalarGridField chi = rasterize(unit_disk(), g);
  REQUIRE_THROWS_AS(mollify(chi, MollifierKernel::bump(0.05, 2)), ResolutionError);
}

TEST_CASE("mollify: gradient mass bounded by perimeter estimate") {
  GridSpec g = grid64();
  ScalarGridField chi = rasterize(unit_disk(), g);
  // Oracle: finest-epsilon gradient mass stands in for the perimeter.
  double per = gradient_mass(mollify(chi, MollifierKernel::bump(0.05, 2)));
  for (double eps : {0.2, 0.1, 0.05}) {
    double gm = gradient_mass(mollify(chi, MollifierKernel::bump(eps, 2)));
    REQUIRE(gm <= per * 1.05);
  }
}

TEST_CASE("mollify: monotone pointwise convergence at interior/exterior points") {
  GridSpec g = grid64();
  ScalarGridField chi = rasterize(unit_disk(), g);
  double prev_in = 0.0, prev_out = 1.0;
  for (double eps : {0.4, 0.2, 0.1, 0.05}) {
    ScalarGridField u = mollify(chi, MollifierKernel::bump(eps, 2));
    double vin = u.sample({0.2, -0.1, 0});
    double vout = u.sample({1.6, 0.4, 0});
    REQUIRE(vin >= prev_in - 1e-12);
    REQUIRE(vout <= prev_out + 1e-12);
    prev_in = vin;
    prev_out = vout;
  }
  REQUIRE(prev_in > 1.0 - 1e-6);
  REQUIRE(prev_out < 1e-6);
}

TEST_CASE("gradient: exact for linear fields, zero for constants") {
  GridSpec g = GridSpec::cube(2, -2.0, 2.0, 64);
  ScalarGridField u(g), c(g, 0.7);
  for (int j = 0; j < g.cells[1]; ++j)
    for (int i = 0; i < g.cells[0]; ++i) u.at(i, j) = g.center(i, j).x;
  VectorGridField du = gradient(u), dc = gradient(c);
  for (int j = 1; j + 1 < g.cells[1]; ++j)
    for (int i = 1; i + 1 < g.cells[0]; ++i) {
      REQUIRE(std::abs(du.comp[0].at(i, j) - 1.0) <= 1e-12);
      REQUIRE(std::abs(du.comp[1].at(i, j)) <= 1e-12);
      REQUIRE(dc.comp[0].at(i, j) == 0.0);
      REQUIRE(dc.comp[1].at(i, j) == 0.0);
    }
}

TEST_CASE("gradient of mollified disk points radially") {
  GridSpec g = grid64();
  ScalarGridField u = mollify(rasterize(unit_disk(), g), MollifierKernel::bump(0.1, 2));
  VectorGridField du = gradient(u);
  Vec at{1.0, 0.0, 0.0};
  Vec d = normalized(du.sample(at));
  double angle = std::acos(std::clamp(dot(d, Vec{-1, 0, 0}), -1.0, 1.0)) * 180.0 / M_PI;
  REQUIRE(angle < 2.0);
}

TEST_CASE("field binary round trip") {
  GridSpec g = GridSpec::cube(2, -1.0, 1.0, 32);
  ScalarGridField f(g);
  for (size_t i = 0; i < f.values.size(); ++i) f.values[i] = std::sin(0.1 * i);
  write_field(f, "roundtrip_test_field");
  ScalarGridField r = read_field("roundtrip_test_field");
  REQUIRE(r.grid.same_layout(g));
  REQUIRE(r.values == f.values);
}

TEST_CASE("shape spec text round trip") {
  ShapeSpec s = ShapeSpec::difference(
      ShapeSpec::unite(ShapeSpec::ball({0.25, -0.5, 0}, 1.0),
                       ShapeSpec::rotated_box({0, 0.7071, 0}, {0.5, 0.5, 0}, M_PI / 4)),
      ShapeSpec::axis_box({-0.25, -0.25, 0}, {0.25, 0.25, 0}));
  std::string text = s.to_string();
  ShapeSpec p = ShapeSpec::parse(text);
  REQUIRE(p.to_string() == text);
  for (double x = -1.5; x <= 1.5; x += 0.17)
    for (double y = -1.5; y <= 1.5; y += 0.17)
      REQUIRE(p.contains({x, y, 0}) == s.contains({x, y, 0}));
}
