#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

namespace dmtk {

/// Small fixed-size vector used for points, offsets and normals in
/// dimensions 1..3.  Unused trailing components are kept at zero so that
/// full-width dot products and norms are always valid.
struct Vec {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec() = default;
  constexpr Vec(double x_, double y_ = 0.0, double z_ = 0.0) : x(x_), y(y_), z(z_) {}

  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }

  Vec operator+(const Vec& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec operator-(const Vec& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec operator-() const { return {-x, -y, -z}; }
  Vec& operator+=(const Vec& o) { x += o.x; y += o.y; z += o.z; return *this; }
};

inline Vec operator*(double s, const Vec& v) { return v * s; }

inline double dot(const Vec& a, const Vec& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(const Vec& v) { return std::sqrt(dot(v, v)); }
inline double dist(const Vec& a, const Vec& b) { return norm(a - b); }

inline Vec normalized(const Vec& v) {
  double n = norm(v);
  return n > 0.0 ? v * (1.0 / n) : Vec{};
}

namespace detail {

/// Compensated (Kahan) accumulator.  All report-facing reductions run
/// through this in a fixed traversal order so results are bitwise
/// reproducible.
class KahanSum {
public:
  void add(double v) {
    double y = v - c_;
    double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

private:
  double s_ = 0.0;
  double c_ = 0.0;
};

inline double ksum(const std::vector<double>& v) {
  KahanSum s;
  for (double x : v) s.add(x);
  return s.value();
}

/// Adaptive Simpson quadrature on [a,b].
inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12, int max_depth = 48) {
  if (a == b) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, max_depth);
}

/// Nodes/weights of 4-point Gauss-Legendre on [-1,1].
struct Gauss4 {
  static constexpr std::array<double, 4> x = {-0.8611363115940526, -0.3399810435848563,
                                              0.3399810435848563, 0.8611363115940526};
  static constexpr std::array<double, 4> w = {0.3478548451374538, 0.6521451548625461,
                                              0.6521451548625461, 0.3478548451374538};
};

/// Composite 4-point Gauss over `panels` sub-intervals of [a,b].
inline double gauss_composite(const std::function<double(double)>& f, double a, double b,
                              int panels) {
  KahanSum s;
  double w = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    double lo = a + p * w;
    for (int q = 0; q < 4; ++q) {
      double x = lo + 0.5 * w * (1.0 + Gauss4::x[q]);
      s.add(0.5 * w * Gauss4::w[q] * f(x));
    }
  }
  return s.value();
}

/// Deterministic 64-bit mix, used for seeded spot-check lattices.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline double uniform01(std::uint64_t& state) {
  return (splitmix64(state) >> 11) * 0x1.0p-53;
}

}  // namespace detail
}  // namespace dmtk
