#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dmtk/grid.hpp"

namespace dmtk {

/// One facet of a discrete (N-1)-surface: a signed point in 1D, a segment
/// in 2D, a triangle in 3D.  `normal` is unit length and `area` the
/// H^{N-1} measure (1 for a point facet).
struct Facet {
  std::array<Vec, 3> verts{};
  int nverts = 0;
  Vec normal;
  double area = 0.0;
  Vec midpoint;
};

struct SurfaceMesh {
  int dim = 2;
  std::vector<Facet> facets;

  double total_area() const {
    detail::KahanSum s;
    for (const auto& f : facets) s.add(f.area);
    return s.value();
  }
  bool empty() const { return facets.empty(); }
};

inline double surface_measure(const SurfaceMesh& mesh) { return mesh.total_area(); }

/// Density estimate at a point: the volume fraction |E ∩ B(y,r)| / |B(y,r)|
/// over a shrinking radius schedule, with the last refinement retained as an
/// error proxy.
struct DensityClass {
  enum class Class { exterior, interior, boundary };
  double alpha = 0.0;
  double error_proxy = 0.0;
  Class cls = Class::boundary;
};

/// Smooth superlevel-set approximant A_{eps;t} = {u > t} with its boundary.
struct Approximant {
  double epsilon = 0.0;
  double t = 0.0;
  SurfaceMesh mesh;
  ScalarGridField region_mask;
};

namespace detail {

inline Vec midpoint_of(const Facet& f) {
  Vec m;
  for (int v = 0; v < f.nverts; ++v) m += f.verts[v];
  return m * (1.0 / std::max(1, f.nverts));
}

/// Orientation of a level-set facet: along the gradient of u (toward larger
/// u, i.e., into the superlevel set).  The geometric normal is the fallback
/// when the sampled gradient is degenerate.
inline Vec level_normal(const VectorGridField& grad, const Vec& at, const Vec& geometric) {
  Vec g = grad.sample(at);
  double n = norm(g);
  if (n < 1e-10) return geometric;
  return g * (1.0 / n);
}

inline void marching_1d(const ScalarGridField& u, double t, const VectorGridField& grad,
                        SurfaceMesh& mesh) {
  const GridSpec& g = u.grid;
  for (int i = 0; i + 1 < g.cells[0]; ++i) {
    double a = u.at(i), b = u.at(i + 1);
    bool ina = a > t, inb = b > t;
    if (ina == inb) continue;
    double f = (t - a) / (b - a);
    Facet fc;
    fc.nverts = 1;
    fc.verts[0] = {g.center(i).x + f * g.spacing, 0, 0};
    fc.area = 1.0;  // counting measure
    Vec geo = inb ? Vec{1, 0, 0} : Vec{-1, 0, 0};
    fc.normal = level_normal(grad, fc.verts[0], geo);
    fc.midpoint = fc.verts[0];
    mesh.facets.push_back(fc);
  }
}

inline void marching_squares(const ScalarGridField& u, double t, const VectorGridField& grad,
                             SurfaceMesh& mesh) {
  const GridSpec& g = u.grid;
  // Corner order within a cell-square: 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1)
  static const int edge_corner[4][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}};
  for (int j = 0; j + 1 < g.cells[1]; ++j)
    for (int i = 0; i + 1 < g.cells[0]; ++i) {
      double v[4] = {u.at(i, j), u.at(i + 1, j), u.at(i + 1, j + 1), u.at(i, j + 1)};
      int mask = (v[0] > t) | ((v[1] > t) << 1) | ((v[2] > t) << 2) | ((v[3] > t) << 3);
      if (mask == 0 || mask == 15) continue;
      Vec corner[4] = {g.center(i, j), g.center(i + 1, j), g.center(i + 1, j + 1),
                       g.center(i, j + 1)};
      auto cross_point = [&](int e) {
        int c0 = edge_corner[e][0], c1 = edge_corner[e][1];
        double f = (t - v[c0]) / (v[c1] - v[c0]);
        return corner[c0] + (corner[c1] - corner[c0]) * f;
      };
      auto emit = [&](int e0, int e1) {
        Facet fc;
        fc.nverts = 2;
        fc.verts[0] = cross_point(e0);
        fc.verts[1] = cross_point(e1);
        fc.area = dist(fc.verts[0], fc.verts[1]);
        if (fc.area <= 0.0) return;
        fc.midpoint = (fc.verts[0] + fc.verts[1]) * 0.5;
        Vec tangent = fc.verts[1] - fc.verts[0];
        Vec geo = normalized(Vec{-tangent.y, tangent.x, 0});
        fc.normal = level_normal(grad, fc.midpoint, geo);
        mesh.facets.push_back(fc);
      };
      switch (mask) {
        case 1: case 14: emit(3, 0); break;
        case 2: case 13: emit(0, 1); break;
        case 4: case 11: emit(1, 2); break;
        case 8: case 7:  emit(2, 3); break;
        case 3: case 12: emit(3, 1); break;
        case 6: case 9:  emit(0, 2); break;
        case 5: case 10: {
          // Saddle: resolve by the cell-center average, deterministically.
          double center = 0.25 * (v[0] + v[1] + v[2] + v[3]);
          bool center_in = center > t;
          if ((mask == 5) == center_in) {
            emit(0, 1);
            emit(2, 3);
          } else {
            emit(3, 0);
            emit(1, 2);
          }
          break;
        }
        default: break;
      }
    }
}

inline void marching_tets(const ScalarGridField& u, double t, const VectorGridField& grad,
                          SurfaceMesh& mesh) {
  const GridSpec& g = u.grid;
  // Cube corners 0..7 in (di,dj,dk) binary order; six tetrahedra around the
  // main diagonal 0-7.
  static const int tets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
                                 {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};
  for (int k = 0; k + 1 < g.cells[2]; ++k)
    for (int j = 0; j + 1 < g.cells[1]; ++j)
      for (int i = 0; i + 1 < g.cells[0]; ++i) {
        double v[8];
        Vec p[8];
        for (int c = 0; c < 8; ++c) {
          int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
          v[c] = u.at(i + di, j + dj, k + dk);
          p[c] = g.center(i + di, j + dj, k + dk);
        }
        for (const auto& tet : tets) {
          int inside = 0;
          for (int c = 0; c < 4; ++c) inside |= (v[tet[c]] > t) << c;
          if (inside == 0 || inside == 15) continue;
          auto cross_point = [&](int a, int b) {
            double f = (t - v[tet[a]]) / (v[tet[b]] - v[tet[a]]);
            return p[tet[a]] + (p[tet[b]] - p[tet[a]]) * f;
          };
          auto emit = [&](Vec a, Vec b, Vec c) {
            Facet fc;
            fc.nverts = 3;
            fc.verts = {a, b, c};
            Vec e1 = b - a, e2 = c - a;
            Vec cr{e1.y * e2.z - e1.z * e2.y, e1.z * e2.x - e1.x * e2.z,
                   e1.x * e2.y - e1.y * e2.x};
            fc.area = 0.5 * norm(cr);
            if (fc.area <= 0.0) return;
            fc.midpoint = (a + b + c) * (1.0 / 3.0);
            fc.normal = level_normal(grad, fc.midpoint, normalized(cr));
            mesh.facets.push_back(fc);
          };
          // Enumerate separating triangles per the 4-bit pattern.
          int ones = __builtin_popcount(inside);
          int in_idx[4], out_idx[4], ni = 0, no = 0;
          for (int c = 0; c < 4; ++c)
            (inside >> c & 1) ? in_idx[ni++] = c : out_idx[no++] = c;
          if (ones == 1 || ones == 3) {
            int apex = (ones == 1) ? in_idx[0] : out_idx[0];
            int others[3], m = 0;
            for (int c = 0; c < 4; ++c)
              if (c != apex) others[m++] = c;
            emit(cross_point(apex, others[0]), cross_point(apex, others[1]),
                 cross_point(apex, others[2]));
          } else {  // 2-2 split: quad as two triangles
            Vec q0 = cross_point(in_idx[0], out_idx[0]);
            Vec q1 = cross_point(in_idx[0], out_idx[1]);
            Vec q2 = cross_point(in_idx[1], out_idx[1]);
            Vec q3 = cross_point(in_idx[1], out_idx[0]);
            emit(q0, q1, q2);
            emit(q0, q2, q3);
          }
        }
      }
}

}  // namespace detail

/// Marching extraction of the level set u = t, oriented toward {u > t}.
/// The level is nudged by +1e-12*h while it coincides with a cell value.
inline SurfaceMesh extract_level_set(const ScalarGridField& u, double t) {
  if (!(t > 0.0 && t < 1.0)) throw DegenerateLevel("extract_level_set: t must lie in (0,1)");
  double h = u.grid.spacing;
  for (int guard = 0; guard < 64; ++guard) {
    bool hit = false;
    for (double v : u.values)
      if (v == t) {
        hit = true;
        break;
      }
    if (!hit) break;
    t += 1e-12 * h;
  }
  VectorGridField grad = gradient(u);
  SurfaceMesh mesh;
  mesh.dim = u.grid.dim;
  switch (u.grid.dim) {
    case 1: detail::marching_1d(u, t, grad, mesh); break;
    case 2: detail::marching_squares(u, t, grad, mesh); break;
    case 3: detail::marching_tets(u, t, grad, mesh); break;
  }
  if (mesh.empty()) throw DegenerateLevel("extract_level_set: empty level set at t=" + std::to_string(t));
  return mesh;
}

/// Indicator of the superlevel set {u > t}.
inline ScalarGridField region_mask(const ScalarGridField& u, double t) {
  ScalarGridField out(u.grid);
  for (size_t i = 0; i < u.values.size(); ++i) out.values[i] = u.values[i] > t ? 1.0 : 0.0;
  return out;
}

inline Approximant make_approximant(const ScalarGridField& u, double epsilon, double t) {
  Approximant a;
  a.epsilon = epsilon;
  a.t = t;
  a.mesh = extract_level_set(u, t);
  a.region_mask = region_mask(u, t);
  return a;
}

/// Deterministic regular-level selector.  Candidates are an even ladder in
/// (lo,hi); a candidate t is blacklisted when the measure of {|u - t| < h}
/// exceeds 10x the band median (a plateau of u) or when no cell value falls
/// in that window at all (the band is unresolved at this grid).
inline std::vector<double> select_levels(const ScalarGridField& u, double lo, double hi,
                                         int count) {
  if (!(0.0 < lo && lo < hi && hi < 1.0))
    throw ConfigError("select_levels: need 0 < lo < hi < 1");
  if (count < 1) throw ConfigError("select_levels: count must be positive");
  double h = u.grid.spacing;
  int n_cand = std::max(4 * count, 32);
  std::vector<double> cand(n_cand), msr(n_cand);
  // Sort once; the per-candidate window count is then two binary searches.
  std::vector<double> sorted(u.values);
  std::sort(sorted.begin(), sorted.end());
  double cellvol = u.grid.cell_volume();
  for (int c = 0; c < n_cand; ++c) {
    cand[c] = lo + (hi - lo) * (c + 0.5) / n_cand;
    auto a = std::lower_bound(sorted.begin(), sorted.end(), cand[c] - h);
    auto b = std::upper_bound(sorted.begin(), sorted.end(), cand[c] + h);
    msr[c] = static_cast<double>(b - a) * cellvol;
  }
  std::vector<double> tmp(msr);
  std::nth_element(tmp.begin(), tmp.begin() + n_cand / 2, tmp.end());
  double median = tmp[n_cand / 2];

  std::vector<int> keep;
  for (int c = 0; c < n_cand; ++c)
    if (msr[c] > 0.0 && msr[c] <= 10.0 * median) keep.push_back(c);
  if (static_cast<int>(keep.size()) < count)
    throw NoRegularLevel("select_levels: band (" + std::to_string(lo) + "," + std::to_string(hi) +
                         ") has only " + std::to_string(keep.size()) + " regular candidates");
  std::vector<double> out(count);
  for (int q = 0; q < count; ++q) {
    // Evenly indexed survivors, spread across the band.
    size_t pick = (keep.size() - 1) * q / std::max(1, count - 1);
    if (count == 1) pick = keep.size() / 2;
    out[q] = cand[keep[pick]];
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (static_cast<int>(out.size()) < count)
    throw NoRegularLevel("select_levels: survivors collapse to fewer than count levels");
  return out;
}

/// Volume-fraction density of `shape` in shrinking balls around `point`.
/// Pure shape evaluation on a centered sub-lattice; no grid involved.
inline DensityClass classify_density(const ShapeSpec& shape, const Vec& point,
                                     const std::vector<double>& radii, double delta_cls = 0.05,
                                     int samples_per_axis = 192, int dim = 2) {
  if (radii.empty()) throw ConfigError("classify_density: empty radius schedule");
  for (size_t i = 1; i < radii.size(); ++i)
    if (!(radii[i] < radii[i - 1])) throw ConfigError("classify_density: radii must decrease");

  auto fraction_at = [&](double r) {
    std::int64_t in_ball = 0, in_shape = 0;
    double step = 2.0 * r / samples_per_axis;
    int nj = dim > 1 ? samples_per_axis : 1;
    int nk = dim > 2 ? samples_per_axis : 1;
    for (int k = 0; k < nk; ++k)
      for (int j = 0; j < nj; ++j)
        for (int i = 0; i < samples_per_axis; ++i) {
          Vec p = point;
          p.x += (i + 0.5) * step - r;
          if (dim > 1) p.y += (j + 0.5) * step - r;
          if (dim > 2) p.z += (k + 0.5) * step - r;
          if (dist(p, point) > r) continue;
          ++in_ball;
          if (shape.contains(p)) ++in_shape;
        }
    return in_ball > 0 ? static_cast<double>(in_shape) / in_ball : 0.0;
  };

  double prev = fraction_at(radii.front());
  double last = prev;
  for (size_t i = 1; i < radii.size(); ++i) {
    prev = last;
    last = fraction_at(radii[i]);
  }
  DensityClass out;
  out.alpha = last;
  out.error_proxy = std::abs(last - prev);
  if (out.alpha > 1.0 - delta_cls)
    out.cls = DensityClass::Class::interior;
  else if (out.alpha < delta_cls)
    out.cls = DensityClass::Class::exterior;
  else
    out.cls = DensityClass::Class::boundary;
  return out;
}

/// Convergence table rows (epsilon, t, value), epsilon descending.
struct ConvergenceTable {
  struct Row {
    double epsilon = 0.0;
    double t = 0.0;
    double value = 0.0;
  };
  std::vector<Row> rows;

  void add(double eps, double t, double value) { rows.push_back({eps, t, value}); }

  /// Largest change between consecutive rows at matching t across the two
  /// finest epsilons; the weak-* Cauchy diagnostic.
  double cauchy_gap() const {
    double gap = 0.0;
    for (size_t i = 0; i + 1 < rows.size(); ++i)
      if (rows[i].t == rows[i + 1].t)
        gap = std::max(gap, std::abs(rows[i].value - rows[i + 1].value));
    return gap;
  }

  /// True when no row drops by more than `slack` (relative) under the next
  /// finer-epsilon row with the same t.
  bool monotone_within(double slack) const {
    for (size_t i = 0; i + 1 < rows.size(); ++i) {
      if (rows[i].t != rows[i + 1].t) continue;
      if (rows[i + 1].value < rows[i].value * (1.0 - slack) - 1e-14) return false;
    }
    return true;
  }

  void to_csv(const std::string& path) const {
    std::ofstream os(path);
    os << "epsilon,t,value\n";
    os.precision(12);
    for (const auto& r : rows) os << r.epsilon << "," << r.t << "," << r.value << "\n";
  }
};

struct PerimeterResult {
  double value = 0.0;        // epsilon -> 0 estimate (see below)
  double finest_mass = 0.0;  // raw gradient mass at the finest epsilon
  ConvergenceTable table;
  bool monotone = true;
};

/// Perimeter by the gradient mass of mollified indicators over a decreasing
/// epsilon schedule.  Every fixed smooth kernel undershoots shapes with
/// corners by Theta(eps) (orthogonal edge layers overlap within eps of a
/// corner), so the returned value removes the first-order term by linear
/// extrapolation in eps from the two finest rows; the table keeps the raw
/// masses and is expected monotone within 5%.
inline PerimeterResult perimeter(const ShapeSpec& shape, const GridSpec& grid,
                                 const std::vector<double>& eps_schedule,
                                 MollifierKernel::Kind kind = MollifierKernel::Kind::smooth_bump) {
  if (eps_schedule.size() < 3) throw ConfigError("perimeter: need at least 3 epsilons");
  for (size_t i = 1; i < eps_schedule.size(); ++i)
    if (!(eps_schedule[i] < eps_schedule[i - 1]))
      throw ConfigError("perimeter: schedule must decrease");
  ScalarGridField chi = rasterize(shape, grid, 2.0 * eps_schedule.front());
  PerimeterResult out;
  for (double eps : eps_schedule) {
    ScalarGridField u = mollify(chi, MollifierKernel(kind, eps, grid.dim));
    out.table.add(eps, 0.0, gradient_mass(u));
  }
  size_t n = out.table.rows.size();
  double v1 = out.table.rows[n - 2].value, e1 = out.table.rows[n - 2].epsilon;
  double v0 = out.table.rows[n - 1].value, e0 = out.table.rows[n - 1].epsilon;
  out.finest_mass = v0;
  out.value = v0 + (v0 - v1) * e0 / (e1 - e0);
  out.monotone = out.table.monotone_within(0.05);
  return out;
}

/// Relative coarea residual: | sum|grad u| h^N - integral_0^1 H^{N-1}(u=t) dt |
/// normalized by the gradient mass.  The t-integral uses the midpoint rule
/// on `quadrature_levels` levels; empty levels contribute zero measure.
inline double coarea_check(const ScalarGridField& u, int quadrature_levels) {
  if (quadrature_levels < 2) throw ConfigError("coarea_check: need at least 2 levels");
  double gm = gradient_mass(u);
  if (gm <= 0.0) return 0.0;
  detail::KahanSum s;
  for (int q = 0; q < quadrature_levels; ++q) {
    double t = (q + 0.5) / quadrature_levels;
    double area = 0.0;
    try {
      area = surface_measure(extract_level_set(u, t));
    } catch (const DegenerateLevel&) {
      area = 0.0;
    }
    s.add(area / quadrature_levels);
  }
  return std::abs(gm - s.value()) / gm;
}

// ---------------------------------------------------------------------------
// Mesh export
// ---------------------------------------------------------------------------

/// 3D meshes as OFF; 1D/2D as CSV facet lists (midpoint, normal, area and
/// segment endpoints where applicable).
inline void write_mesh(const SurfaceMesh& mesh, const std::string& path) {
  std::ofstream os(path);
  os.precision(12);
  if (mesh.dim == 3) {
    os << "OFF\n" << 3 * mesh.facets.size() << " " << mesh.facets.size() << " 0\n";
    for (const auto& f : mesh.facets)
      for (int v = 0; v < 3; ++v)
        os << f.verts[v].x << " " << f.verts[v].y << " " << f.verts[v].z << "\n";
    for (size_t i = 0; i < mesh.facets.size(); ++i)
      os << "3 " << 3 * i << " " << 3 * i + 1 << " " << 3 * i + 2 << "\n";
    return;
  }
  os << "x0,y0,x1,y1,nx,ny,area\n";
  for (const auto& f : mesh.facets) {
    Vec a = f.verts[0];
    Vec b = f.nverts > 1 ? f.verts[1] : f.verts[0];
    os << a.x << "," << a.y << "," << b.x << "," << b.y << "," << f.normal.x << "," << f.normal.y
       << "," << f.area << "\n";
  }
}

}  // namespace dmtk
