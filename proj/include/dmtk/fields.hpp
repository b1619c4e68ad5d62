#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dmtk/measures.hpp"

namespace dmtk {

namespace detail {

/// Uniform spatial hash over facet midpoints for nearest-facet queries.
class FacetHash {
public:
  FacetHash() = default;
  FacetHash(const SurfaceMesh& mesh, double cell) : cell_(cell) {
    pts_.reserve(mesh.facets.size());
    for (const auto& f : mesh.facets) pts_.push_back(f.midpoint);
    for (size_t i = 0; i < pts_.size(); ++i) table_[key(pts_[i])].push_back(i);
  }

  /// Index of the nearest midpoint within max_dist, or -1.  Searches ring by
  /// ring and stops once no farther ring can improve on the best hit.
  int nearest(const Vec& p, double max_dist) const {
    if (pts_.empty()) return -1;
    int reach = static_cast<int>(std::ceil(max_dist / cell_));
    auto [ci, cj, ck] = key(p);
    int best = -1;
    double best_d = max_dist;
    for (int ring = 0; ring <= reach; ++ring) {
      if (best >= 0 && best_d <= (ring - 1) * cell_) break;
      for (int dk = -ring; dk <= ring; ++dk)
        for (int dj = -ring; dj <= ring; ++dj)
          for (int di = -ring; di <= ring; ++di) {
            if (std::max({std::abs(di), std::abs(dj), std::abs(dk)}) != ring) continue;
            auto it = table_.find({ci + di, cj + dj, ck + dk});
            if (it == table_.end()) continue;
            for (size_t idx : it->second) {
              double d = dist(pts_[idx], p);
              if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(idx);
              }
            }
          }
    }
    return best;
  }

  double distance_to(const Vec& p, double max_dist) const {
    int idx = nearest(p, max_dist);
    return idx < 0 ? std::numeric_limits<double>::infinity() : dist(pts_[idx], p);
  }

private:
  struct Key {
    int i, j, k;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    size_t operator()(const Key& k) const {
      return std::hash<long long>()((static_cast<long long>(k.i) * 73856093LL) ^
                                    (static_cast<long long>(k.j) * 19349663LL) ^
                                    (static_cast<long long>(k.k) * 83492791LL));
    }
  };
  double cell_ = 1.0;
  std::vector<Vec> pts_;
  std::unordered_map<Key, std::vector<size_t>, KeyHash> table_;

  Key key(const Vec& p) const {
    return {static_cast<int>(std::floor(p.x / cell_)), static_cast<int>(std::floor(p.y / cell_)),
            static_cast<int>(std::floor(p.z / cell_))};
  }
};

}  // namespace detail

/// Bounded vector field with a Radon-measure divergence.
class DMField {
public:
  using Evaluator = std::function<Vec(const Vec&)>;
  enum class Structure { analytic, piecewise, sampled };

  struct PiecewiseData {
    std::vector<ShapeSpec> regions;
    std::vector<Evaluator> region_eval;
    SurfaceMesh interface;
    detail::FacetHash interface_hash;
    double offset = 0.0;  // one grid cell
  };

  Evaluator evaluate;
  double sup_bound = 0.0;
  SignedMeasure divergence;
  Structure structure = Structure::analytic;
  std::shared_ptr<const PiecewiseData> piecewise;
  std::shared_ptr<const VectorGridField> samples;

  Vec operator()(const Vec& p) const { return evaluate(p); }

  /// Field value for surface quadrature: piecewise fields sampled within one
  /// cell of their interface are nudged one cell along `side` so the value
  /// comes from a definite side.
  Vec eval_sided(const Vec& p, const Vec& side) const {
    if (structure != Structure::piecewise) return evaluate(p);
    const auto& pw = *piecewise;
    if (pw.interface_hash.distance_to(p, pw.offset) <= pw.offset)
      return evaluate(p + side * pw.offset);
    return evaluate(p);
  }
};

namespace detail {

inline void check_bounded(const DMField& f, const GridSpec& grid, std::uint64_t seed,
                          int samples = 10000) {
  std::uint64_t state = seed ^ 0x6d746b64ULL;
  Vec hi = grid.extent_hi();
  for (int s = 0; s < samples; ++s) {
    Vec p;
    for (int a = 0; a < grid.dim; ++a)
      p[a] = grid.origin[a] + (hi[a] - grid.origin[a]) * uniform01(state);
    if (norm(f.evaluate(p)) > f.sup_bound + 1e-9)
      throw ConfigError("DMField: |F| exceeds the declared sup bound at a lattice point");
  }
}

}  // namespace detail

/// Analytic field with caller-supplied divergence density.  The declaration
/// is spot-checked against central finite differences at 100 seeded interior
/// points; tolerance 1e-4 relative with an absolute floor of 1.
inline DMField make_analytic(const DMField::Evaluator& f,
                             const std::function<double(const Vec&)>& div_density,
                             double sup_bound, const GridSpec& grid, std::uint64_t seed = 12345) {
  double step = grid.spacing / 8.0;
  std::uint64_t state = seed;
  Vec hi = grid.extent_hi();
  for (int s = 0; s < 100; ++s) {
    Vec p;
    for (int a = 0; a < grid.dim; ++a) {
      double lo = grid.origin[a] + 0.1 * (hi[a] - grid.origin[a]);
      double up = hi[a] - 0.1 * (hi[a] - grid.origin[a]);
      p[a] = lo + (up - lo) * detail::uniform01(state);
    }
    double fd = 0.0;
    for (int a = 0; a < grid.dim; ++a) {
      Vec dp = p, dm = p;
      dp[a] += step;
      dm[a] -= step;
      fd += (f(dp)[a] - f(dm)[a]) / (2.0 * step);
    }
    double declared = div_density(p);
    if (std::abs(fd - declared) > 1e-4 * std::max(1.0, std::abs(declared)))
      throw DivergenceMismatch("make_analytic: declared divergence off by " +
                               std::to_string(fd - declared) + " at (" + std::to_string(p.x) +
                               "," + std::to_string(p.y) + ")");
  }
  DMField out;
  out.evaluate = f;
  out.sup_bound = sup_bound;
  out.structure = DMField::Structure::analytic;
  ScalarGridField dens(grid);
  for (int k = 0; k < grid.cells[2]; ++k)
    for (int j = 0; j < grid.cells[1]; ++j)
      for (int i = 0; i < grid.cells[0]; ++i) dens.at(i, j, k) = div_density(grid.center(i, j, k));
  out.divergence = SignedMeasure::from_density(std::move(dens));
  detail::check_bounded(out, grid, seed);
  return out;
}

/// The Chen-Frid field: tangential oscillation sin(1/(y1-y2)) carried by the
/// direction (1,1), divergence-free, with an essential singularity at every
/// point of the null line {y1 = y2}.  Values on the line are fixed to zero;
/// no surface or atomic part exists there.
inline DMField make_chen_frid() {
  DMField out;
  out.evaluate = [](const Vec& p) -> Vec {
    double s = p.x - p.y;
    if (s == 0.0) return {0.0, 0.0, 0.0};
    double v = std::sin(1.0 / s);
    return {v, v, 0.0};
  };
  out.sup_bound = std::sqrt(2.0);
  out.structure = DMField::Structure::analytic;
  out.divergence = SignedMeasure::zero();
  return out;
}

struct PiecewiseRegion {
  ShapeSpec shape;
  DMField::Evaluator field;
  std::function<double(const Vec&)> div_density;
};

/// Field defined per region of a partition, with the divergence split into
/// bulk densities plus a surface part on the interface carrying the normal
/// jump (F_in . nu - F_out . nu), nu the interior normal of the nu-side
/// region.  The interface mesh is extracted once at `fine_eps` and frozen;
/// callers with an analytically known interface (e.g. halfspace splits,
/// whose regions have no finite bounding box to rasterize) may pass it
/// explicitly, oriented by the interior normal of region 0.
inline DMField make_piecewise(const std::vector<PiecewiseRegion>& regions, const GridSpec& grid,
                              double fine_eps, double sup_bound,
                              const std::optional<SurfaceMesh>& explicit_interface = std::nullopt) {
  if (regions.size() < 2) throw PartitionError("make_piecewise: need at least two regions");

  // Partition check at cell centers.
  for (int k = 0; k < grid.cells[2]; ++k)
    for (int j = 0; j < grid.cells[1]; ++j)
      for (int i = 0; i < grid.cells[0]; ++i) {
        Vec p = grid.center(i, j, k);
        int hits = 0;
        for (const auto& r : regions) hits += r.shape.contains(p) ? 1 : 0;
        if (hits != 1)
          throw PartitionError("make_piecewise: cell center covered " + std::to_string(hits) +
                               " times");
      }

  auto region_of = [&regions](const Vec& p) -> int {
    for (size_t r = 0; r < regions.size(); ++r)
      if (regions[r].shape.contains(p)) return static_cast<int>(r);
    return static_cast<int>(regions.size()) - 1;
  };

  // Interface: boundaries of all regions but the last (in a partition the
  // last region's boundary is already covered).
  SurfaceMesh interface;
  interface.dim = grid.dim;
  if (explicit_interface) {
    interface = *explicit_interface;
  } else {
    for (size_t r = 0; r + 1 < regions.size(); ++r) {
      ScalarGridField u =
          mollify(rasterize(regions[r].shape, grid, 2.0 * fine_eps),
                  MollifierKernel::bump(fine_eps, grid.dim));
      SurfaceMesh m = extract_level_set(u, 0.5);
      interface.facets.insert(interface.facets.end(), m.facets.begin(), m.facets.end());
    }
  }

  auto pw = std::make_shared<DMField::PiecewiseData>();
  pw->regions.reserve(regions.size());
  for (const auto& r : regions) {
    pw->regions.push_back(r.shape);
    pw->region_eval.push_back(r.field);
  }
  pw->interface = interface;
  pw->interface_hash = detail::FacetHash(interface, std::max(grid.spacing * 8.0, 1e-6));
  pw->offset = grid.spacing;

  DMField out;
  out.structure = DMField::Structure::piecewise;
  out.sup_bound = sup_bound;
  out.piecewise = pw;
  out.evaluate = [pw, region_of_regions = regions](const Vec& p) -> Vec {
    for (size_t r = 0; r < region_of_regions.size(); ++r)
      if (region_of_regions[r].shape.contains(p)) return region_of_regions[r].field(p);
    return region_of_regions.back().field(p);
  };

  // Divergence: bulk densities by cell-center region, jump density on the
  // interface evaluated one cell to each side.
  ScalarGridField bulk(grid);
  for (int k = 0; k < grid.cells[2]; ++k)
    for (int j = 0; j < grid.cells[1]; ++j)
      for (int i = 0; i < grid.cells[0]; ++i) {
        Vec p = grid.center(i, j, k);
        bulk.at(i, j, k) = regions[region_of(p)].div_density(p);
      }
  out.divergence = SignedMeasure::from_density(std::move(bulk));

  // One-sided limits at the interface by linear extrapolation from one and
  // two cells off; exact for fields linear near the interface, so a field
  // continuous across it reports a zero jump to machine accuracy.
  std::vector<double> jump(interface.facets.size());
  double off = grid.spacing;
  auto one_sided = [&](const Facet& fc, double sgn) {
    Vec p1 = fc.midpoint + fc.normal * (sgn * off);
    Vec p2 = fc.midpoint + fc.normal * (sgn * 2.0 * off);
    Vec v1 = regions[region_of(p1)].field(p1);
    Vec v2 = regions[region_of(p2)].field(p2);
    return 2.0 * dot(v1, fc.normal) - dot(v2, fc.normal);
  };
  for (size_t f = 0; f < interface.facets.size(); ++f) {
    const Facet& fc = interface.facets[f];
    jump[f] = one_sided(fc, +1.0) - one_sided(fc, -1.0);
  }
  out.divergence.add_surface_part(interface, std::move(jump));

  detail::check_bounded(out, grid, 9001);
  return out;
}

/// Weight of bounded variation together with its gradient-mass table.
struct BVWeight {
  ScalarGridField field;
  ConvergenceTable gradient_mass_table;

  static BVWeight from_field(ScalarGridField g, const std::vector<double>& eps_schedule) {
    BVWeight out;
    out.field = std::move(g);
    for (double eps : eps_schedule) {
      ScalarGridField gk =
          mollify_unclamped(out.field, MollifierKernel::bump(eps, out.field.grid.dim));
      out.gradient_mass_table.add(eps, 0.0, gradient_mass(gk));
    }
    for (const auto& r : out.gradient_mass_table.rows)
      if (!std::isfinite(r.value)) throw ConfigError("BVWeight: gradient mass not finite");
    return out;
  }
};

struct ProductRuleResult {
  DMField field;                   // g F with the finest-level divergence
  ConvergenceTable total_table;    // eval of the divergence per epsilon
  ConvergenceTable tv_table;       // total variation per epsilon
};

/// div(gF) as the mollified surrogate g_k (div F) + F . grad(g_k), reported
/// at the finest schedule epsilon with a Cauchy diagnostic over the schedule.
/// A constant weight short-circuits: mollifying a constant is the identity,
/// so the divergence of gF is g times the divergence of F with no surrogate.
inline ProductRuleResult product_rule(const BVWeight& g, const DMField& F,
                                      const std::vector<double>& eps_schedule) {
  if (eps_schedule.empty()) throw ConfigError("product_rule: empty schedule");
  const GridSpec& grid = g.field.grid;
  for (size_t i = 1; i < eps_schedule.size(); ++i)
    if (!(eps_schedule[i] < eps_schedule[i - 1]))
      throw ConfigError("product_rule: schedule must decrease");

  bool constant = true;
  for (double v : g.field.values)
    if (v != g.field.values.front()) {
      constant = false;
      break;
    }

  auto assemble = [&](double eps) -> SignedMeasure {
    ScalarGridField gk = constant
                             ? g.field
                             : mollify_unclamped(g.field, MollifierKernel::bump(eps, grid.dim));
    SignedMeasure m;
    ScalarGridField dens(grid);
    std::optional<VectorGridField> grad_gk;
    if (!constant) grad_gk = gradient(gk);
    const ScalarGridField* div_ac = F.divergence.ac ? &*F.divergence.ac : nullptr;
    for (int k = 0; k < grid.cells[2]; ++k)
      for (int j = 0; j < grid.cells[1]; ++j)
        for (int i = 0; i < grid.cells[0]; ++i) {
          Vec p = grid.center(i, j, k);
          double v = 0.0;
          if (div_ac) v += gk.at(i, j, k) * div_ac->at(i, j, k);
          if (grad_gk) v += dot(F.evaluate(p), grad_gk->at(i, j, k));
          dens.at(i, j, k) = v;
        }
    m.ac = std::move(dens);
    for (const auto& part : F.divergence.surface_parts) {
      std::vector<double> scaled(part.density.size());
      for (size_t f = 0; f < part.density.size(); ++f)
        scaled[f] = part.density[f] * gk.sample(part.mesh.facets[f].midpoint);
      m.add_surface_part(part.mesh, std::move(scaled));
    }
    for (const auto& a : F.divergence.atoms) m.add_atom(a.point, a.weight * gk.sample(a.point));
    return m;
  };

  ProductRuleResult out;
  SignedMeasure finest;
  for (double eps : eps_schedule) {
    SignedMeasure m = assemble(eps);
    out.total_table.add(eps, 0.0, m.eval_total());
    out.tv_table.add(eps, 0.0, m.tv_total());
    finest = std::move(m);
  }

  ScalarGridField gk_final =
      constant ? g.field
               : mollify_unclamped(g.field, MollifierKernel::bump(eps_schedule.back(), grid.dim));
  auto gk_shared = std::make_shared<ScalarGridField>(std::move(gk_final));
  double gmax = 0.0;
  for (double v : gk_shared->values) gmax = std::max(gmax, std::abs(v));

  out.field.evaluate = [gk = gk_shared, f = F.evaluate](const Vec& p) -> Vec {
    return f(p) * gk->sample(p);
  };
  out.field.sup_bound = F.sup_bound * gmax;
  out.field.structure = F.structure;
  out.field.piecewise = F.piecewise;
  out.field.divergence = std::move(finest);
  return out;
}

// ---------------------------------------------------------------------------
// Named field registry (CLI-facing)
// ---------------------------------------------------------------------------

inline DMField make_linear(const GridSpec& grid) {
  double r = 0.0;
  Vec hi = grid.extent_hi();
  for (int a = 0; a < grid.dim; ++a)
    r += std::pow(std::max(std::abs(grid.origin[a]), std::abs(hi[a])), 2);
  return make_analytic([dim = grid.dim](const Vec& p) -> Vec {
    Vec v;
    for (int a = 0; a < dim; ++a) v[a] = p[a];
    return v;
  },
                       [dim = grid.dim](const Vec&) { return double(dim); }, std::sqrt(r), grid);
}

inline DMField make_rotation(const GridSpec& grid) {
  if (grid.dim != 2) throw ConfigError("rotation field is two-dimensional");
  Vec hi = grid.extent_hi();
  double r = std::hypot(std::max(std::abs(grid.origin.x), std::abs(hi.x)),
                        std::max(std::abs(grid.origin.y), std::abs(hi.y)));
  return make_analytic([](const Vec& p) -> Vec { return {-p.y, p.x, 0}; },
                       [](const Vec&) { return 0.0; }, r, grid);
}

inline DMField make_radial_unit(const GridSpec& grid) {
  return make_analytic(
      [](const Vec& p) -> Vec {
        double r = norm(p);
        return r > 0.0 ? p * (1.0 / r) : Vec{};
      },
      [dim = grid.dim](const Vec& p) {
        double r = norm(p);
        return r > 0.0 ? (dim - 1) / r : 0.0;
      },
      1.0, grid);
}

/// y/|y|^2 outside a small disk, zero inside: bounded, with the whole 2*pi
/// flux of the ideal point-source field carried as a jump on the circle.
inline DMField make_radial_inv(const GridSpec& grid, double core_radius = 0.25) {
  if (grid.dim != 2) throw ConfigError("radial_inv field is two-dimensional");
  auto outside = [](const Vec& p) -> Vec {
    double r2 = dot(p, p);
    return r2 > 0.0 ? p * (1.0 / r2) : Vec{};
  };
  std::vector<PiecewiseRegion> regions;
  ShapeSpec core = ShapeSpec::ball({0, 0, 0}, core_radius);
  regions.push_back({core, [](const Vec&) -> Vec { return {}; }, [](const Vec&) { return 0.0; }});
  regions.push_back(
      {ShapeSpec::complement(core), outside, [](const Vec&) { return 0.0; }});
  return make_piecewise(regions, grid, 0.05, 1.0 / core_radius);
}

inline DMField make_sampled(const VectorGridField& samples, double fine_eps_unused = 0.0) {
  (void)fine_eps_unused;
  DMField out;
  auto data = std::make_shared<VectorGridField>(samples);
  out.samples = data;
  out.structure = DMField::Structure::sampled;
  out.evaluate = [data](const Vec& p) -> Vec { return data->sample(p); };
  double sup = 0.0;
  for (std::int64_t idx = 0; idx < samples.grid.cell_count(); ++idx) {
    double q = 0.0;
    for (int a = 0; a < samples.grid.dim; ++a) q += samples.comp[a].values[idx] * samples.comp[a].values[idx];
    sup = std::max(sup, q);
  }
  out.sup_bound = std::sqrt(sup);
  // Divergence by central differences of the sampled components.
  const GridSpec& g = samples.grid;
  ScalarGridField div(g);
  for (int a = 0; a < g.dim; ++a) {
    VectorGridField d = gradient(samples.comp[a]);
    for (std::int64_t idx = 0; idx < g.cell_count(); ++idx) div.values[idx] += d.comp[a].values[idx];
  }
  out.divergence = SignedMeasure::from_density(std::move(div));
  return out;
}

}  // namespace dmtk
