#pragma once

#include <cctype>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dmtk/detail/numerics.hpp"
#include "dmtk/errors.hpp"

namespace dmtk {

struct BBox {
  Vec lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
         std::numeric_limits<double>::infinity()};
  Vec hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
         -std::numeric_limits<double>::infinity()};

  bool finite(int dim) const {
    for (int a = 0; a < dim; ++a)
      if (!std::isfinite(lo[a]) || !std::isfinite(hi[a]) || lo[a] > hi[a]) return false;
    return true;
  }
  bool empty() const { return lo.x > hi.x; }
};

/// Constructive solid geometry over a few exactly-evaluable primitives.
/// A point-membership query is a deterministic boolean, so a shape is a
/// fixed representative of its equivalence class: Lebesgue-null edits are
/// unrepresentable by construction.
class ShapeSpec {
  enum class Kind { Empty, Ball, AxisBox, Halfspace, RotatedBox, Union, Intersect, Complement };

  struct Node {
    Kind kind = Kind::Empty;
    Vec a, b;        // Ball: a=center, b.x=radius.  AxisBox: lo/hi.
                     // Halfspace: a=unit normal, b.x=offset ({n.y <= offset}).
                     // RotatedBox: a=center, b=half extents.
    double angle = 0.0;  // RotatedBox: rotation in the x0-x1 plane, radians
    std::shared_ptr<const Node> left, right;
  };

  std::shared_ptr<const Node> root_;

  explicit ShapeSpec(std::shared_ptr<const Node> n) : root_(std::move(n)) {}

  static bool contains_node(const Node& n, const Vec& p) {
    switch (n.kind) {
      case Kind::Empty:
        return false;
      case Kind::Ball:
        return dist(p, n.a) <= n.b.x;
      case Kind::AxisBox:
        return p.x >= n.a.x && p.x <= n.b.x && p.y >= n.a.y && p.y <= n.b.y && p.z >= n.a.z &&
               p.z <= n.b.z;
      case Kind::Halfspace:
        return dot(n.a, p) <= n.b.x;
      case Kind::RotatedBox: {
        double dx = p.x - n.a.x, dy = p.y - n.a.y, dz = p.z - n.a.z;
        double c = std::cos(n.angle), s = std::sin(n.angle);
        double lx = c * dx + s * dy;
        double ly = -s * dx + c * dy;
        return std::abs(lx) <= n.b.x && std::abs(ly) <= n.b.y && std::abs(dz) <= n.b.z;
      }
      case Kind::Union:
        return contains_node(*n.left, p) || contains_node(*n.right, p);
      case Kind::Intersect:
        return contains_node(*n.left, p) && contains_node(*n.right, p);
      case Kind::Complement:
        return !contains_node(*n.left, p);
    }
    return false;
  }

  static BBox bbox_node(const Node& n) {
    BBox box;
    auto inf = std::numeric_limits<double>::infinity();
    switch (n.kind) {
      case Kind::Empty:
        box.lo = {0, 0, 0};
        box.hi = {0, 0, 0};
        break;
      case Kind::Ball:
        box.lo = n.a - Vec{n.b.x, n.b.x, n.b.x};
        box.hi = n.a + Vec{n.b.x, n.b.x, n.b.x};
        break;
      case Kind::AxisBox:
        box.lo = n.a;
        box.hi = n.b;
        break;
      case Kind::Halfspace:
        box.lo = {-inf, -inf, -inf};
        box.hi = {inf, inf, inf};
        break;
      case Kind::RotatedBox: {
        double r2 = std::hypot(n.b.x, n.b.y);
        box.lo = n.a - Vec{r2, r2, n.b.z};
        box.hi = n.a + Vec{r2, r2, n.b.z};
        break;
      }
      case Kind::Union: {
        BBox l = bbox_node(*n.left), r = bbox_node(*n.right);
        for (int a = 0; a < 3; ++a) {
          box.lo[a] = std::min(l.lo[a], r.lo[a]);
          box.hi[a] = std::max(l.hi[a], r.hi[a]);
        }
        break;
      }
      case Kind::Intersect: {
        BBox l = bbox_node(*n.left), r = bbox_node(*n.right);
        for (int a = 0; a < 3; ++a) {
          box.lo[a] = std::max(l.lo[a], r.lo[a]);
          box.hi[a] = std::min(l.hi[a], r.hi[a]);
        }
        break;
      }
      case Kind::Complement:
        box.lo = {-inf, -inf, -inf};
        box.hi = {inf, inf, inf};
        break;
    }
    return box;
  }

  static void serialize_node(const Node& n, std::ostream& os);

public:
  ShapeSpec() : root_(std::make_shared<Node>()) {}

  static ShapeSpec empty() { return ShapeSpec(); }

  static ShapeSpec ball(Vec center, double radius) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ConfigError("ball: radius must be finite and positive");
    auto n = std::make_shared<Node>();
    n->kind = Kind::Ball;
    n->a = center;
    n->b = {radius, 0, 0};
    return ShapeSpec(n);
  }

  static ShapeSpec axis_box(Vec lo, Vec hi) {
    for (int a = 0; a < 3; ++a)
      if (!(lo[a] <= hi[a]) || !std::isfinite(lo[a]) || !std::isfinite(hi[a]))
        throw ConfigError("axis_box: requires finite lo <= hi");
    auto n = std::make_shared<Node>();
    n->kind = Kind::AxisBox;
    n->a = lo;
    n->b = hi;
    return ShapeSpec(n);
  }

  static ShapeSpec halfspace(Vec normal, double offset) {
    double nn = norm(normal);
    if (!(nn > 0.0)) throw ConfigError("halfspace: zero normal");
    auto n = std::make_shared<Node>();
    n->kind = Kind::Halfspace;
    n->a = normal * (1.0 / nn);
    n->b = {offset / nn, 0, 0};
    return ShapeSpec(n);
  }

  static ShapeSpec rotated_box(Vec center, Vec half_extents, double angle_rad) {
    if (!(half_extents.x > 0.0 && half_extents.y > 0.0))
      throw ConfigError("rotated_box: half extents must be positive");
    auto n = std::make_shared<Node>();
    n->kind = Kind::RotatedBox;
    n->a = center;
    n->b = half_extents;
    n->angle = angle_rad;
    return ShapeSpec(n);
  }

  static ShapeSpec unite(const ShapeSpec& a, const ShapeSpec& b) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Union;
    n->left = a.root_;
    n->right = b.root_;
    return ShapeSpec(n);
  }

  static ShapeSpec intersect(const ShapeSpec& a, const ShapeSpec& b) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Intersect;
    n->left = a.root_;
    n->right = b.root_;
    return ShapeSpec(n);
  }

  static ShapeSpec complement(const ShapeSpec& a) {
    auto n = std::make_shared<Node>();
    n->kind = Kind::Complement;
    n->left = a.root_;
    return ShapeSpec(n);
  }

  static ShapeSpec difference(const ShapeSpec& a, const ShapeSpec& b) {
    return intersect(a, complement(b));
  }

  bool contains(const Vec& p) const { return contains_node(*root_, p); }
  BBox bounding_box() const { return bbox_node(*root_); }
  bool is_empty_spec() const { return root_->kind == Kind::Empty; }

  std::string to_string() const {
    std::ostringstream os;
    os.precision(17);
    serialize_node(*root_, os);
    return os.str();
  }

  static ShapeSpec parse(const std::string& text);
};

inline void ShapeSpec::serialize_node(const Node& n, std::ostream& os) {
  auto vec = [&](const Vec& v) { os << "(" << v.x << "," << v.y << "," << v.z << ")"; };
  switch (n.kind) {
    case Kind::Empty:
      os << "empty()";
      break;
    case Kind::Ball:
      os << "ball(";
      vec(n.a);
      os << "," << n.b.x << ")";
      break;
    case Kind::AxisBox:
      os << "axis_box(";
      vec(n.a);
      os << ",";
      vec(n.b);
      os << ")";
      break;
    case Kind::Halfspace:
      os << "halfspace(";
      vec(n.a);
      os << "," << n.b.x << ")";
      break;
    case Kind::RotatedBox:
      os << "rotated_box(";
      vec(n.a);
      os << ",";
      vec(n.b);
      os << "," << n.angle << ")";
      break;
    case Kind::Union:
      os << "union(";
      serialize_node(*n.left, os);
      os << ",";
      serialize_node(*n.right, os);
      os << ")";
      break;
    case Kind::Intersect:
      os << "intersect(";
      serialize_node(*n.left, os);
      os << ",";
      serialize_node(*n.right, os);
      os << ")";
      break;
    case Kind::Complement:
      os << "complement(";
      serialize_node(*n.left, os);
      os << ")";
      break;
  }
}

namespace detail {

class ShapeParser {
public:
  explicit ShapeParser(const std::string& s) : s_(s) {}

  ShapeSpec parse() {
    ShapeSpec out = expr();
    skip_ws();
    if (pos_ != s_.size()) fail("trailing characters");
    return out;
  }

private:
  const std::string& s_;
  size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& what) {
    throw ConfigError("shape parse error at offset " + std::to_string(pos_) + ": " + what +
                      " in '" + s_ + "'");
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!eat(c)) fail(std::string("expected '") + c + "'");
  }

  std::string ident() {
    skip_ws();
    size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
      ++pos_;
    if (pos_ == start) fail("expected identifier");
    return s_.substr(start, pos_ - start);
  }

  double number() {
    skip_ws();
    size_t consumed = 0;
    double v = 0.0;
    try {
      v = std::stod(s_.substr(pos_), &consumed);
    } catch (...) {
      fail("expected number");
    }
    pos_ += consumed;
    return v;
  }

  Vec vector() {
    expect('(');
    Vec v;
    v.x = number();
    if (eat(',')) {
      v.y = number();
      if (eat(',')) v.z = number();
    }
    expect(')');
    return v;
  }

  ShapeSpec expr() {
    std::string name = ident();
    expect('(');
    ShapeSpec out;
    if (name == "empty") {
      out = ShapeSpec::empty();
    } else if (name == "ball") {
      Vec c = vector();
      expect(',');
      double r = number();
      out = ShapeSpec::ball(c, r);
    } else if (name == "axis_box") {
      Vec lo = vector();
      expect(',');
      Vec hi = vector();
      out = ShapeSpec::axis_box(lo, hi);
    } else if (name == "halfspace") {
      Vec n = vector();
      expect(',');
      double off = number();
      out = ShapeSpec::halfspace(n, off);
    } else if (name == "rotated_box") {
      Vec c = vector();
      expect(',');
      Vec h = vector();
      expect(',');
      double ang = number();
      out = ShapeSpec::rotated_box(c, h, ang);
    } else if (name == "union" || name == "intersect" || name == "diff") {
      ShapeSpec a = expr();
      expect(',');
      ShapeSpec b = expr();
      out = name == "union" ? ShapeSpec::unite(a, b)
            : name == "intersect" ? ShapeSpec::intersect(a, b)
                                  : ShapeSpec::difference(a, b);
    } else if (name == "complement") {
      out = ShapeSpec::complement(expr());
    } else {
      fail("unknown shape '" + name + "'");
    }
    expect(')');
    return out;
  }
};

}  // namespace detail

inline ShapeSpec ShapeSpec::parse(const std::string& text) {
  return detail::ShapeParser(text).parse();
}

}  // namespace dmtk
