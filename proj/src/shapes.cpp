#include "organocc/shapes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "organocc/error.hpp"

namespace organocc::shapes {
namespace {

double robust_length(double a, double b) {
  const double m = std::max(std::abs(a), std::abs(b));
  if (m == 0) return 0;
  a /= m;
  b /= m;
  return m * std::sqrt(a * a + b * b);
}

double robust_length(double a, double b, double c) {
  const double m = std::max({std::abs(a), std::abs(b), std::abs(c)});
  if (m == 0) return 0;
  a /= m;
  b /= m;
  c /= m;
  return m * std::sqrt(a * a + b * b + c * c);
}

// Root of sum (r_i z_i / (s + r_i))^2 = 1 on the bracket where it is monotone.
double root2(double r0, double z0, double z1, double g) {
  const double n0 = r0 * z0;
  double s0 = z1 - 1;
  double s1 = g < 0 ? 0 : robust_length(n0, z1) - 1;
  double s = 0;
  for (int i = 0; i < 2000; ++i) {
    s = 0.5 * (s0 + s1);
    if (s == s0 || s == s1) break;
    const double a = n0 / (s + r0), b = z1 / (s + 1);
    const double gs = a * a + b * b - 1;
    if (gs > 0) {
      s0 = s;
    } else if (gs < 0) {
      s1 = s;
    } else {
      break;
    }
  }
  return s;
}

double root3(double r0, double r1, double z0, double z1, double z2, double g) {
  const double n0 = r0 * z0, n1 = r1 * z1;
  double s0 = z2 - 1;
  double s1 = g < 0 ? 0 : robust_length(n0, n1, z2) - 1;
  double s = 0;
  for (int i = 0; i < 2000; ++i) {
    s = 0.5 * (s0 + s1);
    if (s == s0 || s == s1) break;
    const double a = n0 / (s + r0), b = n1 / (s + r1), c = z2 / (s + 1);
    const double gs = a * a + b * b + c * c - 1;
    if (gs > 0) {
      s0 = s;
    } else if (gs < 0) {
      s1 = s;
    } else {
      break;
    }
  }
  return s;
}

// e0 >= e1 > 0, y0, y1 >= 0.
double ellipse_distance(double e0, double e1, double y0, double y1) {
  if (y1 > 0) {
    if (y0 > 0) {
      const double z0 = y0 / e0, z1 = y1 / e1;
      const double g = z0 * z0 + z1 * z1 - 1;
      if (g == 0) return 0;
      const double r0 = (e0 / e1) * (e0 / e1);
      const double s = root2(r0, z0, z1, g);
      const double x0 = r0 * y0 / (s + r0), x1 = y1 / (s + 1);
      return robust_length(x0 - y0, x1 - y1);
    }
    return std::abs(y1 - e1);
  }
  const double numer0 = e0 * y0, denom0 = e0 * e0 - e1 * e1;
  if (numer0 < denom0) {
    const double xde0 = numer0 / denom0;
    const double x0 = e0 * xde0, x1 = e1 * std::sqrt(std::max(0.0, 1 - xde0 * xde0));
    return robust_length(x0 - y0, x1);
  }
  return std::abs(y0 - e0);
}

// e0 >= e1 >= e2 > 0, y_i >= 0.
double ellipsoid_distance_sorted(double e0, double e1, double e2, double y0, double y1, double y2) {
  if (y2 > 0) {
    if (y1 > 0) {
      if (y0 > 0) {
        const double z0 = y0 / e0, z1 = y1 / e1, z2 = y2 / e2;
        const double g = z0 * z0 + z1 * z1 + z2 * z2 - 1;
        if (g == 0) return 0;
        const double r0 = (e0 / e2) * (e0 / e2), r1 = (e1 / e2) * (e1 / e2);
        const double s = root3(r0, r1, z0, z1, z2, g);
        const double x0 = r0 * y0 / (s + r0), x1 = r1 * y1 / (s + r1), x2 = y2 / (s + 1);
        return robust_length(x0 - y0, x1 - y1, x2 - y2);
      }
      return ellipse_distance(e1, e2, y1, y2);
    }
    if (y0 > 0) return ellipse_distance(e0, e2, y0, y2);
    return std::abs(y2 - e2);
  }
  const double denom0 = e0 * e0 - e2 * e2, denom1 = e1 * e1 - e2 * e2;
  const double numer0 = e0 * y0, numer1 = e1 * y1;
  if (numer0 < denom0 && numer1 < denom1) {
    const double xde0 = numer0 / denom0, xde1 = numer1 / denom1;
    const double discr = 1 - xde0 * xde0 - xde1 * xde1;
    if (discr > 0) {
      const double x0 = e0 * xde0, x1 = e1 * xde1, x2 = e2 * std::sqrt(discr);
      return robust_length(x0 - y0, x1 - y1, x2);
    }
  }
  return ellipse_distance(e0, e1, y0, y1);
}

Aabb transform_box(const Aabb& b, const Affine& t) {
  Aabb out{{1e300, 1e300, 1e300}, {-1e300, -1e300, -1e300}};
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner{(c & 1) ? b.hi.x : b.lo.x, (c & 2) ? b.hi.y : b.lo.y, (c & 4) ? b.hi.z : b.lo.z};
    const Vec3 p = t.apply(corner);
    for (int a = 0; a < 3; ++a) {
      out.lo[a] = std::min(out.lo[a], p[a]);
      out.hi[a] = std::max(out.hi[a], p[a]);
    }
  }
  return out;
}

class SphereNode final : public SdfNode {
 public:
  SphereNode(Vec3 c, double r) : c_(c), r_(r) {}
  double sdf(const Vec3& p) const override { return distance(p, c_) - r_; }
  Aabb bounds() const override { return Aabb{c_, c_}.expanded(r_); }

 private:
  Vec3 c_;
  double r_;
};

class EllipsoidNode final : public SdfNode {
 public:
  EllipsoidNode(Vec3 c, Vec3 radii, Affine rotation)
      : c_(c), radii_(radii), rot_(rotation), inv_rot_(rotation.inverse()) {}

  double sdf(const Vec3& p) const override {
    const Vec3 q = inv_rot_.apply_linear(p - c_);
    const double d = ellipsoid_surface_distance(radii_, q);
    const double level = (q.x / radii_.x) * (q.x / radii_.x) + (q.y / radii_.y) * (q.y / radii_.y) +
                         (q.z / radii_.z) * (q.z / radii_.z);
    return level < 1.0 ? -d : d;
  }

  Aabb bounds() const override {
    Affine placed = rot_;
    placed.translation = c_;
    return transform_box(Aabb{-radii_, radii_}, placed);
  }

 private:
  Vec3 c_, radii_;
  Affine rot_, inv_rot_;
};

class CapsuleNode final : public SdfNode {
 public:
  CapsuleNode(Vec3 a, Vec3 b, double r) : a_(a), b_(b), r_(r) {}
  double sdf(const Vec3& p) const override {
    const Vec3 ab = b_ - a_;
    const double len2 = dot(ab, ab);
    const double t = len2 > 0 ? std::clamp(dot(p - a_, ab) / len2, 0.0, 1.0) : 0.0;
    return distance(p, a_ + ab * t) - r_;
  }
  Aabb bounds() const override {
    Aabb b;
    for (int i = 0; i < 3; ++i) {
      b.lo[i] = std::min(a_[i], b_[i]);
      b.hi[i] = std::max(a_[i], b_[i]);
    }
    return b.expanded(r_);
  }

 private:
  Vec3 a_, b_;
  double r_;
};

class UnionNode final : public SdfNode {
 public:
  explicit UnionNode(std::vector<ImplicitShape> parts) : parts_(std::move(parts)) {}
  double sdf(const Vec3& p) const override {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& s : parts_) d = std::min(d, s.sdf(p));
    return d;
  }
  Aabb bounds() const override {
    Aabb b = parts_.front().bounds();
    for (const auto& s : parts_) {
      const Aabb o = s.bounds();
      for (int a = 0; a < 3; ++a) {
        b.lo[a] = std::min(b.lo[a], o.lo[a]);
        b.hi[a] = std::max(b.hi[a], o.hi[a]);
      }
    }
    return b;
  }

 private:
  std::vector<ImplicitShape> parts_;
};

class SmoothUnionNode final : public SdfNode {
 public:
  SmoothUnionNode(ImplicitShape a, ImplicitShape b, double k) : a_(std::move(a)), b_(std::move(b)), k_(k) {}
  double sdf(const Vec3& p) const override {
    const double d1 = a_.sdf(p), d2 = b_.sdf(p);
    const double h = std::clamp(0.5 + 0.5 * (d2 - d1) / k_, 0.0, 1.0);
    return d2 * (1 - h) + d1 * h - k_ * h * (1 - h);
  }
  Aabb bounds() const override {
    const Aabb x = a_.bounds(), y = b_.bounds();
    Aabb b;
    for (int i = 0; i < 3; ++i) {
      b.lo[i] = std::min(x.lo[i], y.lo[i]);
      b.hi[i] = std::max(x.hi[i], y.hi[i]);
    }
    return b.expanded(0.25 * k_);
  }

 private:
  ImplicitShape a_, b_;
  double k_;
};

class PerturbedNode final : public SdfNode {
 public:
  PerturbedNode(ImplicitShape base, Vec3 c, double amp, double freq, Vec3 phase)
      : base_(std::move(base)), c_(c), amp_(amp), freq_(freq), phase_(phase) {}
  double sdf(const Vec3& p) const override {
    const Vec3 u = normalized(p - c_);
    const double bump = std::sin(freq_ * u.x + phase_.x) * std::sin(freq_ * u.y + phase_.y) *
                        std::sin(freq_ * u.z + phase_.z);
    return base_.sdf(p) - amp_ * bump;
  }
  Aabb bounds() const override { return base_.bounds().expanded(std::abs(amp_)); }

 private:
  ImplicitShape base_;
  Vec3 c_;
  double amp_, freq_;
  Vec3 phase_;
};

class WarpedNode final : public SdfNode {
 public:
  WarpedNode(ImplicitShape base, Affine t) : base_(std::move(base)), t_(t), inv_(t.inverse()) {}
  double sdf(const Vec3& p) const override { return base_.sdf(inv_.apply(p)); }
  Aabb bounds() const override { return transform_box(base_.bounds(), t_); }

 private:
  ImplicitShape base_;
  Affine t_, inv_;
};

}  // namespace

double ellipsoid_surface_distance(const Vec3& radii, const Vec3& p) {
  std::array<std::pair<double, double>, 3> axes{
      {{radii.x, std::abs(p.x)}, {radii.y, std::abs(p.y)}, {radii.z, std::abs(p.z)}}};
  std::sort(axes.begin(), axes.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  return ellipsoid_distance_sorted(axes[0].first, axes[1].first, axes[2].first, axes[0].second,
                                   axes[1].second, axes[2].second);
}

ImplicitShape sphere(const Vec3& center, double radius) {
  require(radius > 0, ErrorKind::InvalidArgument, "sphere radius must be positive");
  return ImplicitShape(std::make_shared<SphereNode>(center, radius));
}

ImplicitShape ellipsoid(const Vec3& center, const Vec3& radii, const Affine& rotation) {
  require(radii.x > 0 && radii.y > 0 && radii.z > 0, ErrorKind::InvalidArgument,
          "ellipsoid radii must be positive");
  return ImplicitShape(std::make_shared<EllipsoidNode>(center, radii, rotation));
}

ImplicitShape capsule(const Vec3& a, const Vec3& b, double radius) {
  require(radius > 0, ErrorKind::InvalidArgument, "capsule radius must be positive");
  return ImplicitShape(std::make_shared<CapsuleNode>(a, b, radius));
}

ImplicitShape union_of(std::vector<ImplicitShape> parts) {
  require(!parts.empty(), ErrorKind::InvalidArgument, "union of zero shapes");
  return ImplicitShape(std::make_shared<UnionNode>(std::move(parts)));
}

ImplicitShape smooth_union(const ImplicitShape& a, const ImplicitShape& b, double k) {
  require(k > 0, ErrorKind::InvalidArgument, "smooth_union blend radius must be positive");
  return ImplicitShape(std::make_shared<SmoothUnionNode>(a, b, k));
}

ImplicitShape perturbed(const ImplicitShape& base, const Vec3& center, double amplitude,
                        double frequency, const Vec3& phase) {
  return ImplicitShape(std::make_shared<PerturbedNode>(base, center, amplitude, frequency, phase));
}

ImplicitShape warped(const ImplicitShape& base, const Affine& transform) {
  return ImplicitShape(std::make_shared<WarpedNode>(base, transform));
}

}  // namespace organocc::shapes
