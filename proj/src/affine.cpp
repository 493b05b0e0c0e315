#include "organocc/affine.hpp"

#include <algorithm>
#include <cmath>

#include "organocc/error.hpp"

namespace organocc {

Affine Affine::translate(const Vec3& t) {
  Affine a;
  a.translation = t;
  return a;
}

Affine Affine::scale(const Vec3& s) {
  Affine a;
  for (int i = 0; i < 3; ++i) a.linear[i][i] = s[i];
  return a;
}

Affine Affine::rotate_xyz(const Vec3& angles) {
  const double cx = std::cos(angles.x), sx = std::sin(angles.x);
  const double cy = std::cos(angles.y), sy = std::sin(angles.y);
  const double cz = std::cos(angles.z), sz = std::sin(angles.z);
  Affine rx, ry, rz;
  rx.linear = {{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  ry.linear = {{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  rz.linear = {{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  return rz * ry * rx;
}

Vec3 Affine::apply_linear(const Vec3& v) const {
  Vec3 r;
  for (int i = 0; i < 3; ++i) r[i] = linear[i][0] * v.x + linear[i][1] * v.y + linear[i][2] * v.z;
  return r;
}

Vec3 Affine::apply(const Vec3& p) const { return apply_linear(p) + translation; }

double Affine::determinant() const {
  const auto& m = linear;
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Affine Affine::inverse() const {
  const double det = determinant();
  double scale = 0;
  for (const auto& row : linear) {
    for (double v : row) scale = std::max(scale, std::abs(v));
  }
  require(std::abs(det) > 1e-12 * scale * scale * scale && std::isfinite(det),
          ErrorKind::InvalidArgument, "affine transform is singular");
  const auto& m = linear;
  Affine inv;
  inv.linear[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv.linear[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv.linear[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv.linear[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv.linear[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv.linear[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv.linear[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv.linear[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv.linear[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  inv.translation = -inv.apply_linear(translation);
  return inv;
}

Affine Affine::operator*(const Affine& o) const {
  Affine r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      r.linear[i][j] = linear[i][0] * o.linear[0][j] + linear[i][1] * o.linear[1][j] +
                       linear[i][2] * o.linear[2][j];
    }
  }
  r.translation = apply(o.translation);
  return r;
}

std::array<std::array<double, 4>, 4> Affine::matrix() const {
  std::array<std::array<double, 4>, 4> m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = linear[i][j];
    m[i][3] = translation[i];
  }
  m[3] = {0, 0, 0, 1};
  return m;
}

}  // namespace organocc
