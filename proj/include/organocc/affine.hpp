#pragma once

#include <array>

#include "organocc/vec3.hpp"

namespace organocc {

// Homogeneous 4x4 transform with implicit last row (0,0,0,1):
// p -> linear * p + translation.
struct Affine {
  std::array<std::array<double, 3>, 3> linear{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 translation{0, 0, 0};

  static Affine identity() { return {}; }
  static Affine translate(const Vec3& t);
  static Affine scale(const Vec3& s);
  // Rotation about x, then y, then z (R = Rz * Ry * Rx), angles in radians.
  static Affine rotate_xyz(const Vec3& angles);

  Vec3 apply(const Vec3& p) const;
  Vec3 apply_linear(const Vec3& v) const;

  double determinant() const;
  // Throws InvalidArgument when singular.
  Affine inverse() const;

  // (*this) * o : apply o first, then *this.
  Affine operator*(const Affine& o) const;

  std::array<std::array<double, 4>, 4> matrix() const;
};

}  // namespace organocc
