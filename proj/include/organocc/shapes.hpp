#pragma once

// Analytic SDF primitives used to build synthetic organs. Sphere, ellipsoid
// and capsule are exact distance fields; combinators (smooth union,
// perturbation, warps) keep the sign exact but not the magnitude.

#include <vector>

#include "organocc/affine.hpp"
#include "organocc/geometry.hpp"

namespace organocc::shapes {

ImplicitShape sphere(const Vec3& center, double radius);

// Axis-aligned in the frame given by `rotation` (a pure rotation).
ImplicitShape ellipsoid(const Vec3& center, const Vec3& radii, const Affine& rotation = Affine::identity());

ImplicitShape capsule(const Vec3& a, const Vec3& b, double radius);

ImplicitShape union_of(std::vector<ImplicitShape> parts);

// Polynomial smooth minimum with blend radius k.
ImplicitShape smooth_union(const ImplicitShape& a, const ImplicitShape& b, double k);

// base(p) - amplitude * sin(f*u.x + phase.x) * sin(f*u.y + phase.y) * sin(f*u.z + phase.z),
// u = unit direction from `center`. Differs from base by at most `amplitude`.
ImplicitShape perturbed(const ImplicitShape& base, const Vec3& center, double amplitude,
                        double frequency, const Vec3& phase = {0, 0, 0});

// Shape pushed forward by `transform`: sdf'(p) = sdf(transform^-1 p).
ImplicitShape warped(const ImplicitShape& base, const Affine& transform);

// Exact unsigned distance from p to the ellipsoid surface with semi-axes
// `radii` centered at the origin (closest-point root solve, robust bisection).
double ellipsoid_surface_distance(const Vec3& radii, const Vec3& p);

}  // namespace organocc::shapes
