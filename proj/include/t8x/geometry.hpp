// Physical geometry of elements: trees map affinely onto their coarse cells,
// elements inherit the map through their lattice coordinates.
#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "t8x/cmesh.hpp"
#include "t8x/core.hpp"
#include "t8x/scheme.hpp"

namespace t8x::geometry {

using Vec3 = cmesh::Vec3;

inline Vec3 sub(Vec3 a, Vec3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 add(Vec3 a, Vec3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 scale(Vec3 a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(Vec3 a, Vec3 b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }

/// Map a reference point (lattice coordinates / 2^max_level) into physical
/// space through the tree's affine map.
inline Vec3 map_point(ElementClass cls, std::span<const Vec3> v, double x, double y, double z) {
  switch (cls) {
  case ElementClass::Line:
    return add(v[0], scale(sub(v[1], v[0]), x));
  case ElementClass::Quad:
    return add(v[0], add(scale(sub(v[1], v[0]), x), scale(sub(v[2], v[0]), y)));
  case ElementClass::Hex:
    return add(v[0], add(scale(sub(v[1], v[0]), x),
                         add(scale(sub(v[2], v[0]), y), scale(sub(v[4], v[0]), z))));
  case ElementClass::Triangle:
    // Reference corners (0,0), (1,0), (1,1) map to v0, v1, v2.
    return add(v[0], add(scale(sub(v[1], v[0]), x), scale(sub(v[2], v[1]), y)));
  case ElementClass::Tetrahedron:
    // Reference corners c0, c1, c5, c7 map to v0..v3.
    return add(v[0], add(scale(sub(v[1], v[0]), x),
                         add(scale(sub(v[3], v[2]), y), scale(sub(v[2], v[1]), z))));
  }
  detail::fail_arg("map_point: bad class");
}

/// Physical corner coordinates of an element inside its tree.
inline std::vector<Vec3> element_corners(ElementClass tree_cls, std::span<const Vec3> tree_verts,
                                         const ElementKey& key) {
  const double s = 1.0 / double(root_len);
  std::vector<Vec3> out;
  for (const Corner& c : coordinates(key))
    out.push_back(map_point(tree_cls, tree_verts, c[0] * s, c[1] * s, c[2] * s));
  return out;
}

inline Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 m{0, 0, 0};
  for (const auto& p : pts) m = add(m, p);
  return scale(m, 1.0 / double(pts.size()));
}

/// Element volume (area in 2D, length in 1D) from its physical corners.
inline double element_volume(ElementClass cls, std::span<const Vec3> corners) {
  switch (cls) {
  case ElementClass::Line:
    return norm(sub(corners[1], corners[0]));
  case ElementClass::Quad:
    return norm(cross(sub(corners[1], corners[0]), sub(corners[2], corners[0])));
  case ElementClass::Triangle:
    return 0.5 * norm(cross(sub(corners[1], corners[0]), sub(corners[2], corners[0])));
  case ElementClass::Hex: {
    const Vec3 a = sub(corners[1], corners[0]), b = sub(corners[2], corners[0]),
               c = sub(corners[4], corners[0]);
    return std::fabs(dot(a, cross(b, c)));
  }
  case ElementClass::Tetrahedron: {
    const Vec3 a = sub(corners[1], corners[0]), b = sub(corners[2], corners[0]),
               c = sub(corners[3], corners[0]);
    return std::fabs(dot(a, cross(b, c))) / 6.0;
  }
  }
  detail::fail_arg("element_volume: bad class");
}

/// Corner indices of element face f (canonical corner order).
inline std::vector<int> face_corner_indices(ElementClass cls, int f) {
  std::vector<int> out;
  const int d = dimension(cls);
  if (is_simplex(cls)) {
    for (int i = 0; i <= d; ++i)
      if (i != f) out.push_back(i);
  } else if (cls == ElementClass::Line) {
    out.push_back(f);
  } else {
    const int axis = f / 2;
    for (int i = 0; i < (1 << d); ++i)
      if (((i >> axis) & 1) == (f % 2)) out.push_back(i);
  }
  return out;
}

struct FaceGeometry {
  double area = 0;   ///< length in 2D
  Vec3 midpoint{};   ///< centroid of the face corner set
  Vec3 normal{};     ///< unit outward normal
};

inline FaceGeometry face_geometry(ElementClass cls, std::span<const Vec3> corners, int f) {
  FaceGeometry out;
  std::vector<Vec3> fc;
  for (int i : face_corner_indices(cls, f)) fc.push_back(corners[size_t(i)]);
  out.midpoint = centroid(fc);
  const int d = dimension(cls);
  if (d == 2) {
    const Vec3 u = sub(fc[1], fc[0]);
    out.area = norm(u);
    out.normal = {u[1] / out.area, -u[0] / out.area, 0};
  } else {
    const Vec3 u = sub(fc[1], fc[0]), v = sub(fc[2], fc[0]);
    Vec3 n = cross(u, v);
    const double nn = norm(n);
    out.area = (fc.size() == 3) ? 0.5 * nn : nn;  // triangle vs parallelogram
    out.normal = scale(n, 1.0 / nn);
  }
  if (dot(out.normal, sub(out.midpoint, centroid(corners))) < 0)
    out.normal = scale(out.normal, -1.0);
  return out;
}

}  // namespace t8x::geometry
