// Element-local operations for the five element classes: lines, quadrilaterals
// and hexahedra with the cubical Morton index, triangles and tetrahedra with
// the tetrahedral Morton (TM) index. Everything works on ElementKey values
// with pure integer arithmetic; the tables live in tables.hpp.
#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "t8x/core.hpp"
#include "t8x/tables.hpp"

namespace t8x {

enum class ChildOrder { Bey, TM };

using Corner = std::array<int32_t, 3>;

namespace detail {

// Table dispatch across classes. Cubical classes behave as one-type schemes:
// the local index equals the cube-id and all parent types are zero.

inline int iloc_from_cid_type(ElementClass c, int b, int cid) {
  switch (c) {
  case ElementClass::Triangle: return tables::tri_iloc[b][cid];
  case ElementClass::Tetrahedron: return tables::tet_iloc[b][cid];
  default: return cid;
  }
}

inline int parent_type_of(ElementClass c, int cid, int b) {
  switch (c) {
  case ElementClass::Triangle: return tables::tri_parent_type[cid][b];
  case ElementClass::Tetrahedron: return tables::tet_parent_type[cid][b];
  default: return 0;
  }
}

inline int cid_from_iloc(ElementClass c, int pb, int iloc) {
  switch (c) {
  case ElementClass::Triangle: return tables::tri_cid_from_iloc[pb][iloc];
  case ElementClass::Tetrahedron: return tables::tet_cid_from_iloc[pb][iloc];
  default: return iloc;
  }
}

inline int type_from_iloc(ElementClass c, int pb, int iloc) {
  switch (c) {
  case ElementClass::Triangle: return tables::tri_type_from_iloc[pb][iloc];
  case ElementClass::Tetrahedron: return tables::tet_type_from_iloc[pb][iloc];
  default: return 0;
  }
}

inline int child_type(ElementClass c, int b, int bey_index) {
  switch (c) {
  case ElementClass::Triangle: return tables::tri_child_type[b][bey_index];
  case ElementClass::Tetrahedron: return tables::tet_child_type[b][bey_index];
  default: return 0;
  }
}

inline int sigma(ElementClass c, int b, int bey_index) {
  switch (c) {
  case ElementClass::Triangle: return tables::tri_sigma[b][bey_index];
  case ElementClass::Tetrahedron: return tables::tet_sigma[b][bey_index];
  default: return bey_index;
  }
}

inline int sigma_inv(ElementClass c, int b, int tm_index) {
  switch (c) {
  case ElementClass::Triangle: return tables::tri_sigma_inv[b][tm_index];
  case ElementClass::Tetrahedron: return tables::tet_sigma_inv[b][tm_index];
  default: return tm_index;
  }
}

}  // namespace detail

/// Cube-id of the ancestor of `key` at `at_level`: the interleaved bits
/// (z_i y_i x_i) of the anchor node at that level.
inline int cube_id(const ElementKey& key, int at_level) {
  if (at_level < 1 || at_level > key.level)
    detail::fail_arg("cube_id: level out of range");
  const int32_t h = root_len >> at_level;
  int id = 0;
  id |= (key.x & h) ? 1 : 0;
  if (key.dim() > 1) id |= (key.y & h) ? 2 : 0;
  if (key.dim() > 2) id |= (key.z & h) ? 4 : 0;
  return id;
}

/// Vertex lattice coordinates in the canonical corner order; vertex 0 is the
/// anchor node. Simplices get d+1 corners, cubical classes 2^d.
inline std::vector<Corner> coordinates(const ElementKey& key) {
  const int d = key.dim();
  const int32_t h = key.len();
  std::vector<Corner> out;
  if (!is_simplex(key.cls)) {
    out.resize(size_t(1) << d);
    for (int i = 0; i < (1 << d); ++i)
      out[i] = {key.x + ((i & 1) ? h : 0), d > 1 ? key.y + ((i & 2) ? h : 0) : 0,
                d > 2 ? key.z + ((i & 4) ? h : 0) : 0};
    return out;
  }
  out.resize(size_t(d) + 1);
  out[0] = {key.x, key.y, d > 2 ? key.z : 0};
  if (d == 2) {
    const int i = key.btype;  // 0 -> +x first, 1 -> +y first
    out[1] = out[0];
    out[1][i] += h;
    out[2] = {key.x + h, key.y + h, 0};
  } else {
    const int i = key.btype / 2;
    const int j = (key.btype % 2 == 0) ? (i + 2) % 3 : (i + 1) % 3;
    out[1] = out[0];
    out[1][i] += h;
    out[2] = out[1];
    out[2][j] += h;
    out[3] = {key.x + h, key.y + h, key.z + h};
  }
  return out;
}

/// The parent element. Root has no parent.
inline ElementKey parent(const ElementKey& key) {
  if (key.level < 1) detail::fail_arg("parent: root has no parent");
  const int32_t h = key.len();
  ElementKey p = key;
  p.level = int8_t(key.level - 1);
  p.x = key.x & ~h;
  if (key.dim() > 1) p.y = key.y & ~h;
  if (key.dim() > 2) p.z = key.z & ~h;
  p.btype = int8_t(detail::parent_type_of(key.cls, cube_id(key, key.level), key.btype));
  return p;
}

/// The i-th child, in Bey's order or in TM (SFC) order.
inline ElementKey child(const ElementKey& key, int i, ChildOrder order = ChildOrder::TM) {
  const int d = key.dim();
  if (key.level >= max_level) detail::fail_range("child: maximum level reached");
  if (i < 0 || i >= (1 << d)) detail::fail_arg("child: index out of range");
  int bey = i;
  if (order == ChildOrder::TM) bey = detail::sigma_inv(key.cls, key.btype, i);
  ElementKey c = key;
  c.level = int8_t(key.level + 1);
  const int32_t h2 = root_len >> c.level;
  if (!is_simplex(key.cls)) {
    c.x = key.x + ((bey & 1) ? h2 : 0);
    if (d > 1) c.y = key.y + ((bey & 2) ? h2 : 0);
    if (d > 2) c.z = key.z + ((bey & 4) ? h2 : 0);
    return c;
  }
  // Anchor of Bey child T_i is the midpoint of the parent's corners x_0, x_j.
  int j;
  if (bey == 0) j = 0;
  else if (bey == 1 || bey == 4 || bey == 5) j = 1;
  else if (bey == 2 || bey == 6 || bey == 7) j = 2;
  else j = (d == 2) ? 1 : 3;
  const auto corners = coordinates(key);
  c.x = int32_t((int64_t(corners[0][0]) + corners[j][0]) / 2);
  c.y = int32_t((int64_t(corners[0][1]) + corners[j][1]) / 2);
  c.z = int32_t((int64_t(corners[0][2]) + corners[j][2]) / 2);
  c.btype = int8_t(detail::child_type(key.cls, key.btype, bey));
  return c;
}

/// All 2^d children in TM order.
inline std::vector<ElementKey> children(const ElementKey& key) {
  std::vector<ElementKey> out(size_t(child_count(key.cls)));
  for (int i = 0; i < child_count(key.cls); ++i) out[size_t(i)] = child(key, i, ChildOrder::TM);
  return out;
}

/// TM local index of the element within its parent.
inline int child_id(const ElementKey& key) {
  if (key.level < 1) detail::fail_arg("child_id: root has no parent");
  return detail::iloc_from_cid_type(key.cls, key.btype, cube_id(key, key.level));
}

/// Same-level neighbor across face f in the ambient lattice, together with
/// the dual face index. The neighbor may lie outside the root element;
/// containment() is the caller's guard.
inline std::pair<ElementKey, int> face_neighbor_inside(const ElementKey& key, int f) {
  if (f < 0 || f >= face_count(key.cls)) detail::fail_arg("face_neighbor_inside: bad face");
  const int32_t h = key.len();
  ElementKey n = key;
  switch (key.cls) {
  case ElementClass::Line:
    n.x += (f == 0) ? -h : h;
    return {n, 1 - f};
  case ElementClass::Quad:
  case ElementClass::Hex: {
    const int axis = f / 2;
    n.set_coord(axis, key.coord(axis) + ((f % 2 == 0) ? -h : h));
    return {n, f ^ 1};
  }
  case ElementClass::Triangle: {
    n.btype = int8_t(1 - key.btype);
    if (f == 0) n.set_coord(key.btype == 0 ? 0 : 1, key.coord(key.btype == 0 ? 0 : 1) + h);
    else if (f == 2) n.set_coord(key.btype == 0 ? 1 : 0, key.coord(key.btype == 0 ? 1 : 0) - h);
    return {n, 2 - f};
  }
  case ElementClass::Tetrahedron: {
    int b = key.btype;
    int ftilde;
    if (f == 1 || f == 2) {
      ftilde = f;
      if ((b % 2 == 0 && f == 2) || (b % 2 != 0 && f == 1)) b += 1; else b -= 1;
    } else {
      ftilde = 3 - f;
      if (f == 0) {
        const int i = b / 2;
        n.set_coord(i, key.coord(i) + h);
        b += (b % 2 == 1) ? 2 : 4;
      } else {
        const int i = ((b + 3) % 6) / 2;
        n.set_coord(i, key.coord(i) - h);
        b += (b % 2 == 0) ? 2 : 4;
      }
    }
    n.btype = int8_t((b + 6) % 6);
    return {n, ftilde};
  }
  }
  detail::fail_arg("face_neighbor_inside: bad class");
}

/// True iff n is a descendant of t (each element is a descendant of itself).
inline bool containment(const ElementKey& n, const ElementKey& t) {
  if (n.cls != t.cls) detail::fail_arg("containment: mixed classes");
  if (n.level < t.level) detail::fail_arg("containment: n coarser than t");
  const int d = t.dim();
  const int32_t ht = t.len();
  if (!is_simplex(t.cls)) {
    for (int i = 0; i < d; ++i) {
      const int32_t dx = n.coord(i) - t.coord(i);
      if (dx < 0 || dx >= ht) return false;
    }
    return true;
  }
  if (d == 2) {
    static constexpr int xi[2] = {0, 1}, xj[2] = {1, 0};
    const int32_t di = n.coord(xi[t.btype]) - t.coord(xi[t.btype]);
    const int32_t dj = n.coord(xj[t.btype]) - t.coord(xj[t.btype]);
    if (di >= ht) return false;
    if (dj < 0) return false;
    if (dj - di > 0) return false;
    if (di == dj && n.btype != t.btype) return false;
    return true;
  }
  static constexpr int xi[6] = {0, 0, 1, 1, 2, 2};
  static constexpr int xj[6] = {1, 2, 2, 0, 0, 1};
  static constexpr int xk[6] = {2, 1, 0, 2, 1, 0};
  const int tb = t.btype;
  const int32_t di = n.coord(xi[tb]) - t.coord(xi[tb]);
  const int32_t dj = n.coord(xj[tb]) - t.coord(xj[tb]);
  const int32_t dk = n.coord(xk[tb]) - t.coord(xk[tb]);
  if (di >= ht) return false;
  if (dj < 0) return false;
  if (dk - di > 0) return false;
  if (dj - dk > 0) return false;
  const auto among = [&](int first) {
    const int nb = n.btype;
    for (int s = 1; s <= 3; ++s)
      if (nb == ((tb + first * s) % 6 + 6) % 6) return true;
    return false;
  };
  if (dj == dk && among(tb % 2 == 0 ? +1 : -1)) return false;
  if (dk == di && among(tb % 2 == 0 ? -1 : +1)) return false;
  if (dj == dk && di == dk && n.btype != t.btype) return false;
  return true;
}

inline bool inside_root(const ElementKey& key) { return containment(key, root_key(key.cls)); }

namespace detail {
// Unchecked consecutive index of `key` within its own level.
inline uint64_t linear_id_unchecked(const ElementKey& key) {
  const int d = key.dim();
  uint64_t id = 0;
  int b = key.btype;
  for (int i = key.level; i >= 1; --i) {
    const int c = cube_id(key, i);
    id += uint64_t(iloc_from_cid_type(key.cls, b, c)) << (uint64_t(d) * (key.level - i));
    b = parent_type_of(key.cls, c, b);
  }
  return id;
}
}  // namespace detail

/// Consecutive SFC index of the element at its own level; the root maps to 0.
inline LinearId consecutive_index(const ElementKey& key) {
  if (!inside_root(key)) detail::fail_domain("consecutive_index: key outside root");
  return LinearId{detail::linear_id_unchecked(key), key.level};
}

/// Consecutive index of the first descendant at `at_level` >= key.level.
inline uint64_t linear_id_at(const ElementKey& key, int at_level) {
  if (at_level < key.level || at_level > max_level)
    detail::fail_range("linear_id_at: bad level");
  return detail::linear_id_unchecked(key) << (uint64_t(key.dim()) * (at_level - key.level));
}

/// The element whose consecutive index at `id.level` equals `id.value`.
inline ElementKey element_from_index(LinearId id, ElementClass cls) {
  const int d = dimension(cls);
  if (id.level < 0 || id.level > max_level) detail::fail_range("element_from_index: bad level");
  if (id.value >> (uint64_t(d) * id.level)) detail::fail_arg("element_from_index: value out of range");
  ElementKey key = root_key(cls);
  key.level = int8_t(id.level);
  int b = 0;
  for (int i = 1; i <= id.level; ++i) {
    const int iloc = int((id.value >> (uint64_t(d) * (id.level - i))) & ((1u << d) - 1));
    const int c = detail::cid_from_iloc(cls, b, iloc);
    b = detail::type_from_iloc(cls, b, iloc);
    const int32_t h = root_len >> i;
    if (c & 1) key.x += h;
    if (c & 2) key.y += h;
    if (c & 4) key.z += h;
  }
  key.btype = int8_t(b);
  return key;
}

namespace detail {
inline void set_level_bits(ElementKey& key, int lev, int cid) {
  const int32_t h = root_len >> lev;
  key.x = (key.x & ~h) | ((cid & 1) ? h : 0);
  if (key.dim() > 1) key.y = (key.y & ~h) | ((cid & 2) ? h : 0);
  if (key.dim() > 2) key.z = (key.z & ~h) | ((cid & 4) ? h : 0);
}

// Shared successor/predecessor walk. Wraps of the local index recurse one
// level up, which happens on average once every 2^d calls.
inline ElementKey step_recursion(const ElementKey& key, int lev, int type_at_lev, int dir) {
  const int n = child_count(key.cls);
  const int c = cube_id(key, lev);
  const int iloc = iloc_from_cid_type(key.cls, type_at_lev, c);
  const int iloc2 = (iloc + dir + n) % n;
  ElementKey out;
  int ptype;
  if ((dir > 0 && iloc2 == 0) || (dir < 0 && iloc2 == n - 1)) {
    if (lev == 1) detail::fail_range("successor/predecessor: out of range");
    out = step_recursion(key, lev - 1, parent_type_of(key.cls, c, type_at_lev), dir);
    ptype = out.btype;  // type of the updated ancestor at lev-1
  } else {
    out = key;
    ptype = parent_type_of(key.cls, c, type_at_lev);
  }
  set_level_bits(out, lev, cid_from_iloc(key.cls, ptype, iloc2));
  out.btype = int8_t(type_from_iloc(key.cls, ptype, iloc2));
  return out;
}
}  // namespace detail

/// The next element of the same level along the SFC. Amortized constant time.
inline ElementKey successor(const ElementKey& key) {
  if (key.level == 0) detail::fail_range("successor: root has no successor");
  return detail::step_recursion(key, key.level, key.btype, +1);
}

/// The previous element of the same level along the SFC.
inline ElementKey predecessor(const ElementKey& key) {
  if (key.level == 0) detail::fail_range("predecessor: root has no predecessor");
  return detail::step_recursion(key, key.level, key.btype, -1);
}

/// First descendant at `level`: same anchor and type, deeper level.
inline ElementKey first_descendant(const ElementKey& key, int level) {
  if (level < key.level || level > max_level) detail::fail_range("first_descendant: bad level");
  ElementKey d = key;
  d.level = int8_t(level);
  return d;
}

/// Last descendant at `level`: anchor shifted to the far corner, same type.
inline ElementKey last_descendant(const ElementKey& key, int level) {
  if (level < key.level || level > max_level) detail::fail_range("last_descendant: bad level");
  const int32_t shift = key.len() - (root_len >> level);
  ElementKey d = key;
  d.level = int8_t(level);
  d.x += shift;
  if (key.dim() > 1) d.y += shift;
  if (key.dim() > 2) d.z += shift;
  return d;
}

inline int num_face_children(ElementClass cls, int /*f*/ = 0) {
  return 1 << (dimension(cls) - 1);
}

/// TM child indices of the children touching face f, in increasing order.
inline std::span<const int> child_indices_at_face(ElementClass cls, int btype, int f) {
  switch (cls) {
  case ElementClass::Line: return {tables::line_children_at_face[f], 1};
  case ElementClass::Quad: return {tables::quad_children_at_face[f], 2};
  case ElementClass::Hex: return {tables::hex_children_at_face[f], 4};
  case ElementClass::Triangle: return {tables::tri_children_at_face[btype][f], 2};
  case ElementClass::Tetrahedron: return {tables::tet_children_at_face[btype][f], 4};
  }
  detail::fail_arg("child_indices_at_face: bad class");
}

/// The children of `key` that touch face f, in increasing TM order.
inline std::vector<ElementKey> children_at_face(const ElementKey& key, int f) {
  if (f < 0 || f >= face_count(key.cls)) detail::fail_arg("children_at_face: bad face");
  std::vector<ElementKey> out;
  for (int i : child_indices_at_face(key.cls, key.btype, f)) out.push_back(child(key, i, ChildOrder::TM));
  return out;
}

/// Face index of child `tm_child_index` matching the parent face f.
/// Identity except for the middle child of a tetrahedron face.
inline int child_face(const ElementKey& key, int tm_child_index, int f) {
  const auto idx = child_indices_at_face(key.cls, key.btype, f);
  if (std::find(idx.begin(), idx.end(), tm_child_index) == idx.end())
    detail::fail_arg("child_face: child not at face");
  if (key.cls != ElementClass::Tetrahedron) return f;
  const int bey = detail::sigma_inv(key.cls, key.btype, tm_child_index);
  if (detail::child_type(key.cls, key.btype, bey) == key.btype) return f;
  return tables::tet_middle_child_face[f];
}

/// First/last descendant at `level` constrained to touch face f.
inline ElementKey first_face_descendant(const ElementKey& key, int f, int level) {
  if (level < key.level || level > max_level) detail::fail_range("first_face_descendant: bad level");
  ElementKey cur = key;
  int curf = f;
  while (cur.level < level) {
    const int ci = child_indices_at_face(cur.cls, cur.btype, curf)[0];
    const int nf = child_face(cur, ci, curf);
    cur = child(cur, ci, ChildOrder::TM);
    curf = nf;
  }
  return cur;
}

inline ElementKey last_face_descendant(const ElementKey& key, int f, int level) {
  if (level < key.level || level > max_level) detail::fail_range("last_face_descendant: bad level");
  ElementKey cur = key;
  int curf = f;
  while (cur.level < level) {
    const auto idx = child_indices_at_face(cur.cls, cur.btype, curf);
    const int ci = idx[idx.size() - 1];
    const int nf = child_face(cur, ci, curf);
    cur = child(cur, ci, ChildOrder::TM);
    curf = nf;
  }
  return cur;
}

/// Extremal descendant at `level`, optionally constrained to touch a face.
inline ElementKey descendant(const ElementKey& key, int level, bool first,
                             std::optional<int> face = std::nullopt) {
  if (face) return first ? first_face_descendant(key, *face, level) : last_face_descendant(key, *face, level);
  return first ? first_descendant(key, level) : last_descendant(key, level);
}

/// Root face index of the tree face that element face f is a subface of.
/// Only defined when the face actually lies on the root boundary.
inline int tree_face(const ElementKey& key, int f) {
  if (f < 0 || f >= face_count(key.cls)) detail::fail_arg("tree_face: bad face");
  switch (key.cls) {
  case ElementClass::Line:
  case ElementClass::Quad:
  case ElementClass::Hex: return f;
  case ElementClass::Triangle:
    if (key.btype != 0) detail::fail_arg("tree_face: type 1 triangle has no boundary face");
    return f;
  case ElementClass::Tetrahedron: {
    const int g = tables::tet_tree_face[key.btype][f];
    if (g < 0) detail::fail_arg("tree_face: face not on root boundary");
    return g;
  }
  }
  detail::fail_arg("tree_face: bad class");
}

/// The element face of a (potential) boundary element at root face g.
inline int face_from_tree_face(ElementClass cls, int btype, int g) {
  switch (cls) {
  case ElementClass::Line:
  case ElementClass::Quad:
  case ElementClass::Hex: return g;
  case ElementClass::Triangle: return g;
  case ElementClass::Tetrahedron: {
    const int f = tables::tet_face_from_tree_face[btype][g];
    if (f < 0) detail::fail_arg("face_from_tree_face: type cannot touch this root face");
    return f;
  }
  }
  detail::fail_arg("face_from_tree_face: bad class");
}

/// The (d-1)-dimensional face element of `key` at boundary face f, expressed
/// in the coordinate system of the root face as its own root tree.
inline ElementKey boundary_face(const ElementKey& key, int f) {
  ElementKey F;
  F.level = key.level;
  switch (key.cls) {
  case ElementClass::Quad:
    F.cls = ElementClass::Line;
    F.x = (f < 2) ? key.y : key.x;
    return F;
  case ElementClass::Hex:
    F.cls = ElementClass::Quad;
    if (f < 2) { F.x = key.y; F.y = key.z; }
    else if (f < 4) { F.x = key.x; F.y = key.z; }
    else { F.x = key.x; F.y = key.y; }
    return F;
  case ElementClass::Triangle:
    if (key.btype != 0) detail::fail_arg("boundary_face: type 1 triangle");
    F.cls = ElementClass::Line;
    F.x = (f == 0) ? key.y : key.x;
    return F;
  case ElementClass::Tetrahedron: {
    const int g = tables::tet_tree_face[key.btype][f];
    if (g < 0) detail::fail_arg("boundary_face: face not on root boundary");
    F.cls = ElementClass::Triangle;
    F.btype = int8_t(tables::tet_boundary_tri_type[key.btype][f]);
    if (g < 2) { F.x = key.z; F.y = key.y; }   // category 1: x = 2^L and x = z planes
    else { F.x = key.x; F.y = key.z; }         // category 2: y = z and y = 0 planes
    return F;
  }
  default: detail::fail_arg("boundary_face: class has no face elements");
  }
}

/// Transform a face element into the neighbor tree's face coordinates.
/// `orientation` and `sign` describe the tree-to-tree connection; `smaller`
/// states whether the source tree face is the connection's first face.
inline ElementKey transform_face(const ElementKey& F, int orientation, int sign, bool smaller = true) {
  const int32_t h = F.len();
  ElementKey G = F;
  switch (F.cls) {
  case ElementClass::Line:
    if (orientation < 0 || orientation > 1) detail::fail_arg("transform_face: bad orientation");
    if (orientation == 1) G.x = root_len - F.x - h;
    return G;
  case ElementClass::Quad: {
    if (orientation < 0 || orientation > 3) detail::fail_arg("transform_face: bad orientation");
    int o = orientation;
    if (!smaller && sign > 0) o = (o == 1) ? 2 : (o == 2) ? 1 : o;
    int32_t x = F.x, y = F.y;
    if (sign < 0) std::swap(x, y);
    switch (o) {
    case 0: G.x = x; G.y = y; break;
    case 1: G.x = root_len - y - h; G.y = x; break;
    case 2: G.x = y; G.y = root_len - x - h; break;
    default: G.x = root_len - x - h; G.y = root_len - y - h; break;
    }
    return G;
  }
  case ElementClass::Triangle: {
    if (orientation < 0 || orientation > 2) detail::fail_arg("transform_face: bad orientation");
    int o = orientation;
    if (!smaller && sign > 0 && o != 0) o = 3 - o;
    int32_t x = F.x, y = F.y;
    if (sign < 0) y = (F.btype == 0) ? x - y : x - y - h;
    switch (o) {
    case 0: G.x = x; G.y = y; break;
    case 1:
      G.x = root_len - y - h;
      G.y = (F.btype == 0) ? x - y : x - y - h;
      break;
    default:
      G.x = (F.btype == 0) ? root_len - x + y - h : root_len - x + y;
      G.y = root_len - x - h;
      break;
    }
    return G;
  }
  default: detail::fail_arg("transform_face: not a face class");
  }
}

/// Build the d-dimensional element of `target` class that has `F` as its
/// boundary face at root face g.
inline ElementKey extrude_face(const ElementKey& F, ElementClass target, int g) {
  if (g < 0 || g >= face_count(target)) detail::fail_arg("extrude_face: bad tree face");
  if (face_class(target) != F.cls) detail::fail_arg("extrude_face: class mismatch");
  const int32_t h = F.len();
  ElementKey E = root_key(target);
  E.level = F.level;
  switch (target) {
  case ElementClass::Quad:
    switch (g) {
    case 0: E.x = 0; E.y = F.x; break;
    case 1: E.x = root_len - h; E.y = F.x; break;
    case 2: E.x = F.x; E.y = 0; break;
    default: E.x = F.x; E.y = root_len - h; break;
    }
    return E;
  case ElementClass::Triangle:
    switch (g) {
    case 0: E.x = root_len - h; E.y = F.x; break;
    case 1: E.x = F.x; E.y = F.x; break;
    default: E.x = F.x; E.y = 0; break;
    }
    return E;
  case ElementClass::Hex:
    switch (g) {
    case 0: E.x = 0; E.y = F.x; E.z = F.y; break;
    case 1: E.x = root_len - h; E.y = F.x; E.z = F.y; break;
    case 2: E.x = F.x; E.y = 0; E.z = F.y; break;
    case 3: E.x = F.x; E.y = root_len - h; E.z = F.y; break;
    case 4: E.x = F.x; E.y = F.y; E.z = 0; break;
    default: E.x = F.x; E.y = F.y; E.z = root_len - h; break;
    }
    return E;
  case ElementClass::Tetrahedron:
    switch (g) {
    case 0: E.x = root_len - h; E.y = F.y; E.z = F.x; break;
    case 1: E.x = F.x; E.y = F.y; E.z = F.x; break;
    case 2: E.x = F.x; E.y = F.y; E.z = F.y; break;
    default: E.x = F.x; E.y = 0; E.z = F.y; break;
    }
    E.btype = int8_t(tables::tet_extrude_type[g][F.btype]);
    return E;
  default: detail::fail_arg("extrude_face: target class has no face elements");
  }
}

/// SFC comparison: orders by TM index, ancestors before descendants.
inline std::strong_ordering compare(const ElementKey& a, const ElementKey& b) {
  if (a.cls != b.cls) detail::fail_arg("compare: mixed classes");
  const int m = std::max(a.level, b.level);
  const uint64_t ia = linear_id_at(a, m), ib = linear_id_at(b, m);
  if (ia != ib) return ia <=> ib;
  return a.level <=> b.level;
}

namespace detail {
// Types of all ancestors: out[j] = type of the level-j ancestor.
inline void ancestor_types(const ElementKey& key, int* out) {
  int b = key.btype;
  out[key.level] = b;
  for (int i = key.level; i >= 1; --i) {
    b = parent_type_of(key.cls, cube_id(key, i), b);
    out[i - 1] = b;
  }
}
}  // namespace detail

/// The level-j ancestor of the element.
inline ElementKey ancestor(const ElementKey& key, int j) {
  if (j < 0 || j > key.level) detail::fail_arg("ancestor: bad level");
  ElementKey a = key;
  int types[max_level + 1];
  detail::ancestor_types(key, types);
  const int32_t mask = ~((root_len >> j) - 1);
  a.level = int8_t(j);
  a.btype = int8_t(types[j]);
  a.x &= mask;
  if (key.dim() > 1) a.y &= mask;
  if (key.dim() > 2) a.z &= mask;
  return a;
}

/// Nearest common ancestor of two elements of the same class.
inline ElementKey nca(const ElementKey& a, const ElementKey& b) {
  if (a.cls != b.cls) detail::fail_arg("nca: mixed classes");
  int ta[max_level + 1], tb[max_level + 1];
  detail::ancestor_types(a, ta);
  detail::ancestor_types(b, tb);
  const int d = a.dim();
  for (int j = std::min(a.level, b.level); j >= 0; --j) {
    const int32_t mask = ~((root_len >> j) - 1);
    bool same = ta[j] == tb[j];
    for (int i = 0; same && i < d; ++i) same = (a.coord(i) & mask) == (b.coord(i) & mask);
    if (same) {
      ElementKey n = a;
      n.level = int8_t(j);
      n.btype = int8_t(ta[j]);
      n.x &= mask;
      if (d > 1) n.y &= mask;
      if (d > 2) n.z &= mask;
      return n;
    }
  }
  detail::fail_arg("nca: elements share no ancestor");
}

/// True iff the keys are exactly the 2^d TM children of one parent.
inline bool is_family(std::span<const ElementKey> keys) {
  if (keys.empty()) return false;
  const ElementKey& first = keys[0];
  if ((int)keys.size() != child_count(first.cls)) return false;
  if (first.level < 1) return false;
  for (const auto& k : keys)
    if (k.cls != first.cls || k.level != first.level) return false;
  const ElementKey p = parent(first);
  for (int i = 0; i < (int)keys.size(); ++i)
    if (keys[size_t(i)] != child(p, i, ChildOrder::TM)) return false;
  return true;
}

// --- TM index utilities (materialized digit form; used mostly by tests) -----

/// The TM-index as an explicit digit sequence (cube-id, type) per level.
struct TmIndex {
  ElementClass cls = ElementClass::Tetrahedron;
  int level = 0;
  std::array<std::pair<uint8_t, uint8_t>, max_level + 1> digits{};  // index 1..level used

  friend bool operator==(const TmIndex&, const TmIndex&) = default;
};

inline TmIndex tm_index(const ElementKey& key) {
  TmIndex m;
  m.cls = key.cls;
  m.level = key.level;
  int types[max_level + 1];
  detail::ancestor_types(key, types);
  for (int i = 1; i <= key.level; ++i)
    m.digits[size_t(i)] = {uint8_t(cube_id(key, i)), uint8_t(types[i])};
  return m;
}

/// True iff a d-simplex (or cube) with this digit sequence exists, i.e. every
/// consecutive (type, cube-id, parent-type) triple is consistent with Pt.
inline bool is_valid_tm(const TmIndex& m) {
  int expected_parent = 0;
  for (int i = 1; i <= m.level; ++i) {
    const auto [c, b] = m.digits[size_t(i)];
    if (c >= child_count(m.cls) || b >= type_count(m.cls)) return false;
    if (detail::parent_type_of(m.cls, c, b) != expected_parent) return false;
    expected_parent = b;
  }
  for (int i = m.level + 1; i <= max_level; ++i)
    if (m.digits[size_t(i)] != std::pair<uint8_t, uint8_t>{0, 0}) return false;
  return true;
}

/// The embedding of a tetrahedron into the 6D cubical Morton refinement:
/// anchor coordinates (B^0, B^1, B^2, x, y, z) plus the level.
struct Embed6 {
  std::array<uint32_t, 6> anchor{};
  int level = 0;

  /// Morton digit (6 bits) of the level-i ancestor, ordered (z y x b2 b1 b0).
  int digit(int i) const {
    const uint32_t h = uint32_t(root_len) >> i;
    int v = 0;
    for (int j = 5; j >= 0; --j) v = (v << 1) | ((anchor[size_t(j)] & h) ? 1 : 0);
    return v;
  }
};

inline Embed6 tm_embed(const ElementKey& key) {
  if (key.cls != ElementClass::Tetrahedron) detail::fail_arg("tm_embed: tetrahedra only");
  Embed6 q;
  q.level = key.level;
  int types[max_level + 1];
  detail::ancestor_types(key, types);
  for (int i = 1; i <= key.level; ++i) {
    const uint32_t h = uint32_t(root_len) >> i;
    const int b = types[i];
    for (int j = 0; j < 3; ++j)
      if (b & (1 << j)) q.anchor[size_t(j)] |= h;
  }
  q.anchor[3] = uint32_t(key.x);
  q.anchor[4] = uint32_t(key.y);
  q.anchor[5] = uint32_t(key.z);
  return q;
}

}  // namespace t8x
