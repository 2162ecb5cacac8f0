// Lookup tables for the simplex schemes (Bey refinement + TM ordering) and
// the cross-tree face machinery of all classes. Values are integer constants;
// the unit tests cross-validate the redundant ones against each other.
#pragma once

#include <array>
#include <cstdint>

#include "t8x/core.hpp"

namespace t8x::tables {

// --- Triangles -------------------------------------------------------------

/// Types of the Bey children T_0..T_3 of a type-b triangle.
inline constexpr int tri_child_type[2][4] = {{0, 0, 0, 1}, {1, 1, 1, 0}};

/// TM local index sigma_b(i) of Bey child T_i.
inline constexpr int tri_sigma[2][4] = {{0, 1, 3, 2}, {0, 2, 3, 1}};

/// Bey child index sigma_b^{-1}(i) of the TM child i.
inline constexpr int tri_sigma_inv[2][4] = {{0, 1, 3, 2}, {0, 3, 1, 2}};

/// Parent type from (cube-id, own type).
inline constexpr int tri_parent_type[4][2] = {{0, 1}, {0, 0}, {1, 1}, {0, 1}};

/// TM local index from (own type, cube-id).
inline constexpr int tri_iloc[2][4] = {{0, 1, 1, 3}, {0, 2, 2, 3}};

/// Cube-id from (parent type, TM local index).
inline constexpr int tri_cid_from_iloc[2][4] = {{0, 1, 1, 3}, {0, 2, 2, 3}};

/// Own type from (parent type, TM local index).
inline constexpr int tri_type_from_iloc[2][4] = {{0, 0, 1, 0}, {1, 0, 1, 1}};

// --- Tetrahedra ------------------------------------------------------------

inline constexpr int tet_child_type[6][8] = {
    {0, 0, 0, 0, 4, 5, 2, 1}, {1, 1, 1, 1, 3, 2, 5, 0}, {2, 2, 2, 2, 0, 1, 4, 3},
    {3, 3, 3, 3, 5, 4, 1, 2}, {4, 4, 4, 4, 2, 3, 0, 5}, {5, 5, 5, 5, 1, 0, 3, 4}};

inline constexpr int tet_sigma[6][8] = {
    {0, 1, 4, 7, 2, 3, 6, 5}, {0, 1, 5, 7, 3, 2, 6, 4}, {0, 3, 4, 7, 1, 2, 6, 5},
    {0, 1, 6, 7, 3, 2, 4, 5}, {0, 3, 5, 7, 1, 2, 4, 6}, {0, 3, 6, 7, 2, 1, 4, 5}};

inline constexpr int tet_sigma_inv[6][8] = {
    {0, 1, 4, 5, 2, 7, 6, 3}, {0, 1, 5, 4, 7, 2, 6, 3}, {0, 4, 5, 1, 2, 7, 6, 3},
    {0, 1, 5, 4, 6, 7, 2, 3}, {0, 4, 5, 1, 6, 2, 7, 3}, {0, 5, 4, 1, 6, 7, 2, 3}};

/// Parent type from (cube-id, own type).
inline constexpr int tet_parent_type[8][6] = {
    {0, 1, 2, 3, 4, 5}, {0, 1, 1, 1, 0, 0}, {2, 2, 2, 3, 3, 3}, {1, 1, 2, 2, 2, 1},
    {5, 5, 4, 4, 4, 5}, {0, 0, 0, 5, 5, 5}, {4, 3, 3, 3, 4, 4}, {0, 1, 2, 3, 4, 5}};

/// TM local index from (own type, cube-id).
inline constexpr int tet_iloc[6][8] = {
    {0, 1, 1, 4, 1, 4, 4, 7}, {0, 1, 2, 5, 2, 5, 4, 7}, {0, 2, 3, 4, 1, 6, 5, 7},
    {0, 3, 1, 5, 2, 4, 6, 7}, {0, 2, 2, 6, 3, 5, 5, 7}, {0, 3, 3, 6, 3, 6, 6, 7}};

/// Cube-id from (parent type, TM local index).
inline constexpr int tet_cid_from_iloc[6][8] = {
    {0, 1, 1, 1, 5, 5, 5, 7}, {0, 1, 1, 1, 3, 3, 3, 7}, {0, 2, 2, 2, 3, 3, 3, 7},
    {0, 2, 2, 2, 6, 6, 6, 7}, {0, 4, 4, 4, 6, 6, 6, 7}, {0, 4, 4, 4, 5, 5, 5, 7}};

/// Own type from (parent type, TM local index).
inline constexpr int tet_type_from_iloc[6][8] = {
    {0, 0, 4, 5, 0, 1, 2, 0}, {1, 1, 2, 3, 0, 1, 5, 1}, {2, 0, 1, 2, 2, 3, 4, 2},
    {3, 3, 4, 5, 1, 2, 3, 3}, {4, 2, 3, 4, 0, 4, 5, 4}, {5, 0, 1, 5, 3, 4, 5, 5}};

// --- Children at a face (TM local indices, increasing) ----------------------

inline constexpr int line_children_at_face[2][1] = {{0}, {1}};
inline constexpr int quad_children_at_face[4][2] = {{0, 2}, {1, 3}, {0, 1}, {2, 3}};
inline constexpr int hex_children_at_face[6][4] = {
    {0, 2, 4, 6}, {1, 3, 5, 7}, {0, 1, 4, 5}, {2, 3, 6, 7}, {0, 1, 2, 3}, {4, 5, 6, 7}};

inline constexpr int tri_children_at_face[2][3][2] = {
    {{1, 3}, {0, 3}, {0, 1}}, {{2, 3}, {0, 3}, {0, 2}}};

inline constexpr int tet_children_at_face[6][4][4] = {
    {{1, 4, 5, 7}, {0, 4, 6, 7}, {0, 1, 2, 7}, {0, 1, 3, 4}},
    {{1, 4, 5, 7}, {0, 5, 6, 7}, {0, 1, 3, 7}, {0, 1, 2, 5}},
    {{3, 4, 5, 7}, {0, 4, 6, 7}, {0, 1, 3, 7}, {0, 2, 3, 4}},
    {{1, 5, 6, 7}, {0, 4, 6, 7}, {0, 1, 3, 7}, {0, 1, 2, 6}},
    {{3, 5, 6, 7}, {0, 4, 5, 7}, {0, 1, 3, 7}, {0, 2, 3, 5}},
    {{3, 5, 6, 7}, {0, 4, 6, 7}, {0, 2, 3, 7}, {0, 1, 3, 6}}};

/// Face of the middle (type-changing) child of a tetrahedron matching
/// parent face f. Same-type children keep the parent's face number.
inline constexpr int tet_middle_child_face[4] = {0, 2, 1, 3};

// --- Tree faces of boundary elements ----------------------------------------

/// Root face index g for a boundary face f of a tetrahedron, by type.
/// -1 marks combinations that cannot lie on the root boundary.
inline constexpr int tet_tree_face[6][4] = {
    {0, 1, 2, 3}, {0, -1, -1, -1}, {-1, -1, 1, -1},
    {-1, -1, -1, -1}, {-1, 2, -1, -1}, {-1, -1, -1, 3}};

/// Inverse: the element face f of a type-b tetrahedron sitting at root face g.
inline constexpr int tet_face_from_tree_face[6][4] = {
    {0, 1, 2, 3}, {0, -1, -1, -1}, {-1, 2, -1, -1},
    {-1, -1, -1, -1}, {-1, -1, 1, -1}, {-1, -1, -1, 3}};

/// Type of the boundary triangle of a type-b tetrahedron at face f
/// (only for combinations with tet_tree_face >= 0).
inline constexpr int tet_boundary_tri_type[6][4] = {
    {0, 0, 0, 0}, {1, -1, -1, -1}, {-1, -1, 1, -1},
    {-1, -1, -1, -1}, {-1, 1, -1, -1}, {-1, -1, -1, 1}};

/// Type of the extruded tetrahedron from (root face g, face triangle type).
inline constexpr int tet_extrude_type[4][2] = {{0, 1}, {0, 2}, {0, 4}, {0, 5}};

// --- Face signs for 3D tree-to-tree connections ------------------------------

/// Sign of the orientation-0 corner permutation for two tetrahedon trees
/// meeting at faces (g, g').
inline constexpr int sign_tet_tet(int g, int gp) { return ((g + gp) & 1) ? +1 : -1; }

/// Same for two hexahedron trees. Faces fall into the two parity classes
/// {0,3,4} and {1,2,5}; equal classes glue with a reflection.
inline constexpr int sign_hex_hex(int g, int gp) {
  constexpr int cls[6] = {0, 1, 1, 0, 0, 1};
  return cls[g] == cls[gp] ? -1 : +1;
}

}  // namespace t8x::tables
