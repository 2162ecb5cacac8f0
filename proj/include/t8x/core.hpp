// Core value types shared by every module: element classes, element keys,
// linear (consecutive) ids and a few small helpers.
#pragma once

#include <array>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>

namespace t8x {

/// Global maximum refinement level. Uniform across element classes so that
/// boundary extraction never exceeds the face class's maximum, and chosen so
/// that d*max_level <= 63 and every linear id fits into one 64-bit word.
inline constexpr int max_level = 21;

/// Root edge length in lattice units.
inline constexpr int32_t root_len = int32_t{1} << max_level;

enum class ElementClass : uint8_t { Line = 0, Quad, Hex, Triangle, Tetrahedron };

inline constexpr int dimension(ElementClass c) {
  switch (c) {
  case ElementClass::Line: return 1;
  case ElementClass::Quad:
  case ElementClass::Triangle: return 2;
  default: return 3;
  }
}

/// Number of element types the class distinguishes within an associated cube
/// (d! for simplices, 1 for the cubical classes).
inline constexpr int type_count(ElementClass c) {
  switch (c) {
  case ElementClass::Triangle: return 2;
  case ElementClass::Tetrahedron: return 6;
  default: return 1;
  }
}

inline constexpr bool is_simplex(ElementClass c) {
  return c == ElementClass::Triangle || c == ElementClass::Tetrahedron;
}

inline constexpr int child_count(ElementClass c) { return 1 << dimension(c); }

inline constexpr int face_count(ElementClass c) {
  switch (c) {
  case ElementClass::Line: return 2;
  case ElementClass::Quad: return 4;
  case ElementClass::Hex: return 6;
  case ElementClass::Triangle: return 3;
  case ElementClass::Tetrahedron: return 4;
  }
  return 0;
}

inline constexpr int corner_count(ElementClass c) {
  return is_simplex(c) ? dimension(c) + 1 : (1 << dimension(c));
}

/// Class of the (d-1)-dimensional face elements.
inline constexpr ElementClass face_class(ElementClass c, int /*face*/ = 0) {
  switch (c) {
  case ElementClass::Quad:
  case ElementClass::Triangle: return ElementClass::Line;
  case ElementClass::Hex: return ElementClass::Quad;
  case ElementClass::Tetrahedron: return ElementClass::Triangle;
  default: throw std::invalid_argument("face_class: 1D elements have point faces");
  }
}

inline const char* class_name(ElementClass c) {
  switch (c) {
  case ElementClass::Line: return "line";
  case ElementClass::Quad: return "quad";
  case ElementClass::Hex: return "hex";
  case ElementClass::Triangle: return "triangle";
  case ElementClass::Tetrahedron: return "tet";
  }
  return "?";
}

/// The universal element identifier: anchor node, level and type.
/// Anchor coordinates are lattice units of the scaled root [0, 2^max_level]^d.
/// Coordinates of elements outside the root may be negative or exceed the
/// root length; containment() is the separate guard.
struct ElementKey {
  ElementClass cls = ElementClass::Quad;
  int8_t level = 0;
  int8_t btype = 0;  ///< simplex type, always 0 for cubical classes
  int32_t x = 0, y = 0, z = 0;

  friend bool operator==(const ElementKey&, const ElementKey&) = default;

  int32_t coord(int i) const { return i == 0 ? x : i == 1 ? y : z; }
  void set_coord(int i, int32_t v) { (i == 0 ? x : i == 1 ? y : z) = v; }
  int dim() const { return dimension(cls); }
  /// Edge length of the associated cube in lattice units.
  int32_t len() const { return root_len >> level; }
};

/// The root element of a class (type 0 by convention).
inline ElementKey root_key(ElementClass c) { return ElementKey{c, 0, 0, 0, 0, 0}; }

/// A level-tagged consecutive SFC index: value in [0, 2^(d*level)).
struct LinearId {
  uint64_t value = 0;
  int level = 0;
  friend bool operator==(const LinearId&, const LinearId&) = default;
  friend auto operator<=>(const LinearId&, const LinearId&) = default;
};

namespace detail {
[[noreturn]] inline void fail_arg(const std::string& msg) { throw std::invalid_argument(msg); }
[[noreturn]] inline void fail_range(const std::string& msg) { throw std::out_of_range(msg); }
[[noreturn]] inline void fail_domain(const std::string& msg) { throw std::domain_error(msg); }
}  // namespace detail

}  // namespace t8x

template <>
struct std::hash<t8x::ElementKey> {
  size_t operator()(const t8x::ElementKey& k) const noexcept {
    uint64_t h = (uint64_t)k.cls << 56 | (uint64_t)(uint8_t)k.level << 48 | (uint64_t)(uint8_t)k.btype << 40;
    h ^= (uint64_t)(uint32_t)k.x * 0x9e3779b97f4a7c15ull;
    h ^= ((uint64_t)(uint32_t)k.y << 21) * 0xc2b2ae3d27d4eb4full;
    h ^= ((uint64_t)(uint32_t)k.z << 42) * 0x165667b19e3779f9ull;
    return (size_t)(h ^ (h >> 29));
  }
};
