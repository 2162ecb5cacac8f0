// Segment statistics: incremental sweep against the per-segment DFS oracle,
// the paper's small examples and the level-5 2D percentages.

#include <catch2/catch_amalgamated.hpp>
#include <t8x/segments.hpp>

using namespace t8x;
using namespace t8x::segments;

TEST_CASE("single element and full tree are connected") {
  for (ElementClass cls : {ElementClass::Quad, ElementClass::Triangle, ElementClass::Hex,
                           ElementClass::Tetrahedron}) {
    const uint64_t n = uint64_t(1) << (dimension(cls) * 2);
    CHECK(components_of_segment(cls, 2, 3, 3) == 1);
    CHECK(components_of_segment(cls, 2, 0, n - 1) == 1);
  }
}

TEST_CASE("tets level 2, indices 22-25 give four components") {
  CHECK(components_of_segment(ElementClass::Tetrahedron, 2, 22, 25) == 4);
}

TEST_CASE("incremental sweep equals the DFS oracle at small levels") {
  for (ElementClass cls : {ElementClass::Line, ElementClass::Quad, ElementClass::Triangle,
                           ElementClass::Hex, ElementClass::Tetrahedron}) {
    const int level = dimension(cls) == 3 ? 2 : 3;
    const uint64_t n = uint64_t(1) << (dimension(cls) * level);
    const auto stats = enumerate_all(cls, level);
    std::vector<uint64_t> hist(stats.histogram.size(), 0);
    int maxc = 0;
    for (uint64_t s = 0; s < n; ++s)
      for (uint64_t e = s; e < n; ++e) {
        const int c = components_of_segment(cls, level, s, e);
        hist[size_t(c)] += 1;
        maxc = std::max(maxc, c);
      }
    CHECK(stats.histogram == hist);
    CHECK(stats.max_components == maxc);
    CHECK(stats.total_segments == n * (n + 1) / 2);
    // Histogram total is N(N+1)/2 and fractions sum to one.
    uint64_t total = 0;
    for (uint64_t h : stats.histogram) total += h;
    CHECK(total == stats.total_segments);
  }
}

TEST_CASE("2D level-5 percentages match the reported statistics") {
  const auto quads = enumerate_all(ElementClass::Quad, 5);
  CHECK(std::round(quads.fraction_connected * 1000) / 10 == 71.6);
  const auto tris = enumerate_all(ElementClass::Triangle, 5);
  CHECK(std::round(tris.fraction_connected * 1000) / 10 == 63.9);
  // Lines are always connected.
  const auto lines = enumerate_all(ElementClass::Line, 6);
  CHECK(lines.fraction_connected == 1.0);
}

TEST_CASE("bound check: witnesses and hard bounds") {
  const auto tri4 = bound_check(ElementClass::Triangle, 4);
  CHECK(tri4.bound == 6);
  CHECK(tri4.max_observed == 6);  // the sharp witness exists
  const auto quad = bound_check(ElementClass::Quad, 4);
  CHECK(quad.max_observed <= 2);
  const auto tet2 = bound_check(ElementClass::Tetrahedron, 2);
  CHECK(tet2.bound == 5);
  CHECK(tet2.max_observed >= 4);  // e.g. indices 22-25
  CHECK(components_of_segment(ElementClass::Tetrahedron, 2,
                              tet2.witness_start, tet2.witness_end) == tet2.max_observed);
}

TEST_CASE("budget guard refuses oversized enumerations") {
  CHECK_THROWS_AS(enumerate_all(ElementClass::Quad, 8, 1000), std::out_of_range);
}
