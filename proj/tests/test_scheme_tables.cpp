// Cross-validation of the scheme lookup tables against each other and
// against the refinement geometry.

#include <catch2/catch_amalgamated.hpp>
#include <t8x/scheme.hpp>

#include "oracles.hpp"

using namespace t8x;

namespace {

ElementKey sample_of_type(ElementClass cls, int b) {
  // Breadth-first over a couple of levels until each type shows up.
  for (const auto& e : oracle::all_elements_upto(cls, 2))
    if (e.btype == b) return e;
  FAIL("no sample of requested type");
  return root_key(cls);
}

}  // namespace

TEST_CASE("sigma equals the TM ranking of Bey children") {
  for (ElementClass cls : {ElementClass::Triangle, ElementClass::Tetrahedron}) {
    const int n = child_count(cls);
    for (int b = 0; b < type_count(cls); ++b) {
      const ElementKey e = sample_of_type(cls, b);
      std::vector<std::pair<uint64_t, int>> ranked;
      for (int i = 0; i < n; ++i) {
        const ElementKey c = child(e, i, ChildOrder::Bey);
        ranked.emplace_back(detail::linear_id_unchecked(c), i);
      }
      std::sort(ranked.begin(), ranked.end());
      for (int pos = 0; pos < n; ++pos) {
        const int bey = ranked[size_t(pos)].second;
        CHECK(detail::sigma(cls, b, bey) == pos);
        CHECK(detail::sigma_inv(cls, b, pos) == bey);
      }
    }
  }
}

TEST_CASE("iloc and (cid,type)-from-iloc are mutually inverse") {
  for (ElementClass cls : {ElementClass::Line, ElementClass::Quad, ElementClass::Hex,
                           ElementClass::Triangle, ElementClass::Tetrahedron}) {
    const int n = child_count(cls);
    for (int pb = 0; pb < type_count(cls); ++pb) {
      for (int iloc = 0; iloc < n; ++iloc) {
        const int c = detail::cid_from_iloc(cls, pb, iloc);
        const int t = detail::type_from_iloc(cls, pb, iloc);
        CHECK(detail::iloc_from_cid_type(cls, t, c) == iloc);
        CHECK(detail::parent_type_of(cls, c, t) == pb);
      }
    }
    for (int b = 0; b < type_count(cls); ++b) {
      for (int c = 0; c < n; ++c) {
        const int iloc = detail::iloc_from_cid_type(cls, b, c);
        const int pb = detail::parent_type_of(cls, c, b);
        CHECK(detail::cid_from_iloc(cls, pb, iloc) == c);
        CHECK(detail::type_from_iloc(cls, pb, iloc) == b);
      }
    }
  }
}

TEST_CASE("parent type of every Bey child returns the parent's type") {
  for (ElementClass cls : {ElementClass::Triangle, ElementClass::Tetrahedron}) {
    for (int b = 0; b < type_count(cls); ++b) {
      const ElementKey e = sample_of_type(cls, b);
      for (int i = 0; i < child_count(cls); ++i) {
        const ElementKey c = child(e, i, ChildOrder::Bey);
        CHECK(detail::parent_type_of(cls, cube_id(c, c.level), c.btype) == b);
        CHECK(c.btype == detail::child_type(cls, b, i));
        CHECK(parent(c) == e);
      }
    }
  }
}

TEST_CASE("paper examples: parent types") {
  // cube-id 3, type 3 -> parent type 2; cube-id 5, type 4 -> parent type 5
  CHECK(detail::parent_type_of(ElementClass::Tetrahedron, 3, 3) == 2);
  CHECK(detail::parent_type_of(ElementClass::Tetrahedron, 5, 4) == 5);
}

TEST_CASE("children at a face touch exactly that face") {
  for (ElementClass cls : {ElementClass::Quad, ElementClass::Hex, ElementClass::Triangle,
                           ElementClass::Tetrahedron}) {
    for (int b = 0; b < type_count(cls); ++b) {
      const ElementKey e = sample_of_type(cls, b);
      for (int f = 0; f < face_count(cls); ++f) {
        const auto at_face = child_indices_at_face(cls, b, f);
        std::set<int> expect;
        for (int i = 0; i < child_count(cls); ++i)
          if (oracle::touches_face(child(e, i, ChildOrder::TM), e, f)) expect.insert(i);
        CHECK(expect == std::set<int>(at_face.begin(), at_face.end()));
        CHECK((int)at_face.size() == num_face_children(cls, f));
        CHECK(std::is_sorted(at_face.begin(), at_face.end()));
      }
    }
  }
}

TEST_CASE("child_face maps onto the parent face") {
  for (ElementClass cls : {ElementClass::Quad, ElementClass::Hex, ElementClass::Triangle,
                           ElementClass::Tetrahedron}) {
    for (int b = 0; b < type_count(cls); ++b) {
      const ElementKey e = sample_of_type(cls, b);
      for (int f = 0; f < face_count(cls); ++f) {
        for (int ci : child_indices_at_face(cls, b, f)) {
          const ElementKey c = child(e, ci, ChildOrder::TM);
          const int cf = child_face(e, ci, f);
          CHECK(oracle::subface_of(c, cf, e, f));
        }
      }
    }
  }
  // spec examples: quad/hex child_face identity, tet middle child at f=1 -> 2
  const ElementKey q = root_key(ElementClass::Quad);
  for (int f = 0; f < 4; ++f)
    for (int ci : child_indices_at_face(ElementClass::Quad, 0, f)) CHECK(child_face(q, ci, f) == f);
  const ElementKey t = root_key(ElementClass::Tetrahedron);
  // middle child of face 1 for type 0 is the only non-type-0 child there
  for (int ci : child_indices_at_face(ElementClass::Tetrahedron, 0, 1)) {
    const ElementKey c = child(t, ci, ChildOrder::TM);
    if (c.btype != 0) CHECK(child_face(t, ci, 1) == 2);
  }
}

TEST_CASE("spec examples: children at faces") {
  CHECK(std::vector<int>(child_indices_at_face(ElementClass::Tetrahedron, 0, 0).begin(),
                         child_indices_at_face(ElementClass::Tetrahedron, 0, 0).end()) ==
        std::vector<int>{1, 4, 5, 7});
  CHECK(std::vector<int>(child_indices_at_face(ElementClass::Quad, 0, 0).begin(),
                         child_indices_at_face(ElementClass::Quad, 0, 0).end()) ==
        std::vector<int>{0, 2});
  CHECK(std::vector<int>(child_indices_at_face(ElementClass::Hex, 0, 3).begin(),
                         child_indices_at_face(ElementClass::Hex, 0, 3).end()) ==
        std::vector<int>{2, 3, 6, 7});
}

TEST_CASE("uniform type ratio approaches 1/d! (2D level 6)") {
  const auto all = oracle::enumerate_uniform(ElementClass::Triangle, 6);
  size_t t0 = 0;
  for (const auto& e : all) t0 += e.btype == 0 ? 1 : 0;
  const double freq = double(t0) / double(all.size());
  CHECK(std::abs(freq - 0.5) / 0.5 < 0.02);
}
