// Forest: creation, adaptation (incl. cross-rank families), partitioning,
// cross-tree neighbors against the geometric oracle, owners, search.

#include <catch2/catch_amalgamated.hpp>
#include <t8x/forest.hpp>
#include <t8x/geometry.hpp>

#include <random>

#include "oracles.hpp"

using namespace t8x;
using forest::Forest;

namespace {

std::vector<std::pair<int64_t, ElementKey>> global_sequence(const vranks::World<Forest>& w) {
  std::vector<std::pair<int64_t, ElementKey>> out;
  for (int p = 0; p < w.nranks(); ++p)
    for (const auto& t : w.state(p).trees)
      for (const auto& e : t.leaves) out.emplace_back(t.tree_gid, e);
  return out;
}

/// Leaf-cover invariant: per tree, leaves are disjoint, sorted, and cover the
/// root exactly (checked by volume of lattice cells at max depth).
void check_leaf_cover(const vranks::World<Forest>& w, int64_t ntrees) {
  std::map<int64_t, std::vector<ElementKey>> per_tree;
  for (const auto& [tree, key] : global_sequence(w)) per_tree[tree].push_back(key);
  CHECK(int64_t(per_tree.size()) == ntrees);
  for (auto& [tree, leaves] : per_tree) {
    long double covered = 0;
    for (size_t i = 0; i < leaves.size(); ++i) {
      if (i > 0) CHECK(compare(leaves[i - 1], leaves[i]) < 0);
      covered += std::pow(0.5L, leaves[i].dim() * leaves[i].level);
    }
    CHECK(std::abs(double(covered - 1.0L)) < 1e-12);
  }
}

/// Physical corners of a face of an element within a tree of the mesh.
std::vector<geometry::Vec3> face_points(const cmesh::CoarseMesh& mesh, int64_t tree_gid,
                                        const ElementKey& key, int f) {
  const cmesh::Tree* t = mesh.find_local(tree_gid);
  REQUIRE(t != nullptr);
  const auto corners = geometry::element_corners(t->cls, t->vertices, key);
  std::vector<geometry::Vec3> out;
  for (int i : geometry::face_corner_indices(key.cls, f)) out.push_back(corners[size_t(i)]);
  std::sort(out.begin(), out.end());
  return out;
}

bool points_match(std::vector<geometry::Vec3> a, std::vector<geometry::Vec3> b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 3; ++k)
      if (std::fabs(a[i][size_t(k)] - b[i][size_t(k)]) > 1e-12) return false;
  return true;
}

}  // namespace

TEST_CASE("new_uniform: partition layout and oracle leaf sets") {
  // 2 triangle trees, level 1, 3 ranks: 3/3/2 elements.
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2");
  auto world = forest::new_uniform(mesh, 1, 3);
  // Cut points floor(pN/P) for N=8, P=3: ranks hold 2/3/3 elements.
  CHECK(world.state(0).local_leaves() == 2);
  CHECK(world.state(1).local_leaves() == 3);
  CHECK(world.state(2).local_leaves() == 3);
  CHECK(world.state(0).element_offsets == std::vector<uint64_t>{0, 2, 5, 8});
  // Rank 1 holds elements 2,3 of tree 0 and element 0 of tree 1.
  CHECK(world.state(1).trees.size() == 2);
  check_leaf_cover(world, 2);

  // P=1 holds everything.
  auto single = forest::new_uniform(mesh, 2, 1);
  CHECK(single.state(0).local_leaves() == 32);

  // Leaf sets equal recursive-enumeration oracle: 6 tets, level 2, 5 ranks.
  const auto tet6 = cmesh::builtin_cmesh("unit_cube_tet6");
  auto tw = forest::new_uniform(tet6, 2, 5);
  const auto seq = global_sequence(tw);
  size_t idx = 0;
  for (int64_t k = 0; k < 6; ++k) {
    for (const auto& e : oracle::enumerate_uniform(ElementClass::Tetrahedron, 2)) {
      REQUIRE(idx < seq.size());
      CHECK(seq[idx].first == k);
      CHECK(seq[idx].second == e);
      ++idx;
    }
  }
  CHECK(idx == seq.size());
  check_leaf_cover(tw, 6);
  // Counts differ by at most one.
  for (int p = 0; p < 5; ++p) {
    const auto n = tw.state(p).local_leaves();
    CHECK(n >= 6 * 64 / 5);
    CHECK(n <= 6 * 64 / 5 + 1);
  }
}

TEST_CASE("adapt: keep, refine, and the fractal oracle") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2");
  auto world = forest::new_uniform(mesh, 1, 2);
  const auto before = global_sequence(world);

  // callback == 0 keeps the forest identical.
  forest::adapt(world, [](int64_t, std::span<const ElementKey>, std::span<const double>) {
    return 0;
  }, false);
  CHECK(global_sequence(world) == before);

  // callback == +1 non-recursive refines uniformly.
  forest::adapt(world, [](int64_t, std::span<const ElementKey>, std::span<const double>) {
    return 1;
  }, false);
  CHECK(world.state(0).global_leaves() == 2 * 16);
  check_leaf_cover(world, 2);

  // Type-based fractal: refine tet types 0 and 3 recursively by +5 levels
  // from level 1 on the six-tet cube; element count matches an independent
  // recursion that materializes the refinement tree.
  const auto tet6 = cmesh::builtin_cmesh("unit_cube_tet6");
  auto tw = forest::new_uniform(tet6, 1, 3);
  const int maxl = 1 + 5;
  forest::adapt(tw, [&](int64_t, std::span<const ElementKey> elems, std::span<const double>) {
    const auto& e = elems[0];
    return ((e.btype == 0 || e.btype == 3) && e.level < maxl) ? 1 : 0;
  }, true);
  struct Cnt {
    int maxl;
    uint64_t count = 0;
    void rec(const ElementKey& e) {
      if ((e.btype == 0 || e.btype == 3) && e.level < maxl) {
        for (int i = 0; i < 8; ++i) rec(child(e, i, ChildOrder::TM));
      } else {
        ++count;
      }
    }
  } cnt{maxl};
  for (const auto& e : oracle::enumerate_uniform(ElementClass::Tetrahedron, 1)) cnt.rec(e);
  CHECK(tw.state(0).global_leaves() == 6 * cnt.count);
  check_leaf_cover(tw, 6);
}

TEST_CASE("adapt: coarsening across rank boundaries is partition-independent") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_quad");
  // Coarsen everything below level 2 back to level 1, regardless of values.
  const auto cb = [](int64_t, std::span<const ElementKey> elems, std::span<const double>) {
    return (elems.size() > 1 && elems[0].level == 2) ? -1 : 0;
  };
  std::vector<std::vector<std::pair<int64_t, ElementKey>>> results;
  for (int P : {1, 2, 3, 5, 7}) {
    auto world = forest::new_uniform(mesh, 2, P);
    forest::adapt(world, cb, false);
    results.push_back(global_sequence(world));
    CHECK(world.state(0).global_leaves() == 4);
  }
  for (size_t i = 1; i < results.size(); ++i) CHECK(results[i] == results[0]);

  // Mixed: coarsen only families whose parent has child_id 0; exercises
  // deciders with partial refinement around them.
  const auto cb2 = [](int64_t, std::span<const ElementKey> elems, std::span<const double>) {
    if (elems.size() > 1 && elems[0].level >= 2 && child_id(parent(elems[0])) == 0) return -1;
    if (elems.size() == 1 && elems[0].level == 2 && cube_id(elems[0], 2) == 3) return 1;
    return 0;
  };
  results.clear();
  for (int P : {1, 2, 3, 5, 8}) {
    auto world = forest::new_uniform(mesh, 2, P);
    forest::adapt(world, cb2, false);
    results.push_back(global_sequence(world));
    check_leaf_cover(world, 1);
  }
  for (size_t i = 1; i < results.size(); ++i) CHECK(results[i] == results[0]);
}

TEST_CASE("partition restores balanced counts and preserves the sequence") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2");
  for (int P : {2, 3, 6}) {
    auto world = forest::new_uniform(mesh, 2, P);
    // Refine only tree 0 on whatever rank holds it.
    forest::adapt(world, [](int64_t tree, std::span<const ElementKey>, std::span<const double>) {
      return tree == 0 ? 1 : 0;
    }, false);
    const auto before = global_sequence(world);
    forest::partition(world);
    CHECK(global_sequence(world) == before);
    const uint64_t N = world.state(0).global_leaves();
    uint64_t mn = UINT64_MAX, mx = 0;
    for (int p = 0; p < P; ++p) {
      mn = std::min(mn, world.state(p).local_leaves());
      mx = std::max(mx, world.state(p).local_leaves());
    }
    CHECK(mx - mn <= 1);
    CHECK(N == before.size());
    // Tree claims in the cmesh follow the element partition.
    for (int p = 0; p < P; ++p) {
      const Forest& f = world.state(p);
      for (const auto& t : f.trees) CHECK(f.mesh->find_local(t.tree_gid) != nullptr);
    }
  }
}

TEST_CASE("forest face neighbors match the geometric oracle (cross-tree)") {
  for (const char* kind : {"unit_square_tri2", "unit_square_hybrid", "unit_cube_tet6"}) {
    const auto mesh = cmesh::builtin_cmesh(kind);
    auto world = forest::new_uniform(mesh, dimension(mesh.trees[0].cls) == 3 ? 1 : 2, 1);
    const Forest& f = world.state(0);
    int crossings = 0;
    for (const auto& t : f.trees) {
      for (const auto& e : t.leaves) {
        for (int fi = 0; fi < face_count(e.cls); ++fi) {
          const auto nb = forest::face_neighbor(f, t.tree_gid, e, fi);
          const auto inner = face_neighbor_inside(e, fi);
          if (!nb.boundary && inside_root(inner.first)) {
            CHECK(nb.tree == t.tree_gid);
            CHECK(nb.key == inner.first);
            continue;
          }
          if (nb.boundary) continue;
          ++crossings;
          const auto mine = face_points(*f.mesh, t.tree_gid, e, fi);
          const auto theirs = face_points(*f.mesh, nb.tree, nb.key, nb.dual_face);
          CHECK(points_match(mine, theirs));
          CHECK(nb.key.level == e.level);
          CHECK(inside_root(nb.key));
        }
      }
    }
    CHECK(crossings > 0);
  }
}

TEST_CASE("periodic faces map to the opposite side") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_quad_periodic");
  auto world = forest::new_uniform(mesh, 2, 1);
  const Forest& f = world.state(0);
  const auto& t = f.trees[0];
  for (const auto& e : t.leaves) {
    for (int fi = 0; fi < 4; ++fi) {
      const auto nb = forest::face_neighbor(f, 0, e, fi);
      REQUIRE(!nb.boundary);
      CHECK(inside_root(nb.key));
      const auto inner = face_neighbor_inside(e, fi);
      if (inside_root(inner.first)) continue;
      auto mine = face_points(*f.mesh, 0, e, fi);
      auto theirs = face_points(*f.mesh, nb.tree, nb.key, nb.dual_face);
      bool ok = false;
      for (double sx : {-1.0, 0.0, 1.0})
        for (double sy : {-1.0, 0.0, 1.0}) {
          auto shifted = theirs;
          for (auto& pt : shifted) {
            pt[0] += sx;
            pt[1] += sy;
          }
          std::sort(shifted.begin(), shifted.end());
          ok |= points_match(mine, shifted);
        }
      CHECK(ok);
    }
  }
}

TEST_CASE("half face neighbors") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_quad");
  auto world = forest::new_uniform(mesh, 2, 1);
  const Forest& f = world.state(0);
  const ElementKey e = f.trees[0].leaves[5];
  const auto halves = forest::half_face_neighbors(f, 0, e, 0);
  CHECK(halves.size() == 2);
  for (const auto& h : halves) {
    if (h.boundary) continue;
    const auto back = forest::face_neighbor(f, h.tree, h.key, h.dual_face);
    CHECK(!back.boundary);
    CHECK(containment(back.key, e));
  }
  const auto tet6 = cmesh::builtin_cmesh("unit_cube_tet6");
  auto tw = forest::new_uniform(tet6, 1, 1);
  const Forest& ft = tw.state(0);
  int checked = 0;
  for (const auto& t : ft.trees) {
    for (const auto& e2 : t.leaves) {
      for (int fi = 0; fi < 4; ++fi) {
        const auto hs = forest::half_face_neighbors(ft, t.tree_gid, e2, fi);
        CHECK(hs.size() == 4);
        std::set<std::pair<int64_t, uint64_t>> distinct;
        for (const auto& h : hs) {
          if (h.boundary) continue;
          ++checked;
          distinct.insert({h.tree, linear_id_at(h.key, max_level)});
          const auto mine = face_points(*ft.mesh, t.tree_gid, e2, fi);
          const auto theirs = face_points(*ft.mesh, h.tree, h.key, h.dual_face);
          const auto n = geometry::cross(geometry::sub(mine[1], mine[0]),
                                         geometry::sub(mine[2], mine[0]));
          for (const auto& pt : theirs)
            CHECK(std::fabs(geometry::dot(n, geometry::sub(pt, mine[0]))) < 1e-12);
        }
        CHECK(distinct.size() == (hs[0].boundary ? 0 : 4));
      }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("owners and owner ranges against brute force") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2");
  std::mt19937 rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    const int P = std::uniform_int_distribution<int>(1, 5)(rng);
    auto world = forest::new_uniform(mesh, 3, P);
    const Forest& f0 = world.state(0);
    const auto seq = global_sequence(world);
    std::map<std::pair<int64_t, uint64_t>, int> owner_of;
    for (int p = 0; p < P; ++p)
      for (const auto& t : world.state(p).trees)
        for (const auto& e : t.leaves) owner_of[{t.tree_gid, linear_id_at(e, max_level)}] = p;
    for (const auto& [tree, key] : seq) {
      const int own = forest::owner(f0, tree, key);
      CHECK(own == owner_of.at({tree, linear_id_at(key, max_level)}));
      const auto [pf, pl] = forest::owner_range(f0, tree, key);
      CHECK(pf == own);
      CHECK(pl == own);  // leaves have unique owners
    }
    for (int64_t tree = 0; tree < 2; ++tree) {
      for (const auto& anc : oracle::all_elements_upto(ElementClass::Triangle, 2)) {
        int mn = P, mx = -1;
        for (const auto& [t2, key] : seq) {
          if (t2 != tree || key.level < anc.level || !containment(key, anc)) continue;
          const int q = owner_of.at({t2, linear_id_at(key, max_level)});
          mn = std::min(mn, q);
          mx = std::max(mx, q);
        }
        const auto [pf, pl] = forest::owner_range(f0, tree, anc);
        CHECK(pf == mn);
        CHECK(pl == mx);
      }
    }
  }
}

TEST_CASE("owners_at_face equals brute force over face-touching leaves") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2");
  std::mt19937 rng(17);
  for (int trial = 0; trial < 6; ++trial) {
    const int P = std::uniform_int_distribution<int>(2, 6)(rng);
    auto world = forest::new_uniform(mesh, 3, P);
    forest::adapt(world, [&](int64_t, std::span<const ElementKey> e, std::span<const double>) {
      return ((linear_id_at(e[0], max_level) % 7) == 3 && e[0].level < 4) ? 1 : 0;
    }, false);
    const auto seq = global_sequence(world);
    std::map<std::pair<int64_t, uint64_t>, int> owner_of;
    for (int p = 0; p < P; ++p)
      for (const auto& t : world.state(p).trees)
        for (const auto& e : t.leaves) owner_of[{t.tree_gid, linear_id_at(e, max_level)}] = p;
    const Forest& f0 = world.state(0);
    for (int64_t tree = 0; tree < 2; ++tree) {
      for (const auto& anc : oracle::all_elements_upto(ElementClass::Triangle, 2)) {
        for (int fi = 0; fi < 3; ++fi) {
          std::set<int> brute;
          for (const auto& [t2, key] : seq) {
            if (t2 != tree || key.level < anc.level || !containment(key, anc)) continue;
            if (!oracle::touches_face(key, anc, fi)) continue;
            brute.insert(owner_of.at({t2, linear_id_at(key, max_level)}));
          }
          if (brute.empty()) {
            // The element is inside one coarser leaf; its owner covers the face.
            for (const auto& [t2, key] : seq) {
              if (t2 != tree || key.level >= anc.level) continue;
              if (containment(anc, key))
                brute.insert(owner_of.at({t2, linear_id_at(key, max_level)}));
            }
          }
          const auto mine = forest::owners_at_face(f0, tree, anc, fi);
          // Every true owner is reported; the early-out may add the range
          // endpoints, which are owners of the element itself.
          CHECK(std::includes(mine.begin(), mine.end(), brute.begin(), brute.end()));
          for (int q : mine) {
            const auto [pf, pl] = forest::owner_range(f0, tree, anc);
            CHECK(pf <= q);
            CHECK(q <= pl);
          }
        }
      }
    }
  }
}

TEST_CASE("search visits leaves exactly once; split_array partitions") {
  const auto mesh = cmesh::builtin_cmesh("unit_cube_tet6");
  auto world = forest::new_uniform(mesh, 2, 2);
  const Forest& f = world.state(0);
  uint64_t visited = 0;
  forest::search(f, [&](int64_t, const ElementKey&, bool is_leaf) {
    if (is_leaf) ++visited;
    return true;
  });
  CHECK(visited == f.local_leaves());
  uint64_t visited2 = 0;
  forest::search(f, [&](int64_t, const ElementKey&, bool) {
    ++visited2;
    return false;
  });
  CHECK(visited2 == f.trees.size());

  for (const auto& e : oracle::all_elements_upto(ElementClass::Tetrahedron, 2)) {
    if (e.level == 2) continue;
    const auto leaves = oracle::enumerate_uniform(ElementClass::Tetrahedron, 2);
    std::vector<ElementKey> inside;
    for (const auto& l : leaves)
      if (containment(l, e)) inside.push_back(l);
    const auto parts = forest::split_array(inside, e);
    size_t total = 0;
    for (int i = 0; i < 8; ++i) {
      for (const auto& l : parts[size_t(i)]) CHECK(containment(l, child(e, i, ChildOrder::TM)));
      total += parts[size_t(i)].size();
    }
    CHECK(total == inside.size());
  }
}

TEST_CASE("leaf_desc_exists matches brute-force containment scan") {
  const auto mesh = cmesh::builtin_cmesh("unit_square_tri2");
  std::mt19937 rng(23);
  for (int trial = 0; trial < 6; ++trial) {
    const int P = std::uniform_int_distribution<int>(1, 5)(rng);
    auto world = forest::new_uniform(mesh, 2, P);
    forest::adapt(world, [&](int64_t, std::span<const ElementKey> e, std::span<const double>) {
      return ((linear_id_at(e[0], max_level) % 5) == 1 && e[0].level < 4) ? 1 : 0;
    }, false);
    forest::ghost(world, forest::GhostVersion::V2);
    for (int p = 0; p < P; ++p) {
      const Forest& f = world.state(p);
      for (int64_t tree = 0; tree < 2; ++tree) {
        for (const auto& key : oracle::all_elements_upto(ElementClass::Triangle, 3)) {
          bool brute = false;
          const auto scan = [&](int64_t t2, const ElementKey& l) {
            if (t2 == tree && l.level > key.level && containment(l, key)) brute = true;
          };
          for (const auto& t : f.trees)
            for (const auto& l : t.leaves) scan(t.tree_gid, l);
          if (f.ghosts)
            for (const auto& g : f.ghosts->ghosts) scan(g.tree, g.key);
          CHECK(forest::leaf_desc_exists(f, tree, key) == brute);
        }
      }
    }
  }
}
