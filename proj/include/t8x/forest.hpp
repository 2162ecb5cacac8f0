// The forest of refinement trees over a partitioned coarse mesh: creation,
// adaptation with cross-rank family coarsening, SFC partitioning, cross-tree
// neighbor construction, owner queries, recursive search, ghost layers
// (three algorithm generations), ripple 2:1 balance and per-element data
// services. All collective operations run over the vranks phase runtime.
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "t8x/cmesh.hpp"
#include "t8x/core.hpp"
#include "t8x/scheme.hpp"
#include "t8x/vranks.hpp"

namespace t8x::forest {

struct TreeLeaves {
  int64_t tree_gid = 0;
  std::vector<ElementKey> leaves;  ///< strictly ascending SFC order
  friend bool operator==(const TreeLeaves&, const TreeLeaves&) = default;
};

/// (tree, linear id at max level) of the first descendant of a rank's first
/// local leaf; the sentinel marks ranks past the end.
struct FirstDesc {
  int64_t tree = INT64_MAX;
  uint64_t lin = UINT64_MAX;
  friend auto operator<=>(const FirstDesc&, const FirstDesc&) = default;
};

struct GhostEntry {
  int owner = 0;
  int64_t tree = 0;
  ElementKey key;
  friend bool operator==(const GhostEntry&, const GhostEntry&) = default;
};

struct LeafRef {
  int32_t tree_idx = 0;
  int32_t leaf_idx = 0;
  friend auto operator<=>(const LeafRef&, const LeafRef&) = default;
};

struct GhostLayer {
  std::vector<int> remote_ranks;                    ///< ascending
  std::vector<std::vector<LeafRef>> remote_leaves;  ///< R_p^q per remote, SFC order
  std::vector<GhostEntry> ghosts;                   ///< ascending (owner, tree, key) == global SFC order
  friend bool operator==(const GhostLayer&, const GhostLayer&) = default;
};

/// Fixed-size per-leaf records, local leaves first, ghost records trailing.
struct ElementData {
  int width = 1;
  std::vector<double> values;
  friend bool operator==(const ElementData&, const ElementData&) = default;
};

struct Forest {
  std::shared_ptr<const cmesh::CoarseMesh> mesh;
  int rank = 0;
  int nranks = 1;
  std::vector<TreeLeaves> trees;          ///< only trees with local leaves, ascending gid
  std::vector<uint64_t> element_offsets;  ///< P+1 global leaf cut points (replicated)
  std::vector<FirstDesc> first_desc;      ///< per rank (replicated)
  std::optional<GhostLayer> ghosts;
  uint64_t generation = 0;

  uint64_t local_leaves() const {
    uint64_t n = 0;
    for (const auto& t : trees) n += t.leaves.size();
    return n;
  }
  uint64_t global_leaves() const { return element_offsets.back(); }
  uint64_t global_first() const { return element_offsets[size_t(rank)]; }

  int tree_index(int64_t gid) const {
    auto it = std::lower_bound(trees.begin(), trees.end(), gid,
                               [](const TreeLeaves& t, int64_t v) { return t.tree_gid < v; });
    if (it == trees.end() || it->tree_gid != gid) return -1;
    return int(it - trees.begin());
  }
  /// Data index of the i-th leaf of local tree ti (leaf order).
  size_t data_index(int ti, size_t leaf) const {
    size_t off = 0;
    for (int i = 0; i < ti; ++i) off += trees[size_t(i)].leaves.size();
    return off + leaf;
  }
};

namespace detail_fo {

inline FirstDesc fd_of(int64_t tree, const ElementKey& key) {
  return {tree, linear_id_at(key, max_level)};
}

inline FirstDesc last_fd_of(int64_t tree, const ElementKey& key) {
  const uint64_t span = uint64_t(1) << (uint64_t(key.dim()) * (max_level - key.level));
  return {tree, linear_id_at(key, max_level) + span - 1};
}

inline bool leaf_less(const ElementKey& a, const ElementKey& b) { return compare(a, b) < 0; }

/// Rebuild element_offsets and first_desc through one allgather phase.
inline void refresh_metadata(vranks::World<Forest>& world) {
  constexpr uint32_t tag = 0xFD01;
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    vranks::ByteWriter w;
    w.put<uint64_t>(f.local_leaves());
    const bool has = !f.trees.empty();
    w.put<uint8_t>(has ? 1 : 0);
    FirstDesc fd;
    if (has) fd = fd_of(f.trees.front().tree_gid, f.trees.front().leaves.front());
    w.put<FirstDesc>(fd);
    const auto payload = w.take();
    for (int q = 0; q < c.nranks(); ++q) c.send(q, tag, payload);
  });
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    const int P = c.nranks();
    auto counts = std::vector<uint64_t>(size_t(P));
    auto has = std::vector<uint8_t>(size_t(P));
    auto fds = std::vector<FirstDesc>(size_t(P));
    for (const auto& m : c.inbox()) {
      vranks::ByteReader r(m.bytes);
      counts[size_t(m.sender)] = r.get<uint64_t>();
      has[size_t(m.sender)] = r.get<uint8_t>();
      fds[size_t(m.sender)] = r.get<FirstDesc>();
    }
    f.nranks = P;
    f.element_offsets.assign(size_t(P) + 1, 0);
    for (int p = 0; p < P; ++p) f.element_offsets[size_t(p) + 1] = f.element_offsets[size_t(p)] + counts[size_t(p)];
    f.first_desc.assign(size_t(P), FirstDesc{});
    FirstDesc next{};  // sentinel for trailing empty ranks
    for (int p = P - 1; p >= 0; --p) {
      if (has[size_t(p)]) next = fds[size_t(p)];
      f.first_desc[size_t(p)] = next;
    }
    ++f.generation;
  });
}

/// Derive the coarse-mesh partition induced by the element partition and
/// repartition the per-rank cmesh views (executed when tree ownership may
/// have changed).
inline void repartition_cmesh_from_claims(vranks::World<Forest>& world) {
  const int P = world.nranks();
  auto claims = std::vector<cmesh::RankClaim>(size_t(P));
  int64_t prev_last = -1;
  for (int p = 0; p < P; ++p) {
    const Forest& f = world.state(p);
    if (f.trees.empty()) {
      claims[size_t(p)] = {0, 0, false};
    } else {
      const int64_t first = f.trees.front().tree_gid;
      const int64_t last = f.trees.back().tree_gid;
      claims[size_t(p)] = {first, last - first + 1, first == prev_last};
      prev_last = last;
    }
  }
  const int64_t total = world.state(0).mesh->total_trees();
  const auto off = cmesh::offsets_from_claims(claims, total);
  if (auto err = cmesh::validate_partition(off))
    detail::fail_domain("forest: derived tree partition invalid: " + *err);
  // Move the cmesh views through their own world.
  vranks::World<cmesh::CoarseMesh> cworld(P);
  for (int p = 0; p < P; ++p) cworld.state(p) = *world.state(p).mesh;
  cmesh::partition_cmesh(cworld, off);
  for (int p = 0; p < P; ++p)
    world.state(p).mesh = std::make_shared<cmesh::CoarseMesh>(std::move(cworld.state(p)));
}

}  // namespace detail_fo

// --- Creation ----------------------------------------------------------------

/// A partitioned uniform refinement of the coarse mesh: rank p holds the
/// global leaves [floor(pN/P), floor((p+1)N/P)), built communication-free by
/// one element_from_index call per tree and successor sweeps.
inline vranks::World<Forest> new_uniform(const cmesh::CoarseMesh& replicated, int level, int P) {
  if (level < 0 || level > max_level) detail::fail_range("new_uniform: bad level");
  if (replicated.n_local() != replicated.total_trees())
    detail::fail_arg("new_uniform: needs the replicated coarse mesh");
  const int64_t K = replicated.total_trees();
  if (K == 0) detail::fail_arg("new_uniform: empty coarse mesh");
  const int d = dimension(replicated.trees[0].cls);
  for (const auto& t : replicated.trees)
    if (dimension(t.cls) != d) detail::fail_arg("new_uniform: mixed dimensions");
  const uint64_t n = uint64_t(1) << (d * level);
  const uint64_t N = n * uint64_t(K);

  vranks::World<Forest> world(P);
  auto claims = std::vector<cmesh::RankClaim>(size_t(P));
  int64_t prev_last = -1;
  for (int p = 0; p < P; ++p) {
    Forest& f = world.state(p);
    f.rank = p;
    f.nranks = P;
    const uint64_t g_first = N * uint64_t(p) / uint64_t(P);
    const uint64_t g_end = N * uint64_t(p + 1) / uint64_t(P);
    if (g_first >= g_end) {
      claims[size_t(p)] = {0, 0, false};
      continue;
    }
    const int64_t k_first = int64_t(g_first / n), k_last = int64_t((g_end - 1) / n);
    for (int64_t k = k_first; k <= k_last; ++k) {
      const uint64_t e_first = (k == k_first) ? g_first - uint64_t(k) * n : 0;
      const uint64_t e_last = (k == k_last) ? (g_end - 1) - uint64_t(k) * n : n - 1;
      TreeLeaves tl;
      tl.tree_gid = k;
      ElementKey e = element_from_index(LinearId{e_first, level}, replicated.trees[size_t(k)].cls);
      tl.leaves.push_back(e);
      for (uint64_t i = e_first; i < e_last; ++i) {
        e = successor(e);
        tl.leaves.push_back(e);
      }
      f.trees.push_back(std::move(tl));
    }
    claims[size_t(p)] = {k_first, k_last - k_first + 1, k_first == prev_last};
    prev_last = k_last;
  }
  const auto off = cmesh::offsets_from_claims(claims, K);
  auto cworld = cmesh::distribute(replicated, off);
  for (int p = 0; p < P; ++p)
    world.state(p).mesh = std::make_shared<cmesh::CoarseMesh>(std::move(cworld.state(p)));
  detail_fo::refresh_metadata(world);
  return world;
}

// --- Cross-tree face neighbors -------------------------------------------------

struct FaceNeighbor {
  bool boundary = true;
  int64_t tree = -1;
  ElementKey key;
  int dual_face = -1;
};

/// The same-level face-neighbor of `key` (an element of tree `tree_gid`)
/// across face f; crosses tree boundaries via the coarse mesh connectivity.
inline FaceNeighbor face_neighbor(const Forest& f, int64_t tree_gid, const ElementKey& key, int fi) {
  FaceNeighbor out;
  const auto [inner, dual] = face_neighbor_inside(key, fi);
  if (inside_root(inner)) {
    out.boundary = false;
    out.tree = tree_gid;
    out.key = inner;
    out.dual_face = dual;
    return out;
  }
  const auto& mesh = *f.mesh;
  const int64_t li = tree_gid - mesh.first_tree();
  if (li < 0 || li >= mesh.n_local()) detail::fail_arg("face_neighbor: tree not local");
  const int g = tree_face(key, fi);
  const auto conn = mesh.connection(li, g);
  if (conn.boundary) return out;
  const ElementClass my_cls = mesh.trees[size_t(li)].cls;
  const ElementClass nb_cls = conn.neighbor_cls;
  const int gp = conn.dual_face;
  int sign = +1;
  if (dimension(my_cls) == 3) {
    sign = (my_cls == ElementClass::Tetrahedron) ? tables::sign_tet_tet(g, gp)
                                                 : tables::sign_hex_hex(g, gp);
  }
  const bool smaller = (my_cls == nb_cls) ? g <= gp : int(my_cls) < int(nb_cls);
  const ElementKey F = boundary_face(key, fi);
  const ElementKey Fp = transform_face(F, conn.orientation, sign, smaller);
  const ElementKey E = extrude_face(Fp, nb_cls, gp);
  out.boundary = false;
  out.tree = conn.neighbor_gid;
  out.key = E;
  out.dual_face = face_from_tree_face(nb_cls, E.btype, gp);
  return out;
}

/// The level+1 neighbors of `key` across face f (one per face child).
inline std::vector<FaceNeighbor> half_face_neighbors(const Forest& f, int64_t tree_gid,
                                                     const ElementKey& key, int fi) {
  if (key.level >= max_level) detail::fail_range("half_face_neighbors: maximum level reached");
  std::vector<FaceNeighbor> out;
  for (int ci : child_indices_at_face(key.cls, key.btype, fi)) {
    const ElementKey c = child(key, ci, ChildOrder::TM);
    out.push_back(face_neighbor(f, tree_gid, c, child_face(key, ci, fi)));
  }
  return out;
}

// --- Owners --------------------------------------------------------------------

namespace detail_fo {
/// The rank owning the maxlevel descendant position `fd` (first_desc array
/// search, restricted to [lo, hi]).
inline int owner_of_fd(const Forest& f, FirstDesc fd, int lo = 0, int hi = -1) {
  if (hi < 0) hi = f.nranks - 1;
  auto begin = f.first_desc.begin() + lo, end = f.first_desc.begin() + hi + 1;
  auto it = std::upper_bound(begin, end, fd);
  if (it == begin) detail::fail_domain("owner: position before the first rank");
  return int(it - f.first_desc.begin()) - 1;
}
}  // namespace detail_fo

/// The unique owner of the first maxlevel descendant of `key`.
inline int owner(const Forest& f, int64_t tree_gid, const ElementKey& key) {
  return detail_fo::owner_of_fd(f, detail_fo::fd_of(tree_gid, key));
}

/// Owner ranks of the first and last maxlevel descendants; every owner p of
/// the element satisfies p_first <= p <= p_last.
inline std::pair<int, int> owner_range(const Forest& f, int64_t tree_gid, const ElementKey& key) {
  return {detail_fo::owner_of_fd(f, detail_fo::fd_of(tree_gid, key)),
          detail_fo::owner_of_fd(f, detail_fo::last_fd_of(tree_gid, key))};
}

namespace detail_fo {
inline void owners_at_face_rec(const Forest& f, int64_t tree, const ElementKey& key, int fi,
                               int lo, int hi, std::set<int>& out) {
  const ElementKey fd = first_face_descendant(key, fi, max_level);
  const ElementKey ld = last_face_descendant(key, fi, max_level);
  const int pf = owner_of_fd(f, fd_of(tree, fd), lo, hi);
  const int pl = owner_of_fd(f, fd_of(tree, ld), pf, hi);
  if (pf == pl || pf == pl - 1) {
    out.insert(pf);
    out.insert(pl);
    return;
  }
  for (int ci : child_indices_at_face(key.cls, key.btype, fi)) {
    const ElementKey c = child(key, ci, ChildOrder::TM);
    owners_at_face_rec(f, tree, c, child_face(key, ci, fi), pf, pl, out);
  }
}
}  // namespace detail_fo

/// All ranks owning leaf descendants of `key` that touch face fi.
inline std::set<int> owners_at_face(const Forest& f, int64_t tree_gid, const ElementKey& key,
                                    int fi) {
  std::set<int> out;
  detail_fo::owners_at_face_rec(f, tree_gid, key, fi, 0, f.nranks - 1, out);
  return out;
}

// --- Recursive search ------------------------------------------------------------

/// split_array: partition the SFC-sorted leaf span among the children of E
/// by binary searching the children's descendant index windows.
inline std::vector<std::span<const ElementKey>> split_array(std::span<const ElementKey> leaves,
                                                            const ElementKey& e) {
  std::vector<std::span<const ElementKey>> out;
  size_t pos = 0;
  for (int i = 0; i < child_count(e.cls); ++i) {
    const ElementKey c = child(e, i, ChildOrder::TM);
    const uint64_t hi = linear_id_at(c, max_level) +
                        (uint64_t(1) << (uint64_t(c.dim()) * (max_level - c.level))) - 1;
    auto it = std::partition_point(leaves.begin() + long(pos), leaves.end(),
                                   [&](const ElementKey& l) { return linear_id_at(l, max_level) <= hi; });
    const size_t end = size_t(it - leaves.begin());
    out.push_back(leaves.subspan(pos, end - pos));
    pos = end;
  }
  if (pos != leaves.size()) detail::fail_domain("split_array: leaves outside the element");
  return out;
}

/// Top-down traversal: Match(tree, element, is_leaf) decides whether the
/// recursion descends; leaves are visited exactly when reached.
template <class Match>
inline void element_search(int64_t tree_gid, const ElementKey& e, std::span<const ElementKey> leaves,
                           Match&& match) {
  if (leaves.empty()) return;
  const bool is_leaf = leaves.size() == 1 && leaves[0] == e;
  if (!match(tree_gid, e, is_leaf) || is_leaf) return;
  const auto parts = split_array(leaves, e);
  for (int i = 0; i < child_count(e.cls); ++i)
    element_search(tree_gid, child(e, i, ChildOrder::TM), parts[size_t(i)], match);
}

template <class Match>
inline void search(const Forest& f, Match&& match) {
  for (const auto& t : f.trees) {
    if (t.leaves.empty()) continue;
    const ElementKey e = nca(t.leaves.front(), t.leaves.back());
    element_search(t.tree_gid, e, std::span<const ElementKey>(t.leaves), match);
  }
}

// --- Leaf descendant queries -------------------------------------------------------

namespace detail_fo {
/// The paper's lower-bound binary search: the last entry <= target, or the
/// first entry when everything exceeds the target.
template <class Iter, class Less>
inline Iter binary_search_leq(Iter begin, Iter end, Less&& less_than_target) {
  if (begin == end) return end;
  if (!less_than_target(*begin, true)) return begin;  // A[0] > target
  auto lo = begin, hi = end - 1;
  while (lo < hi) {
    auto g = lo + (hi - lo + 1) / 2;
    if (less_than_target(*g, true)) lo = g;
    else hi = g - 1;
  }
  return lo;
}
}  // namespace detail_fo

/// True iff a strict descendant of `key` exists among the local leaves or
/// ghosts (bracketed binary search against the last descendant).
inline bool leaf_desc_exists(const Forest& f, int64_t tree_gid, const ElementKey& key) {
  const uint64_t lin_e = linear_id_at(key, max_level);
  const uint64_t lin_d = lin_e + (uint64_t(1) << (uint64_t(key.dim()) * (max_level - key.level))) - 1;
  // Local leaves of the tree.
  // Strict descendant test for a found candidate: inside the index window
  // and deeper than key (a leaf with the same window start could be key's
  // ancestor, which does not count).
  const auto is_strict_desc = [&](const ElementKey& l) {
    const uint64_t v = linear_id_at(l, max_level);
    if (v > lin_d) return false;
    return v > lin_e || (v == lin_e && l.level > key.level);
  };
  const int ti = f.tree_index(tree_gid);
  if (ti >= 0) {
    const auto& ls = f.trees[size_t(ti)].leaves;
    auto it = detail_fo::binary_search_leq(ls.begin(), ls.end(), [&](const ElementKey& a, bool) {
      return linear_id_at(a, max_level) <= lin_d;
    });
    if (it != ls.end() && is_strict_desc(*it)) return true;
  }
  // Ghosts, globally sorted by (tree, key).
  if (f.ghosts) {
    const auto& gs = f.ghosts->ghosts;
    const FirstDesc target{tree_gid, lin_d};
    auto it = detail_fo::binary_search_leq(gs.begin(), gs.end(), [&](const GhostEntry& g, bool) {
      return FirstDesc{g.tree, linear_id_at(g.key, max_level)} <= target;
    });
    if (it != gs.end() && it->tree == tree_gid && is_strict_desc(it->key)) return true;
  }
  return false;
}

/// Locate a leaf with exactly this key; returns the data slot (local leaves
/// first, ghosts trailing) or nullopt.
inline std::optional<size_t> find_leaf_slot(const Forest& f, int64_t tree_gid, const ElementKey& key) {
  const int ti = f.tree_index(tree_gid);
  if (ti >= 0) {
    const auto& ls = f.trees[size_t(ti)].leaves;
    auto it = std::lower_bound(ls.begin(), ls.end(), key, detail_fo::leaf_less);
    if (it != ls.end() && *it == key) return f.data_index(ti, size_t(it - ls.begin()));
  }
  if (f.ghosts) {
    const auto& gs = f.ghosts->ghosts;
    auto it = std::lower_bound(gs.begin(), gs.end(), std::pair<int64_t, const ElementKey&>(tree_gid, key),
                               [](const GhostEntry& g, const auto& t) {
                                 if (g.tree != t.first) return g.tree < t.first;
                                 return compare(g.key, t.second) < 0;
                               });
    if (it != gs.end() && it->tree == tree_gid && it->key == key)
      return f.local_leaves() + size_t(it - gs.begin());
  }
  return std::nullopt;
}

// --- Ghost layers ------------------------------------------------------------------

enum class GhostVersion { V1, V2, V3 };

namespace detail_fo {

inline void add_remote(std::map<int, std::set<LeafRef>>& acc, int q, int p, LeafRef ref) {
  if (q != p) acc[q].insert(ref);
}

inline void ghost_communicate(vranks::World<Forest>& world,
                              const std::vector<std::map<int, std::set<LeafRef>>>& remote_sets) {
  constexpr uint32_t tag = 0x600;
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    GhostLayer layer;
    for (const auto& [q, refs] : remote_sets[size_t(c.rank())]) {
      layer.remote_ranks.push_back(q);
      layer.remote_leaves.emplace_back(refs.begin(), refs.end());
      vranks::ByteWriter w;
      w.put<uint64_t>(refs.size());
      for (const LeafRef& r : refs) {
        const auto& t = f.trees[size_t(r.tree_idx)];
        w.put<int64_t>(t.tree_gid);
        w.put<ElementKey>(t.leaves[size_t(r.leaf_idx)]);
      }
      c.send(q, tag, w.take());
    }
    f.ghosts = std::move(layer);
  });
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    auto& layer = *f.ghosts;
    for (const auto& m : c.inbox()) {
      if (m.tag != tag) continue;
      vranks::ByteReader r(m.bytes);
      const uint64_t n = r.get<uint64_t>();
      for (uint64_t i = 0; i < n; ++i) {
        GhostEntry g;
        g.owner = m.sender;
        g.tree = r.get<int64_t>();
        g.key = r.get<ElementKey>();
        layer.ghosts.push_back(g);
      }
    }
    // Inbox order is (owner, tree, key)-ascending already; sort defensively
    // per owner to keep runs deterministic.
    std::stable_sort(layer.ghosts.begin(), layer.ghosts.end(),
                     [](const GhostEntry& a, const GhostEntry& b) {
                       if (a.owner != b.owner) return a.owner < b.owner;
                       if (a.tree != b.tree) return a.tree < b.tree;
                       return compare(a.key, b.key) < 0;
                     });
  });
}

}  // namespace detail_fo

/// Build the ghost layer. V1 requires a balanced forest (half-neighbor
/// owners are unique), V2 visits every leaf with owners_at_face, V3 prunes
/// interior regions with the top-down search.
inline void ghost(vranks::World<Forest>& world, GhostVersion version) {
  const int P = world.nranks();
  auto remote_sets = std::vector<std::map<int, std::set<LeafRef>>>(size_t(P));
  for (int p = 0; p < P; ++p) {
    const Forest& f = world.state(p);
    auto& acc = remote_sets[size_t(p)];
    const auto visit_leaf_v2 = [&](int64_t tree_gid, const ElementKey& e, LeafRef ref) {
      for (int fi = 0; fi < face_count(e.cls); ++fi) {
        const auto nb = face_neighbor(f, tree_gid, e, fi);
        if (nb.boundary) continue;
        for (int q : owners_at_face(f, nb.tree, nb.key, nb.dual_face))
          detail_fo::add_remote(acc, q, p, ref);
      }
    };
    switch (version) {
    case GhostVersion::V1:
      for (int ti = 0; ti < int(f.trees.size()); ++ti) {
        const auto& t = f.trees[size_t(ti)];
        for (size_t li = 0; li < t.leaves.size(); ++li) {
          const ElementKey& e = t.leaves[li];
          for (int fi = 0; fi < face_count(e.cls); ++fi) {
            if (e.level >= max_level) detail::fail_domain("ghost v1: maxlevel leaf");
            for (const auto& half : half_face_neighbors(f, t.tree_gid, e, fi)) {
              if (half.boundary) continue;
              detail_fo::add_remote(acc, owner(f, half.tree, half.key), p,
                                    {int32_t(ti), int32_t(li)});
            }
          }
        }
      }
      break;
    case GhostVersion::V2:
      for (int ti = 0; ti < int(f.trees.size()); ++ti) {
        const auto& t = f.trees[size_t(ti)];
        for (size_t li = 0; li < t.leaves.size(); ++li)
          visit_leaf_v2(t.tree_gid, t.leaves[li], {int32_t(ti), int32_t(li)});
      }
      break;
    case GhostVersion::V3:
      for (int ti = 0; ti < int(f.trees.size()); ++ti) {
        const auto& t = f.trees[size_t(ti)];
        if (t.leaves.empty()) continue;
        size_t cursor = 0;
        const auto match = [&](int64_t tree_gid, const ElementKey& e, bool is_leaf) -> bool {
          if (is_leaf) {
            // Locate the leaf index; the search visits leaves in SFC order.
            while (!(t.leaves[cursor] == e)) ++cursor;
            visit_leaf_v2(tree_gid, e, {int32_t(ti), int32_t(cursor)});
            return true;
          }
          const auto [pf, pl] = owner_range(f, tree_gid, e);
          if (pf > p || pl < p) return true;  // per the listing: keep descending
          bool all_mine = pf == p && pl == p;
          for (int fi = 0; fi < face_count(e.cls); ++fi) {
            const auto nb = face_neighbor(f, tree_gid, e, fi);
            if (nb.boundary) continue;
            const ElementKey ffd = first_face_descendant(nb.key, nb.dual_face, max_level);
            const ElementKey fld = last_face_descendant(nb.key, nb.dual_face, max_level);
            const int qf = detail_fo::owner_of_fd(f, detail_fo::fd_of(nb.tree, ffd));
            const int ql = detail_fo::owner_of_fd(f, detail_fo::fd_of(nb.tree, fld));
            if (qf != p || ql != p) all_mine = false;
          }
          return !all_mine;
        };
        const ElementKey e0 = nca(t.leaves.front(), t.leaves.back());
        element_search(t.tree_gid, e0, std::span<const ElementKey>(t.leaves), match);
      }
      break;
    }
  }
  detail_fo::ghost_communicate(world, remote_sets);
}

/// Overwrite ghost records with the owners' boundary-leaf records.
inline void ghost_exchange(vranks::World<Forest>& world, std::vector<ElementData>& data) {
  constexpr uint32_t tag = 0x6DA;
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    if (!f.ghosts) detail::fail_arg("ghost_exchange: ghost layer missing");
    const auto& d = data[size_t(c.rank())];
    if (d.values.size() != size_t(d.width) * (f.local_leaves() + f.ghosts->ghosts.size()))
      detail::fail_arg("ghost_exchange: data size mismatch");
    for (size_t qi = 0; qi < f.ghosts->remote_ranks.size(); ++qi) {
      vranks::ByteWriter w;
      w.put<uint64_t>(f.ghosts->remote_leaves[qi].size());
      for (const LeafRef& ref : f.ghosts->remote_leaves[qi]) {
        const size_t slot = f.data_index(ref.tree_idx, size_t(ref.leaf_idx));
        for (int k = 0; k < d.width; ++k) w.put<double>(d.values[slot * size_t(d.width) + size_t(k)]);
      }
      c.send(f.ghosts->remote_ranks[qi], tag, w.take());
    }
  });
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    auto& d = data[size_t(c.rank())];
    const size_t base = f.local_leaves();
    size_t cursor = 0;
    for (const auto& m : c.inbox()) {
      if (m.tag != tag) continue;
      vranks::ByteReader r(m.bytes);
      const uint64_t n = r.get<uint64_t>();
      // Ghosts are grouped by owner in ascending rank order; cursor walks them.
      for (uint64_t i = 0; i < n; ++i) {
        if (cursor >= f.ghosts->ghosts.size()) detail::fail_domain("ghost_exchange: overflow");
        if (f.ghosts->ghosts[cursor].owner != m.sender)
          detail::fail_domain("ghost_exchange: owner order mismatch");
        for (int k = 0; k < d.width; ++k)
          d.values[(base + cursor) * size_t(d.width) + size_t(k)] = r.get<double>();
        ++cursor;
      }
    }
    if (cursor != f.ghosts->ghosts.size()) detail::fail_domain("ghost_exchange: missing records");
  });
}

// --- Adapt ----------------------------------------------------------------------

/// Callback contract: >0 refine the first element, <0 coarsen (only offered
/// for complete families), 0 keep. `values` holds the per-element records
/// (width doubles each) when adapt runs with data, else it is empty.
using AdaptCallback = std::function<int(int64_t tree, std::span<const ElementKey> elems,
                                        std::span<const double> values)>;

namespace detail_fo {

struct AdaptStats {
  uint64_t clamped_refines = 0;
};

// Recursive refinement of a freshly created child (never coarsened again).
inline void refine_rec(int64_t tree, const ElementKey& e, const AdaptCallback& cb, bool recursive,
                       std::vector<ElementKey>& out, AdaptStats& stats, int depth) {
  const int verdict = cb(tree, std::span<const ElementKey>(&e, 1), {});
  if (verdict > 0) {
    if (e.level >= max_level) {
      ++stats.clamped_refines;
      out.push_back(e);
      return;
    }
    for (int i = 0; i < child_count(e.cls); ++i) {
      const ElementKey c = child(e, i, ChildOrder::TM);
      if (recursive) refine_rec(tree, c, cb, recursive, out, stats, depth + 1);
      else out.push_back(c);
    }
  } else {
    out.push_back(e);
  }
}

}  // namespace detail_fo

/// Adapt the forest: refine and coarsen according to the callback. A family
/// straddling rank boundaries is completed by shipping the following ranks'
/// leading leaves (and records) to the rank owning the first member, which
/// makes the decision for everyone; the output leaf sequence is therefore a
/// pure function of the global input sequence, independent of the partition.
/// Recursion is rank-local: refinement recursion is local by construction,
/// coarsening recursion does not cross rank boundaries. Recursion-generated
/// elements are offered to the callback without data records.
/// Returns the number of refine requests clamped at the maximum level.
inline uint64_t adapt(vranks::World<Forest>& world, const AdaptCallback& cb, bool recursive,
                      const std::vector<ElementData>* data = nullptr) {
  const int P = world.nranks();
  constexpr uint32_t tag_lead = 0xADA1, tag_consumed = 0xADA2;
  const int width = data ? (*data)[0].width : 0;

  // Phase 1: ship the leading potential family completions backward.
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    const int p = c.rank();
    if (f.trees.empty()) return;
    const int nkids = child_count(f.trees.front().leaves.front().cls);
    vranks::ByteWriter w;
    uint64_t count = 0;
    for (int ti = 0; ti < int(f.trees.size()) && count < uint64_t(nkids - 1); ++ti) {
      const auto& t = f.trees[size_t(ti)];
      for (size_t i = 0; i < t.leaves.size() && count < uint64_t(nkids - 1); ++i, ++count) {
        w.put<int64_t>(t.tree_gid);
        w.put<ElementKey>(t.leaves[i]);
        if (data) {
          const size_t slot = f.data_index(ti, i);
          for (int k = 0; k < width; ++k)
            w.put<double>((*data)[size_t(p)].values[slot * size_t(width) + size_t(k)]);
        }
      }
    }
    const auto payload = w.take();
    for (int q = std::max(0, p - (nkids - 1)); q < p; ++q) c.send(q, tag_lead, payload);
  });

  // Phase 2: decide the (at most one) family that starts locally and crosses
  // the rank boundary; announce consumed leading leaves to the ranks behind.
  struct Boundary {
    bool present = false;
    size_t start = 0;        // flat index of the family's first member
    int verdict = 0;         // callback result for the crossing family
    size_t local_members = 0;  // members inside this rank (>= 1)
  };
  auto boundary = std::vector<Boundary>(size_t(P));
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    const int p = c.rank();
    if (f.trees.empty()) return;
    const int nkids = child_count(f.trees.front().leaves.front().cls);
    // Extension: following ranks' leading leaves in global order.
    std::vector<int64_t> ext_tree;
    std::vector<ElementKey> ext_key;
    std::vector<double> ext_val;
    std::vector<int> ext_sender;
    for (const auto& m : c.inbox()) {
      if (m.tag != tag_lead || m.sender <= p) continue;
      vranks::ByteReader r(m.bytes);
      while (!r.empty()) {
        ext_tree.push_back(r.get<int64_t>());
        ext_key.push_back(r.get<ElementKey>());
        for (int k = 0; k < width; ++k) ext_val.push_back(r.get<double>());
        ext_sender.push_back(m.sender);
      }
    }
    // Last up to nkids-1 local leaves, flattened.
    std::vector<int64_t> tail_tree;
    std::vector<ElementKey> tail_key;
    std::vector<double> tail_val;
    uint64_t nlocal = 0;
    for (int ti = 0; ti < int(f.trees.size()); ++ti) nlocal += f.trees[size_t(ti)].leaves.size();
    {
      uint64_t idx = 0;
      for (int ti = 0; ti < int(f.trees.size()); ++ti) {
        const auto& t = f.trees[size_t(ti)];
        for (size_t i = 0; i < t.leaves.size(); ++i, ++idx) {
          if (idx + uint64_t(nkids - 1) < nlocal) continue;
          tail_tree.push_back(t.tree_gid);
          tail_key.push_back(t.leaves[i]);
          if (data) {
            const size_t slot = f.data_index(ti, i);
            for (int k = 0; k < width; ++k)
              tail_val.push_back((*data)[size_t(p)].values[slot * size_t(width) + size_t(k)]);
          }
        }
      }
    }
    const size_t ntail = tail_key.size();
    for (size_t s = 0; s < ntail; ++s) {
      const ElementKey& e = tail_key[s];
      if (e.level == 0 || child_id(e) != 0) continue;
      const size_t local_members = ntail - s;
      if (local_members >= size_t(nkids)) continue;  // family would be fully local
      std::vector<ElementKey> fam;
      std::vector<double> vals;
      bool ok = true;
      for (size_t j = 0; j < size_t(nkids); ++j) {
        const bool loc = s + j < ntail;
        const size_t xi = s + j - ntail;
        if (!loc && xi >= ext_key.size()) { ok = false; break; }
        const int64_t tr = loc ? tail_tree[s + j] : ext_tree[xi];
        if (tr != tail_tree[s]) { ok = false; break; }
        fam.push_back(loc ? tail_key[s + j] : ext_key[xi]);
        if (data)
          for (int k = 0; k < width; ++k)
            vals.push_back(loc ? tail_val[(s + j) * size_t(width) + size_t(k)]
                               : ext_val[xi * size_t(width) + size_t(k)]);
      }
      if (!ok || !is_family(fam)) continue;
      Boundary b;
      b.present = true;
      b.start = size_t(nlocal) - local_members;
      b.local_members = local_members;
      b.verdict = cb(tail_tree[s], fam, vals);
      boundary[size_t(p)] = b;
      if (b.verdict < 0) {
        // Announce consumption to the ranks contributing the remote members.
        std::map<int, uint64_t> per_rank;
        for (size_t j = local_members; j < size_t(nkids); ++j)
          per_rank[ext_sender[j - local_members]]++;
        for (const auto& [q, n] : per_rank) {
          vranks::ByteWriter w;
          w.put<uint64_t>(n);
          c.send(q, tag_consumed, w.take());
        }
      }
      break;
    }
  });

  // Phase 3: the main walk with known consumed prefix and boundary decision.
  std::vector<uint64_t> clamped(size_t(P), 0);
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    const int p = c.rank();
    uint64_t consumed = 0;
    for (const auto& m : c.inbox()) {
      if (m.tag != tag_consumed) continue;
      vranks::ByteReader r(m.bytes);
      consumed += r.get<uint64_t>();
    }
    if (f.trees.empty()) return;
    const int nkids = child_count(f.trees.front().leaves.front().cls);
    detail_fo::AdaptStats stats;
    struct Ref {
      int ti;
      size_t li;
    };
    std::vector<Ref> seq;
    for (int ti = 0; ti < int(f.trees.size()); ++ti)
      for (size_t li = 0; li < f.trees[size_t(ti)].leaves.size(); ++li) seq.push_back({ti, li});
    const size_t nlocal = seq.size();
    if (consumed > nlocal) detail::fail_domain("adapt: consumed more leaves than present");
    const auto tree_of = [&](size_t i) { return f.trees[size_t(seq[i].ti)].tree_gid; };
    const auto key_of = [&](size_t i) -> const ElementKey& {
      return f.trees[size_t(seq[i].ti)].leaves[seq[i].li];
    };
    std::vector<double> vals;
    const auto values_of = [&](size_t i, size_t n) -> std::span<const double> {
      if (!data) return {};
      vals.clear();
      for (size_t j = 0; j < n; ++j) {
        const size_t slot = f.data_index(seq[i + j].ti, seq[i + j].li);
        for (int k = 0; k < width; ++k)
          vals.push_back((*data)[size_t(p)].values[slot * size_t(width) + size_t(k)]);
      }
      return vals;
    };

    std::vector<TreeLeaves> out;
    const auto emit = [&](int64_t tree, const ElementKey& e) {
      if (out.empty() || out.back().tree_gid != tree) out.push_back({tree, {}});
      out.back().leaves.push_back(e);
    };
    const auto coarsen_tail_rec = [&](int64_t tree) {
      while (recursive && !out.empty() && out.back().tree_gid == tree) {
        auto& tl = out.back();
        if (int(tl.leaves.size()) < nkids) break;
        std::span<const ElementKey> tail(tl.leaves.data() + tl.leaves.size() - size_t(nkids),
                                         size_t(nkids));
        if (tail[0].level == 0 || !is_family(tail)) break;
        if (cb(tree, tail, {}) >= 0) break;
        const ElementKey par = parent(tail[0]);
        tl.leaves.resize(tl.leaves.size() - size_t(nkids));
        tl.leaves.push_back(par);
      }
    };

    const Boundary& b = boundary[size_t(p)];
    size_t i = consumed;
    auto fam = std::vector<ElementKey>(size_t(nkids));
    while (i < nlocal) {
      const ElementKey& e = key_of(i);
      // The crossing family decided in phase 2.
      if (b.present && i == b.start) {
        if (b.verdict < 0) {
          emit(tree_of(i), parent(e));
          i = nlocal;
          continue;
        }
        // verdict >= 0: the verdict applies to the first member only.
        if (b.verdict > 0 && e.level < max_level) {
          for (int j = 0; j < nkids; ++j) {
            const ElementKey ch = child(e, j, ChildOrder::TM);
            if (recursive) {
              std::vector<ElementKey> sub;
              detail_fo::refine_rec(tree_of(i), ch, cb, true, sub, stats, 1);
              for (const auto& s2 : sub) emit(tree_of(i), s2);
            } else {
              emit(tree_of(i), ch);
            }
          }
        } else {
          if (b.verdict > 0) ++stats.clamped_refines;
          emit(tree_of(i), e);
        }
        ++i;
        continue;
      }
      // Fully local family?
      bool family = false;
      if (e.level > 0 && child_id(e) == 0 && i + size_t(nkids) <= nlocal) {
        family = true;
        for (size_t j = 0; j < size_t(nkids); ++j) {
          if (tree_of(i + j) != tree_of(i)) { family = false; break; }
          fam[j] = key_of(i + j);
        }
        if (family) family = is_family(fam);
      }
      int verdict;
      if (family) verdict = cb(tree_of(i), fam, values_of(i, size_t(nkids)));
      else verdict = cb(tree_of(i), std::span<const ElementKey>(&e, 1), values_of(i, 1));
      if (family && verdict < 0) {
        emit(tree_of(i), parent(e));
        i += size_t(nkids);
        coarsen_tail_rec(tree_of(i - 1));
        continue;
      }
      if (verdict > 0) {
        if (e.level >= max_level) {
          ++stats.clamped_refines;
          emit(tree_of(i), e);
        } else {
          for (int j = 0; j < nkids; ++j) {
            const ElementKey ch = child(e, j, ChildOrder::TM);
            if (recursive) {
              std::vector<ElementKey> sub;
              detail_fo::refine_rec(tree_of(i), ch, cb, true, sub, stats, 1);
              for (const auto& s2 : sub) emit(tree_of(i), s2);
            } else {
              emit(tree_of(i), ch);
            }
          }
        }
      } else {
        emit(tree_of(i), e);
      }
      ++i;
    }
    clamped[size_t(p)] = stats.clamped_refines;
    f.trees = std::move(out);
    f.ghosts.reset();
  });
  detail_fo::refresh_metadata(world);
  uint64_t total_clamped = 0;
  for (uint64_t v : clamped) total_clamped += v;
  return total_clamped;
}

// --- Partition ---------------------------------------------------------------

/// Repartition leaves to the uniform cut points floor(pN/P); element counts
/// per rank then differ by at most one. Per-element records move along when
/// `data` is given; the coarse mesh is repartitioned when tree ownership
/// changes.
inline void partition(vranks::World<Forest>& world, std::vector<ElementData>* data = nullptr) {
  const int P = world.nranks();
  const uint64_t N = world.state(0).global_leaves();
  std::vector<uint64_t> new_offsets(size_t(P) + 1);
  for (int p = 0; p <= P; ++p) new_offsets[size_t(p)] = N * uint64_t(p) / uint64_t(P);
  const int width = data ? (*data)[0].width : 0;

  constexpr uint32_t tag = 0xBA7;
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    const int p = c.rank();
    const uint64_t my_first = f.element_offsets[size_t(p)];
    uint64_t idx = my_first;
    int q = 0;
    vranks::ByteWriter w;
    uint64_t in_msg = 0;
    const auto flush = [&](int dest) {
      if (in_msg == 0) return;
      vranks::ByteWriter head;
      head.put<uint64_t>(in_msg);
      auto payload = head.take();
      const auto body = w.take();
      payload.insert(payload.end(), body.begin(), body.end());
      c.send(dest, tag, std::move(payload));
      in_msg = 0;
    };
    for (int ti = 0; ti < int(f.trees.size()); ++ti) {
      const auto& t = f.trees[size_t(ti)];
      for (size_t li = 0; li < t.leaves.size(); ++li, ++idx) {
        while (idx >= new_offsets[size_t(q) + 1]) {
          flush(q);
          ++q;
        }
        w.put<int64_t>(t.tree_gid);
        w.put<ElementKey>(t.leaves[li]);
        if (data) {
          const size_t slot = f.data_index(ti, li);
          for (int k = 0; k < width; ++k)
            w.put<double>((*data)[size_t(p)].values[slot * size_t(width) + size_t(k)]);
        }
        ++in_msg;
      }
    }
    flush(q);
  });
  world.run_phase([&](Forest& f, vranks::World<Forest>::Courier& c) {
    std::vector<TreeLeaves> trees;
    std::vector<double> values;
    for (const auto& m : c.inbox()) {
      if (m.tag != tag) continue;
      vranks::ByteReader r(m.bytes);
      const uint64_t n = r.get<uint64_t>();
      for (uint64_t i = 0; i < n; ++i) {
        const int64_t tree = r.get<int64_t>();
        const ElementKey key = r.get<ElementKey>();
        if (trees.empty() || trees.back().tree_gid != tree) trees.push_back({tree, {}});
        trees.back().leaves.push_back(key);
        for (int k = 0; k < width; ++k) values.push_back(r.get<double>());
      }
    }
    f.trees = std::move(trees);
    f.ghosts.reset();
    if (data) {
      (*data)[size_t(c.rank())].width = width;
      (*data)[size_t(c.rank())].values = std::move(values);
    }
  });
  detail_fo::refresh_metadata(world);
  detail_fo::repartition_cmesh_from_claims(world);
}

/// Move per-element records from the old partition to the new one (the data
/// companion of partition, usable when the caller kept the old data).
inline void partition_data(const std::vector<Forest>& old_forests, vranks::World<Forest>& new_world,
                           std::vector<ElementData>& data) {
  const int P = new_world.nranks();
  const int width = data[0].width;
  constexpr uint32_t tag = 0xBA8;
  new_world.run_phase([&](Forest&, vranks::World<Forest>::Courier& c) {
    const int p = c.rank();
    const Forest& of = old_forests[size_t(p)];
    const Forest& nf = new_world.state(p);
    if (data[size_t(p)].values.size() < of.local_leaves() * size_t(width))
      detail::fail_arg("partition_data: data size mismatch");
    uint64_t idx = of.element_offsets[size_t(p)];
    int q = 0;
    vranks::ByteWriter w;
    uint64_t in_msg = 0;
    const auto flush = [&](int dest) {
      if (in_msg == 0) return;
      vranks::ByteWriter head;
      head.put<uint64_t>(in_msg);
      auto payload = head.take();
      const auto body = w.take();
      payload.insert(payload.end(), body.begin(), body.end());
      c.send(dest, tag, std::move(payload));
      in_msg = 0;
    };
    size_t slot = 0;
    for (const auto& t : of.trees) {
      for (size_t li = 0; li < t.leaves.size(); ++li, ++idx, ++slot) {
        while (idx >= nf.element_offsets[size_t(q) + 1]) {
          flush(q);
          ++q;
        }
        for (int k = 0; k < width; ++k)
          w.put<double>(data[size_t(p)].values[slot * size_t(width) + size_t(k)]);
        ++in_msg;
      }
    }
    flush(q);
  });
  new_world.run_phase([&](Forest&, vranks::World<Forest>::Courier& c) {
    std::vector<double> values;
    for (const auto& m : c.inbox()) {
      if (m.tag != tag) continue;
      vranks::ByteReader r(m.bytes);
      const uint64_t n = r.get<uint64_t>();
      for (uint64_t i = 0; i < n * uint64_t(width); ++i) values.push_back(r.get<double>());
    }
    data[size_t(c.rank())].width = width;
    data[size_t(c.rank())].values = std::move(values);
  });
}

// --- Interpolation after one non-recursive adapt --------------------------------

/// Project records from the old forest onto the new one by the twin-index
/// walk: refined elements copy the parent value to every child, coarsened
/// families average, unchanged leaves copy. The new forest must come from
/// the old by one non-recursive adapt.
inline void interpolate_data(const std::vector<Forest>& old_forests,
                             vranks::World<Forest>& new_world, std::vector<ElementData>& data) {
  const int width = data[0].width;
  constexpr uint32_t tag_lead = 0x17E0, tag_last = 0x17E1;
  // Ship the old leading leaves (with records) backward, and each rank's new
  // LAST leaf forward: a following rank detects its consumed prefix as the
  // old leading leaves that are strict descendants of the previous rank's
  // last new leaf.
  new_world.run_phase([&](Forest&, vranks::World<Forest>::Courier& c) {
    const int p = c.rank();
    const Forest& of = old_forests[size_t(p)];
    const Forest& nf = new_world.state(p);
    if (!of.trees.empty()) {
      const int nkids = child_count(of.trees.front().leaves.front().cls);
      vranks::ByteWriter w;
      uint64_t count = 0;
      for (int ti = 0; ti < int(of.trees.size()) && count < uint64_t(nkids - 1); ++ti) {
        const auto& t = of.trees[size_t(ti)];
        for (size_t i = 0; i < t.leaves.size() && count < uint64_t(nkids - 1); ++i, ++count) {
          w.put<int64_t>(t.tree_gid);
          w.put<ElementKey>(t.leaves[i]);
          const size_t slot = of.data_index(ti, i);
          for (int k = 0; k < width; ++k)
            w.put<double>(data[size_t(p)].values[slot * size_t(width) + size_t(k)]);
        }
      }
      const auto payload = w.take();
      for (int q = std::max(0, p - (nkids - 1)); q < p; ++q) c.send(q, tag_lead, payload);
    }
    if (!nf.trees.empty() && p + 1 < c.nranks()) {
      vranks::ByteWriter w;
      w.put<int64_t>(nf.trees.back().tree_gid);
      w.put<ElementKey>(nf.trees.back().leaves.back());
      const auto payload = w.take();
      // Deliver to all following ranks; only the next nonempty one uses it.
      for (int q = p + 1; q < c.nranks(); ++q) c.send(q, tag_last, payload);
    }
  });
  new_world.run_phase([&](Forest&, vranks::World<Forest>::Courier& c) {
    const int p = c.rank();
    const Forest& of = old_forests[size_t(p)];
    const Forest& nf = new_world.state(p);
    std::vector<int64_t> ext_tree;
    std::vector<ElementKey> ext_key;
    std::vector<double> ext_val;
    std::optional<std::pair<int64_t, ElementKey>> prev_last;
    int prev_rank = -1;
    for (const auto& m : c.inbox()) {
      if (m.tag == tag_lead && m.sender > p) {
        vranks::ByteReader r(m.bytes);
        while (!r.empty()) {
          ext_tree.push_back(r.get<int64_t>());
          ext_key.push_back(r.get<ElementKey>());
          for (int k = 0; k < width; ++k) ext_val.push_back(r.get<double>());
        }
      } else if (m.tag == tag_last && m.sender < p && m.sender > prev_rank) {
        vranks::ByteReader r(m.bytes);
        const int64_t tree = r.get<int64_t>();
        const ElementKey key = r.get<ElementKey>();
        prev_last = {tree, key};
        prev_rank = m.sender;
      }
    }
    // Flatten old and new sequences.
    struct Flat {
      std::vector<int64_t> tree;
      std::vector<ElementKey> key;
    };
    Flat o, n;
    for (const auto& t : of.trees)
      for (const auto& e : t.leaves) {
        o.tree.push_back(t.tree_gid);
        o.key.push_back(e);
      }
    for (const auto& t : nf.trees)
      for (const auto& e : t.leaves) {
        n.tree.push_back(t.tree_gid);
        n.key.push_back(e);
      }
    // Consumed prefix: old leaves that are strict descendants of the
    // previous rank's last new leaf.
    size_t i = 0;
    if (prev_last) {
      while (i < o.key.size() && o.tree[i] == prev_last->first &&
             o.key[i].level > prev_last->second.level &&
             containment(o.key[i], prev_last->second))
        ++i;
    }
    const auto old_val = [&](size_t idx, int k) -> double {
      if (idx < o.key.size()) return data[size_t(p)].values[idx * size_t(width) + size_t(k)];
      return ext_val[(idx - o.key.size()) * size_t(width) + size_t(k)];
    };
    const auto old_key = [&](size_t idx) -> const ElementKey& {
      return idx < o.key.size() ? o.key[idx] : ext_key[idx - o.key.size()];
    };
    const size_t old_total = o.key.size() + ext_key.size();
    std::vector<double> out(n.key.size() * size_t(width));
    size_t j = 0;
    while (j < n.key.size()) {
      if (i >= old_total) detail::fail_domain("interpolate_data: old sequence exhausted");
      const int dl = int(n.key[j].level) - int(old_key(i).level);
      const int nkids = child_count(n.key[j].cls);
      if (dl == 0) {
        if (!(n.key[j] == old_key(i)))
          detail::fail_domain("interpolate_data: unaligned leaves");
        for (int k = 0; k < width; ++k) out[j * size_t(width) + size_t(k)] = old_val(i, k);
        ++i;
        ++j;
      } else if (dl == 1) {
        // Refined: the nkids children copy the parent value.
        for (int ch = 0; ch < nkids; ++ch)
          for (int k = 0; k < width; ++k)
            out[(j + size_t(ch)) * size_t(width) + size_t(k)] = old_val(i, k);
        ++i;
        j += size_t(nkids);
      } else if (dl == -1) {
        // Coarsened: average the family (may reach into the extension).
        for (int k = 0; k < width; ++k) {
          double acc = 0;
          for (int ch = 0; ch < nkids; ++ch) acc += old_val(i + size_t(ch), k);
          out[j * size_t(width) + size_t(k)] = acc / double(nkids);
        }
        i += size_t(nkids);
        ++j;
      } else {
        detail::fail_domain("interpolate_data: level jump larger than one");
      }
    }
    data[size_t(p)].width = width;
    data[size_t(p)].values = std::move(out);
  });
}

// --- 2:1 balance ----------------------------------------------------------------

/// True iff all face-neighboring leaf pairs (including across ranks) differ
/// by at most one level. Builds a V2 ghost layer when none is present.
inline bool is_balanced(vranks::World<Forest>& world) {
  bool need_ghost = false;
  for (int p = 0; p < world.nranks(); ++p)
    if (!world.state(p).ghosts) need_ghost = true;
  if (need_ghost) ghost(world, GhostVersion::V2);
  std::vector<uint8_t> ok(size_t(world.nranks()), 1);
  for (int p = 0; p < world.nranks(); ++p) {
    const Forest& f = world.state(p);
    for (const auto& t : f.trees) {
      for (const auto& e : t.leaves) {
        if (e.level >= max_level) continue;
        for (int fi = 0; fi < face_count(e.cls) && ok[size_t(p)]; ++fi) {
          for (const auto& half : half_face_neighbors(f, t.tree_gid, e, fi)) {
            if (half.boundary) continue;
            if (leaf_desc_exists(f, half.tree, half.key)) {
              ok[size_t(p)] = 0;
              break;
            }
          }
        }
      }
    }
  }
  return vranks::all_reduce_and(world, ok);
}

/// Ripple balance: iterate ghost construction and refinement of every leaf
/// with a too-fine half-neighbor until a global fixpoint; never coarsens and
/// never raises the maximum level. Records are carried along when `data` is
/// given (children copy the parent value). Returns the number of rounds.
inline int balance_ripple(vranks::World<Forest>& world, bool repartition_each_round = false,
                          std::vector<ElementData>* data = nullptr) {
  const int P = world.nranks();
  int rounds = 0;
  while (true) {
    ++rounds;
    if (repartition_each_round) partition(world, data);
    ghost(world, GhostVersion::V2);
    std::vector<uint8_t> done(size_t(P), 1);
    // Mark and refine per rank; data interpolates by the copy rule.
    std::vector<Forest> old_forests;
    if (data) old_forests.assign(world.states().begin(), world.states().end());
    for (int p = 0; p < P; ++p) {
      Forest& f = world.state(p);
      std::vector<TreeLeaves> out;
      for (const auto& t : f.trees) {
        TreeLeaves tl{t.tree_gid, {}};
        for (const auto& e : t.leaves) {
          bool refine = false;
          if (e.level < max_level) {
            for (int fi = 0; fi < face_count(e.cls) && !refine; ++fi) {
              for (const auto& half : half_face_neighbors(f, t.tree_gid, e, fi)) {
                if (half.boundary) continue;
                if (leaf_desc_exists(f, half.tree, half.key)) {
                  refine = true;
                  break;
                }
              }
            }
          }
          if (refine) {
            done[size_t(p)] = 0;
            for (int j = 0; j < child_count(e.cls); ++j)
              tl.leaves.push_back(child(e, j, ChildOrder::TM));
          } else {
            tl.leaves.push_back(e);
          }
        }
        out.push_back(std::move(tl));
      }
      f.trees = std::move(out);
      f.ghosts.reset();
    }
    detail_fo::refresh_metadata(world);
    if (data) interpolate_data(old_forests, world, *data);
    if (vranks::all_reduce_and(world, done)) break;
  }
  return rounds;
}

}  // namespace t8x::forest
