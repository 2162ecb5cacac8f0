// Partitioned coarse mesh of trees: connectivity encoding, valid partitions
// with shared trees, the signed offset-array codec, sender/receiver
// derivation and the communication-minimal repartitioning algorithm with
// ghost trees.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "t8x/core.hpp"
#include "t8x/scheme.hpp"
#include "t8x/vranks.hpp"

namespace t8x::cmesh {

using Vec3 = std::array<double, 3>;

/// F in the encoding or*F + dual_face: the maximal face count of the dimension.
inline constexpr int encode_base(int dim) { return dim == 3 ? 6 : 4; }

inline int32_t encode_connection(int dim, int orientation, int dual_face) {
  return int32_t(orientation * encode_base(dim) + dual_face);
}

inline std::pair<int, int> decode_connection(int dim, int32_t encoded) {
  return {int(encoded) / encode_base(dim), int(encoded) % encode_base(dim)};
}

/// Face entry of a local tree; `neighbor` is a local index k with
/// k < n_local for trees and n_local <= k for ghosts. -1 marks the domain
/// boundary (a face connected to itself).
struct FaceConnection {
  int32_t neighbor = -1;
  int32_t encoded = 0;
  bool boundary() const { return neighbor < 0; }
  friend bool operator==(const FaceConnection&, const FaceConnection&) = default;
};

/// Face entry of a ghost tree, by global neighbor id.
struct GhostFaceConnection {
  int64_t neighbor = -1;
  int32_t encoded = 0;
  bool boundary() const { return neighbor < 0; }
  friend bool operator==(const GhostFaceConnection&, const GhostFaceConnection&) = default;
};

struct Tree {
  int64_t global_id = 0;
  ElementClass cls = ElementClass::Quad;
  std::vector<Vec3> vertices;  ///< corner_count(cls) physical corner coordinates
  std::vector<FaceConnection> faces;
  std::vector<std::byte> payload;
  friend bool operator==(const Tree&, const Tree&) = default;
};

struct GhostTree {
  int64_t global_id = 0;
  ElementClass cls = ElementClass::Quad;
  std::vector<Vec3> vertices;
  std::vector<GhostFaceConnection> faces;
  friend bool operator==(const GhostTree&, const GhostTree&) = default;
};

// --- Partition offsets -------------------------------------------------------

/// Signed offset array O of length P+1. O[p] is the global index of p's
/// first local tree, with a negative sign (-k-1) when that tree is shared
/// with the previous nonempty rank; O[P] is the total tree count.
struct PartitionOffsets {
  std::vector<int64_t> O;

  int nranks() const { return int(O.size()) - 1; }
  int64_t total_trees() const { return O.back(); }

  int64_t first_tree(int p) const {
    const int64_t v = O[size_t(p)];
    return v >= 0 ? v : std::llabs(v + 1);
  }
  int64_t last_tree(int p) const { return std::llabs(O[size_t(p) + 1]) - 1; }
  int64_t local_count(int p) const { return std::llabs(O[size_t(p) + 1]) - first_tree(p); }
  bool first_shared(int p) const { return O[size_t(p)] < 0; }
  bool owns(int64_t k, int p) const {
    return local_count(p) > 0 && k >= first_tree(p) && k <= last_tree(p);
  }

  /// The rank interval [lo, hi] of owners of tree k. lo and hi own k; ranks
  /// strictly between may be empty (they own nothing) but never own other
  /// trees. The last_tree sequence is monotone, which the empty-rank start
  /// indices are not, so hi is found by a bounded forward scan over the
  /// sharer chain.
  std::pair<int, int> owner_range(int64_t k) const {
    int a = 0, b = nranks() - 1;
    while (a < b) {  // first p with last_tree(p) >= k (owners start here)
      const int m = (a + b) / 2;
      if (last_tree(m) >= k) b = m; else a = m + 1;
    }
    const int lo = a;
    int hi = lo;
    for (int p = lo + 1; p < nranks(); ++p) {
      if (local_count(p) == 0) continue;
      if (first_tree(p) > k) break;
      hi = p;
    }
    return {lo, hi};
  }
  int first_owner(int64_t k) const { return owner_range(k).first; }

  friend bool operator==(const PartitionOffsets&, const PartitionOffsets&) = default;
};

/// Encode explicit per-rank claims (first tree, last tree, first-shared flag)
/// into an offset array; empty ranks pass count 0.
struct RankClaim {
  int64_t first = 0;
  int64_t count = 0;  // number of local trees
  bool first_shared = false;
};

inline PartitionOffsets offsets_from_claims(const std::vector<RankClaim>& claims, int64_t total) {
  PartitionOffsets off;
  off.O.resize(claims.size() + 1);
  int64_t last_end = 0;  // K_q + 1 of last nonempty rank
  for (size_t p = 0; p < claims.size(); ++p) {
    if (claims[p].count == 0) {
      off.O[p] = last_end;
    } else {
      off.O[p] = claims[p].first_shared ? -claims[p].first - 1 : claims[p].first;
      last_end = claims[p].first + claims[p].count;
    }
  }
  off.O.back() = total;
  return off;
}

/// Check Proposition-style validity: consecutive local ranges, monotone
/// across ranks, only first/last trees shared, at most one shared tree per
/// rank pair. Returns the first violation or nullopt.
inline std::optional<std::string> validate_partition(const PartitionOffsets& off) {
  const int P = off.nranks();
  const auto at = [](int p) { return " at rank " + std::to_string(p); };
  if (P < 1) return std::optional<std::string>{"no ranks"};
  if (off.O[0] != 0) return "(ii) O[0] must be 0";
  if (off.O.back() < 0) return "negative tree count";
  int64_t prev_last = -1;  // last tree of the previous nonempty rank
  for (int p = 0; p < P; ++p) {
    const int64_t k = off.first_tree(p);
    const int64_t n = off.local_count(p);
    if (n < 0) return "(i) range not consecutive" + at(p);
    if (n == 0) {
      // Empty ranks must carry the canonical start index (Def. of k_p).
      if (off.O[size_t(p)] < 0) return "(iii) empty rank marked shared" + at(p);
      if (k != prev_last + 1) return "(ii) empty rank start index out of order" + at(p);
      continue;
    }
    if (off.first_shared(p)) {
      if (prev_last < 0 || k != prev_last)
        return "(iii) shared flag without a previous range ending at the tree" + at(p);
    } else {
      if (k != prev_last + 1)
        return k <= prev_last ? "(iii) overlap without shared flag" + at(p)
                              : "(ii) gap in tree coverage" + at(p);
    }
    prev_last = off.last_tree(p);
  }
  if (prev_last + 1 != off.total_trees())
    return std::optional<std::string>{"(ii) ranges do not cover all trees"};
  return std::nullopt;
}

/// Paradigm: the designated sender of tree k to rank q (given k in f'(q)):
/// q itself when k stays local on q, else the minimal old owner.
inline bool sends_tree(int ptilde, int q, int64_t k, const PartitionOffsets& old_off,
                       const PartitionOffsets& new_off) {
  if (!new_off.owns(k, q)) return false;
  if (old_off.owns(k, q)) return ptilde == q;
  return old_off.owns(k, ptilde) && ptilde == old_off.first_owner(k);
}

struct SendRecvSets {
  std::vector<int> S, R;
  int s_first = -1, s_last = -2, r_first = -1, r_last = -2;
};

/// Sender and receiver rank sets of p for a repartition old -> new,
/// derived purely from the two offset arrays.
inline SendRecvSets send_recv_sets(int p, const PartitionOffsets& old_off,
                                   const PartitionOffsets& new_off) {
  SendRecvSets out;
  const auto member_S = [&](int ptilde, int q) {
    if (old_off.local_count(ptilde) == 0) return false;
    if (new_off.local_count(q) == 0) return false;
    const int64_t a = std::max(old_off.first_tree(ptilde), new_off.first_tree(q));
    const int64_t b = std::min(old_off.last_tree(ptilde), new_off.last_tree(q));
    for (int64_t k = a; k <= b; ++k)
      if (sends_tree(ptilde, q, k, old_off, new_off)) return true;
    return false;
  };
  if (old_off.local_count(p) > 0) {
    const auto [qa, ignored] = new_off.owner_range(old_off.first_tree(p));
    (void)ignored;
    const auto [ignored2, qb] = new_off.owner_range(old_off.last_tree(p));
    (void)ignored2;
    for (int q = qa; q <= qb; ++q)
      if (member_S(p, q)) out.S.push_back(q);
  }
  if (new_off.local_count(p) > 0) {
    const auto [qa, ignored] = old_off.owner_range(new_off.first_tree(p));
    (void)ignored;
    const auto [ignored2, qb] = old_off.owner_range(new_off.last_tree(p));
    (void)ignored2;
    for (int q = qa; q <= qb; ++q)
      if (member_S(q, p)) out.R.push_back(q);
  }
  if (!out.S.empty()) { out.s_first = out.S.front(); out.s_last = out.S.back(); }
  if (!out.R.empty()) { out.r_first = out.R.front(); out.r_last = out.R.back(); }
  return out;
}

// --- The per-rank coarse mesh ------------------------------------------------

struct Connection {
  bool boundary = true;
  int64_t neighbor_gid = -1;
  ElementClass neighbor_cls = ElementClass::Quad;
  int orientation = 0;
  int dual_face = -1;
};

struct CoarseMesh {
  PartitionOffsets offsets;  ///< replicated partition table
  int rank = 0;
  std::vector<Tree> trees;        ///< local trees, ascending global id
  std::vector<GhostTree> ghosts;  ///< ghost trees, ascending global id

  int64_t first_tree() const { return offsets.first_tree(rank); }
  int64_t n_local() const { return int64_t(trees.size()); }
  int64_t n_ghosts() const { return int64_t(ghosts.size()); }
  int64_t total_trees() const { return offsets.total_trees(); }

  int64_t local_to_global(int32_t local_index) const {
    if (local_index < n_local()) return first_tree() + local_index;
    return ghosts[size_t(local_index - n_local())].global_id;
  }
  ElementClass class_of_local(int32_t local_index) const {
    if (local_index < n_local()) return trees[size_t(local_index)].cls;
    return ghosts[size_t(local_index - n_local())].cls;
  }
  const Tree* find_local(int64_t gid) const {
    if (trees.empty() || gid < first_tree() || gid >= first_tree() + n_local()) return nullptr;
    return &trees[size_t(gid - first_tree())];
  }
  const GhostTree* find_ghost(int64_t gid) const {
    auto it = std::lower_bound(ghosts.begin(), ghosts.end(), gid,
                               [](const GhostTree& g, int64_t v) { return g.global_id < v; });
    if (it == ghosts.end() || it->global_id != gid) return nullptr;
    return &*it;
  }

  /// Resolved face connection of local tree `li` at face f.
  Connection connection(int64_t li, int f) const {
    const Tree& t = trees[size_t(li)];
    const FaceConnection& fc = t.faces[size_t(f)];
    Connection c;
    if (fc.boundary()) return c;
    c.boundary = false;
    c.neighbor_gid = local_to_global(fc.neighbor);
    c.neighbor_cls = class_of_local(fc.neighbor);
    const auto [o, df] = decode_connection(dimension(t.cls), fc.encoded);
    c.orientation = o;
    c.dual_face = df;
    return c;
  }
};

// --- Repartitioning (Partition_cmesh over the virtual-rank runtime) ---------

namespace detail_cm {

// In-transit face entry kinds for the two-phase local index update.
enum : uint8_t { kBoundary = 0, kNewLocal = 1, kGlobal = 2 };

inline void serialize_tree(vranks::ByteWriter& w, const Tree& t, int64_t new_first,
                           const PartitionOffsets& new_off, int q, const CoarseMesh& mesh) {
  w.put<int64_t>(t.global_id);
  w.put<uint8_t>(uint8_t(t.cls));
  w.put<uint32_t>(uint32_t(t.vertices.size()));
  for (const auto& v : t.vertices) w.put<Vec3>(v);
  w.put<uint32_t>(uint32_t(t.faces.size()));
  for (const auto& fc : t.faces) {
    if (fc.boundary()) {
      w.put<uint8_t>(kBoundary);
      w.put<int64_t>(-1);
    } else {
      const int64_t gid = mesh.local_to_global(fc.neighbor);
      if (new_off.owns(gid, q)) {
        w.put<uint8_t>(kNewLocal);
        w.put<int64_t>(gid - new_first);  // phase-1 id update
      } else {
        w.put<uint8_t>(kGlobal);
        w.put<int64_t>(gid);  // fixed up in phase 2 on the receiver
      }
    }
    w.put<int32_t>(fc.encoded);
  }
  w.put_bytes(t.payload);
}

inline void serialize_ghost(vranks::ByteWriter& w, const GhostTree& g) {
  w.put<int64_t>(g.global_id);
  w.put<uint8_t>(uint8_t(g.cls));
  w.put<uint32_t>(uint32_t(g.vertices.size()));
  for (const auto& v : g.vertices) w.put<Vec3>(v);
  w.put<uint32_t>(uint32_t(g.faces.size()));
  for (const auto& fc : g.faces) {
    w.put<int64_t>(fc.neighbor);
    w.put<int32_t>(fc.encoded);
  }
}

// A ghost view of any locally known tree (local or ghost), with global ids.
inline GhostTree as_ghost(const CoarseMesh& mesh, int32_t local_index) {
  if (local_index >= mesh.n_local()) return mesh.ghosts[size_t(local_index - mesh.n_local())];
  const Tree& t = mesh.trees[size_t(local_index)];
  GhostTree g;
  g.global_id = t.global_id;
  g.cls = t.cls;
  g.vertices = t.vertices;
  g.faces.resize(t.faces.size());
  for (size_t f = 0; f < t.faces.size(); ++f) {
    g.faces[f].encoded = t.faces[f].encoded;
    g.faces[f].neighbor = t.faces[f].boundary() ? -1 : mesh.local_to_global(t.faces[f].neighbor);
  }
  return g;
}

/// The rank that ships tree `gid` as a ghost to q: q itself when q is among
/// the ranks sending a face-neighbor of gid to q as a local tree, else the
/// smallest such rank.
inline int ghost_sender(const GhostTree& g, int q, const PartitionOffsets& old_off,
                        const PartitionOffsets& new_off) {
  int smallest = -1;
  bool q_considers = false;
  for (const auto& fc : g.faces) {
    if (fc.boundary()) continue;
    const int64_t nbr = fc.neighbor;
    if (!new_off.owns(nbr, q)) continue;
    const int sender = old_off.owns(nbr, q) ? q : old_off.first_owner(nbr);
    if (sender == q) q_considers = true;
    if (smallest < 0 || sender < smallest) smallest = sender;
  }
  return q_considers ? q : smallest;
}

}  // namespace detail_cm

/// Repartition the coarse meshes held by the world according to `new_off`.
/// Every receiver obtains each of its new local trees and ghost trees exactly
/// once; ghosts are only shipped by ranks that also ship local trees.
inline void partition_cmesh(vranks::World<CoarseMesh>& world, const PartitionOffsets& new_off) {
  if (auto err = validate_partition(new_off))
    detail::fail_arg("partition_cmesh: invalid new partition: " + *err);
  if (new_off.nranks() != world.nranks()) detail::fail_arg("partition_cmesh: rank count mismatch");
  const PartitionOffsets old_off = world.state(0).offsets;
  if (old_off.total_trees() != new_off.total_trees())
    detail::fail_arg("partition_cmesh: tree count changed");

  constexpr uint32_t tag = 0xC3E5;
  world.run_phase([&](CoarseMesh& mesh, vranks::World<CoarseMesh>::Courier& c) {
    const int p = c.rank();
    const auto sets = send_recv_sets(p, old_off, new_off);
    for (int q : sets.S) {
      // Local trees this rank ships to q.
      std::vector<int64_t> send_gids;
      if (old_off.local_count(p) > 0 && new_off.local_count(q) > 0) {
        const int64_t a = std::max(old_off.first_tree(p), new_off.first_tree(q));
        const int64_t b = std::min(old_off.last_tree(p), new_off.last_tree(q));
        for (int64_t k = a; k <= b; ++k)
          if (sends_tree(p, q, k, old_off, new_off)) send_gids.push_back(k);
      }
      if (send_gids.empty()) continue;
      // Parse neighbors of the shipped trees for ghosts q will need.
      std::map<int64_t, GhostTree> ghosts_to_send;
      for (int64_t k : send_gids) {
        const Tree& t = mesh.trees[size_t(k - mesh.first_tree())];
        for (const auto& fc : t.faces) {
          if (fc.boundary()) continue;
          const int64_t gid = mesh.local_to_global(fc.neighbor);
          if (new_off.owns(gid, q)) continue;  // will be local on q, not a ghost
          if (ghosts_to_send.contains(gid)) continue;
          GhostTree g = detail_cm::as_ghost(mesh, fc.neighbor);
          if (detail_cm::ghost_sender(g, q, old_off, new_off) == p)
            ghosts_to_send.emplace(gid, std::move(g));
        }
      }
      vranks::ByteWriter w;
      w.put<uint32_t>(uint32_t(send_gids.size()));
      for (int64_t k : send_gids)
        detail_cm::serialize_tree(w, mesh.trees[size_t(k - mesh.first_tree())],
                                  new_off.first_tree(q), new_off, q, mesh);
      w.put<uint32_t>(uint32_t(ghosts_to_send.size()));
      for (const auto& [gid, g] : ghosts_to_send) detail_cm::serialize_ghost(w, g);
      c.send(q, tag, w.take());
    }
  });

  world.run_phase([&](CoarseMesh& mesh, vranks::World<CoarseMesh>::Courier& c) {
    const int p = c.rank();
    const int64_t new_first = new_off.first_tree(p);
    const int64_t n_new = new_off.local_count(p);
    struct TransitFace {
      uint8_t kind;
      int64_t value;
      int32_t encoded;
    };
    std::map<int64_t, std::pair<Tree, std::vector<TransitFace>>> new_trees;
    std::map<int64_t, GhostTree> new_ghosts;
    for (const auto& m : c.inbox()) {
      if (m.tag != tag) continue;
      vranks::ByteReader r(m.bytes);
      const uint32_t ntrees = r.get<uint32_t>();
      for (uint32_t i = 0; i < ntrees; ++i) {
        Tree t;
        std::vector<TransitFace> tf;
        t.global_id = r.get<int64_t>();
        t.cls = ElementClass(r.get<uint8_t>());
        t.vertices.resize(r.get<uint32_t>());
        for (auto& v : t.vertices) v = r.get<Vec3>();
        const uint32_t nf = r.get<uint32_t>();
        for (uint32_t f = 0; f < nf; ++f) {
          TransitFace e;
          e.kind = r.get<uint8_t>();
          e.value = r.get<int64_t>();
          e.encoded = r.get<int32_t>();
          tf.push_back(e);
        }
        t.payload = r.get_bytes();
        if (!new_trees.emplace(t.global_id, std::make_pair(std::move(t), std::move(tf))).second)
          detail::fail_domain("partition_cmesh: duplicate local tree received");
      }
      const uint32_t nghosts = r.get<uint32_t>();
      for (uint32_t i = 0; i < nghosts; ++i) {
        GhostTree g;
        g.global_id = r.get<int64_t>();
        g.cls = ElementClass(r.get<uint8_t>());
        g.vertices.resize(r.get<uint32_t>());
        for (auto& v : g.vertices) v = r.get<Vec3>();
        g.faces.resize(r.get<uint32_t>());
        for (auto& fc : g.faces) {
          fc.neighbor = r.get<int64_t>();
          fc.encoded = r.get<int32_t>();
        }
        if (!new_ghosts.emplace(g.global_id, std::move(g)).second)
          detail::fail_domain("partition_cmesh: duplicate ghost tree received");
      }
    }
    if (int64_t(new_trees.size()) != n_new)
      detail::fail_domain("partition_cmesh: wrong number of local trees received");
    CoarseMesh out;
    out.offsets = new_off;
    out.rank = p;
    out.trees.reserve(new_trees.size());
    std::vector<std::vector<TransitFace>> transit;
    for (auto& [gid, pair] : new_trees) {
      if (gid - new_first != int64_t(out.trees.size()))
        detail::fail_domain("partition_cmesh: non-consecutive local trees");
      out.trees.push_back(std::move(pair.first));
      transit.push_back(std::move(pair.second));
    }
    out.ghosts.reserve(new_ghosts.size());
    for (auto& [gid, g] : new_ghosts) out.ghosts.push_back(std::move(g));
    // Materialize face entries: phase-1 values directly, globals via phase 2.
    for (size_t i = 0; i < out.trees.size(); ++i) {
      out.trees[i].faces.assign(transit[i].size(), FaceConnection{});
      for (size_t f = 0; f < transit[i].size(); ++f) {
        const auto& e = transit[i][f];
        out.trees[i].faces[f].encoded = e.encoded;
        out.trees[i].faces[f].neighbor =
            e.kind == detail_cm::kNewLocal ? int32_t(e.value) : int32_t(-1);
      }
    }
    // Phase 2: assign ghost local indices and point local trees at them.
    for (size_t j = 0; j < out.ghosts.size(); ++j) {
      const int32_t lidx = int32_t(n_new + int64_t(j));
      for (const auto& fc : out.ghosts[j].faces) {
        if (fc.boundary()) continue;
        if (fc.neighbor < new_first || fc.neighbor >= new_first + n_new) continue;
        const auto [o, df] = decode_connection(dimension(out.ghosts[j].cls), fc.encoded);
        (void)o;
        out.trees[size_t(fc.neighbor - new_first)].faces[size_t(df)].neighbor = lidx;
      }
    }
    // Every non-boundary entry must now resolve.
    for (size_t i = 0; i < out.trees.size(); ++i)
      for (size_t f = 0; f < out.trees[i].faces.size(); ++f)
        if (transit[i][f].kind != detail_cm::kBoundary && out.trees[i].faces[f].neighbor < 0)
          detail::fail_domain("partition_cmesh: unresolved neighbor after phase 2");
    mesh = std::move(out);
  });
}

/// The ghost trees required by a partition: the face-neighbor closure of the
/// local trees minus the local trees (computed on a replicated mesh).
inline std::set<int64_t> ghost_tree_ids(const CoarseMesh& replicated, const PartitionOffsets& off,
                                        int p) {
  std::set<int64_t> out;
  if (off.local_count(p) == 0) return out;
  for (int64_t k = off.first_tree(p); k <= off.last_tree(p); ++k) {
    const Tree* t = replicated.find_local(k);
    if (!t) detail::fail_domain("ghost_tree_ids: needs the replicated mesh");
    for (const auto& fc : t->faces) {
      if (fc.boundary()) continue;
      const int64_t g = replicated.local_to_global(fc.neighbor);
      if (!off.owns(g, p)) out.insert(g);
    }
  }
  return out;
}

// --- Geometric mesh builder ---------------------------------------------------

/// Corner indices (ascending) of face f in the tree's corner numbering.
inline std::vector<int> tree_face_corners(ElementClass cls, int f) {
  std::vector<int> out;
  const int d = dimension(cls);
  if (is_simplex(cls)) {
    for (int i = 0; i <= d; ++i)
      if (i != f) out.push_back(i);
  } else {
    const int axis = f / 2;
    for (int i = 0; i < (1 << d); ++i)
      if (((i >> axis) & 1) == (f % 2)) out.push_back(i);
  }
  return out;
}

struct TreeSpec {
  ElementClass cls;
  std::vector<Vec3> vertices;
  std::vector<std::byte> payload;
};

/// Build a replicated (single-range) coarse mesh from explicit trees.
/// Face connections, orientations and boundary flags are derived from
/// physical vertex coincidence; `periods` lists translation vectors that
/// additionally identify faces (periodic meshes).
inline CoarseMesh build_from_trees(const std::vector<TreeSpec>& specs,
                                   const std::vector<Vec3>& periods = {}) {
  const double tol = 1e-12;
  const auto close = [&](const Vec3& a, const Vec3& b) {
    return std::fabs(a[0] - b[0]) < tol && std::fabs(a[1] - b[1]) < tol &&
           std::fabs(a[2] - b[2]) < tol;
  };

  struct FaceRef {
    int tree, face;
    std::vector<Vec3> corners;  // in face-corner order
  };
  std::vector<FaceRef> faces;
  for (int ti = 0; ti < int(specs.size()); ++ti) {
    const auto& s = specs[size_t(ti)];
    if (int(s.vertices.size()) != corner_count(s.cls))
      detail::fail_arg("build_from_trees: wrong vertex count");
    for (int f = 0; f < face_count(s.cls); ++f) {
      FaceRef fr{ti, f, {}};
      for (int ci : tree_face_corners(s.cls, f)) fr.corners.push_back(s.vertices[size_t(ci)]);
      faces.push_back(std::move(fr));
    }
  }

  // Candidate translations: zero and +-each period.
  std::vector<Vec3> shifts{{0, 0, 0}};
  for (const auto& pvec : periods) {
    shifts.push_back(pvec);
    shifts.push_back({-pvec[0], -pvec[1], -pvec[2]});
  }

  const auto match = [&](const FaceRef& a, const FaceRef& b, const Vec3& shift,
                         std::vector<int>& perm) {
    // perm[i] = index in b of the corner matching a's corner i, after shifting a.
    if (a.corners.size() != b.corners.size()) return false;
    perm.assign(a.corners.size(), -1);
    for (size_t i = 0; i < a.corners.size(); ++i) {
      const Vec3 pa{a.corners[i][0] + shift[0], a.corners[i][1] + shift[1],
                    a.corners[i][2] + shift[2]};
      for (size_t j = 0; j < b.corners.size(); ++j)
        if (close(pa, b.corners[j])) perm[i] = int(j);
      if (perm[i] < 0) return false;
    }
    return true;
  };

  // The face-sign tables presume that all 3D tree vertex maps carry the same
  // orientation; reject mixed-handedness vertex lists outright.
  int det_sign = 0;
  for (const auto& s : specs) {
    if (dimension(s.cls) != 3) continue;
    const auto sub3 = [&](int a, int b) {
      return Vec3{s.vertices[size_t(a)][0] - s.vertices[size_t(b)][0],
                  s.vertices[size_t(a)][1] - s.vertices[size_t(b)][1],
                  s.vertices[size_t(a)][2] - s.vertices[size_t(b)][2]};
    };
    const Vec3 u = sub3(1, 0);
    const Vec3 v = s.cls == ElementClass::Tetrahedron ? sub3(2, 0) : sub3(2, 0);
    const Vec3 w = s.cls == ElementClass::Tetrahedron ? sub3(3, 0) : sub3(4, 0);
    const double det = u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0]) +
                       u[2] * (v[0] * w[1] - v[1] * w[0]);
    const int sgn = det > 0 ? 1 : -1;
    if (det_sign == 0) det_sign = sgn;
    else if (det_sign != sgn)
      detail::fail_arg("build_from_trees: mixed tree orientations");
  }

  CoarseMesh mesh;
  mesh.rank = 0;
  mesh.offsets.O = {0, int64_t(specs.size())};
  mesh.trees.resize(specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    mesh.trees[i].global_id = int64_t(i);
    mesh.trees[i].cls = specs[i].cls;
    mesh.trees[i].vertices = specs[i].vertices;
    mesh.trees[i].payload = specs[i].payload;
    mesh.trees[i].faces.assign(size_t(face_count(specs[i].cls)), FaceConnection{});
  }

  for (size_t ia = 0; ia < faces.size(); ++ia) {
    for (size_t ib = ia + 1; ib < faces.size(); ++ib) {
      const FaceRef& A = faces[ia];
      const FaceRef& B = faces[ib];
      if (A.tree == B.tree && A.face == B.face) continue;
      std::vector<int> perm;
      bool found = false;
      for (const auto& sh : shifts) {
        if (match(A, B, sh, perm)) { found = true; break; }
      }
      if (!found) continue;
      // Orientation per the face-corner rule. For equal shapes the face with
      // the smaller index is the first one; line faces are side-independent.
      const ElementClass ca = specs[size_t(A.tree)].cls, cb = specs[size_t(B.tree)].cls;
      const int dim = dimension(ca);
      int orientation;
      const bool a_first = (ca == cb) ? (A.face <= B.face) : (int(ca) < int(cb));
      if (a_first) orientation = perm[0];
      else {
        orientation = -1;
        for (size_t i = 0; i < perm.size(); ++i)
          if (perm[i] == 0) orientation = int(i);
      }
      Tree& ta = mesh.trees[size_t(A.tree)];
      Tree& tb = mesh.trees[size_t(B.tree)];
      if (!ta.faces[size_t(A.face)].boundary() || !tb.faces[size_t(B.face)].boundary())
        detail::fail_arg("build_from_trees: face matched twice");
      ta.faces[size_t(A.face)] = {int32_t(B.tree), encode_connection(dim, orientation, B.face)};
      tb.faces[size_t(B.face)] = {int32_t(A.tree), encode_connection(dim, orientation, A.face)};
    }
  }
  return mesh;
}

// --- Builtin meshes -----------------------------------------------------------

inline CoarseMesh builtin_cmesh(const std::string& kind, int nx = 1, int ny = 1, int nz = 1) {
  const auto sq = [](double x0, double y0, double x1, double y1) {
    return std::vector<Vec3>{{x0, y0, 0}, {x1, y0, 0}, {x0, y1, 0}, {x1, y1, 0}};
  };
  if (kind == "unit_square_quad" || kind == "unit_square_quad_periodic") {
    std::vector<TreeSpec> t{{ElementClass::Quad, sq(0, 0, 1, 1), {}}};
    if (kind == "unit_square_quad_periodic")
      return build_from_trees(t, {{1, 0, 0}, {0, 1, 0}});
    return build_from_trees(t);
  }
  if (kind == "unit_square_tri2" || kind == "unit_square_tri2_periodic") {
    // The two triangles sharing the diagonal from (0,0) to (1,1).
    std::vector<TreeSpec> t{
        {ElementClass::Triangle, {{{0, 0, 0}, {1, 0, 0}, {1, 1, 0}}}, {}},
        {ElementClass::Triangle, {{{0, 0, 0}, {0, 1, 0}, {1, 1, 0}}}, {}}};
    if (kind == "unit_square_tri2_periodic")
      return build_from_trees(t, {{1, 0, 0}, {0, 1, 0}});
    return build_from_trees(t);
  }
  if (kind == "unit_square_hybrid" || kind == "unit_square_hybrid_periodic") {
    // Four triangles on the bottom half, two quadrilaterals on top.
    std::vector<TreeSpec> t{
        {ElementClass::Triangle, {{{0, 0, 0}, {0.5, 0, 0}, {0, 0.5, 0}}}, {}},
        {ElementClass::Triangle, {{{0.5, 0, 0}, {0.5, 0.5, 0}, {0, 0.5, 0}}}, {}},
        {ElementClass::Triangle, {{{0.5, 0, 0}, {1, 0, 0}, {0.5, 0.5, 0}}}, {}},
        {ElementClass::Triangle, {{{1, 0, 0}, {1, 0.5, 0}, {0.5, 0.5, 0}}}, {}},
        {ElementClass::Quad, sq(0, 0.5, 0.5, 1), {}},
        {ElementClass::Quad, sq(0.5, 0.5, 1, 1), {}}};
    if (kind == "unit_square_hybrid_periodic")
      return build_from_trees(t, {{1, 0, 0}, {0, 1, 0}});
    return build_from_trees(t);
  }
  if (kind == "unit_cube_hex" || kind == "unit_cube_hex_periodic") {
    std::vector<TreeSpec> t{{ElementClass::Hex,
                             {{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}}},
                             {}}};
    if (kind == "unit_cube_hex_periodic")
      return build_from_trees(t, {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    return build_from_trees(t);
  }
  if (kind == "unit_cube_tet6") {
    // Six tetrahedra all sharing the edge from the origin to (1,1,1). Vertex
    // lists of every second tree are transposed so that all six affine maps
    // carry the same orientation (required for the face-sign tables); tree i
    // then connects to tree i+1 via faces 2 and 1 at orientation 0.
    const Vec3 c[8] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0},
                       {0, 0, 1}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
    const int corner_sets[6][4] = {{0, 1, 5, 7}, {0, 3, 1, 7}, {0, 2, 3, 7},
                                   {0, 6, 2, 7}, {0, 4, 6, 7}, {0, 5, 4, 7}};
    std::vector<TreeSpec> t;
    for (int i = 0; i < 6; ++i) {
      TreeSpec s;
      s.cls = ElementClass::Tetrahedron;
      for (int j = 0; j < 4; ++j) s.vertices.push_back(c[corner_sets[i][j]]);
      t.push_back(std::move(s));
    }
    return build_from_trees(t);
  }
  if (kind == "brick") {
    if (nx < 1 || ny < 1 || nz < 1) detail::fail_arg("builtin_cmesh: bad brick extents");
    std::vector<TreeSpec> t;
    for (int k = 0; k < nz; ++k)
      for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
          TreeSpec s;
          s.cls = ElementClass::Hex;
          for (int corner = 0; corner < 8; ++corner)
            s.vertices.push_back({double(i + (corner & 1)), double(j + ((corner >> 1) & 1)),
                                  double(k + ((corner >> 2) & 1))});
          t.push_back(std::move(s));
        }
    return build_from_trees(t);
  }
  detail::fail_arg("builtin_cmesh: unknown kind '" + kind + "'");
}

/// Seed a world with a replicated mesh concentrated on rank 0, then
/// repartition to the requested offsets (a convenient way to distribute
/// builtin meshes).
inline vranks::World<CoarseMesh> distribute(const CoarseMesh& replicated,
                                            const PartitionOffsets& off) {
  vranks::World<CoarseMesh> world(off.nranks());
  const int64_t K = replicated.total_trees();
  for (int p = 0; p < world.nranks(); ++p) {
    CoarseMesh& m = world.state(p);
    m.rank = p;
    m.offsets.O.assign(size_t(off.nranks()) + 1, K);
    m.offsets.O[0] = 0;
    if (p == 0) {
      m.trees = replicated.trees;
      m.ghosts = {};
    }
  }
  partition_cmesh(world, off);
  return world;
}

// --- Text format ---------------------------------------------------------------

inline ElementClass class_from_name(const std::string& s) {
  if (s == "line") return ElementClass::Line;
  if (s == "quad") return ElementClass::Quad;
  if (s == "hex") return ElementClass::Hex;
  if (s == "triangle") return ElementClass::Triangle;
  if (s == "tet") return ElementClass::Tetrahedron;
  detail::fail_arg("unknown element class '" + s + "'");
}

/// Emit a replicated coarse mesh in the line-based text format.
inline void write_text(std::ostream& os, const CoarseMesh& mesh) {
  int dim = 0;
  for (const auto& t : mesh.trees) dim = std::max(dim, dimension(t.cls));
  os << "t8txt 1 " << dim << ' ' << mesh.trees.size() << '\n';
  for (const auto& t : mesh.trees) {
    os << "tree " << t.global_id << ' ' << class_name(t.cls);
    for (const auto& v : t.vertices)
      for (int i = 0; i < dim; ++i) os << ' ' << v[size_t(i)];
    os << '\n';
  }
  for (const auto& t : mesh.trees) {
    for (int f = 0; f < int(t.faces.size()); ++f) {
      if (t.faces[size_t(f)].boundary())
        os << "boundary " << t.global_id << ' ' << f << '\n';
      else
        os << "face " << t.global_id << ' ' << f << ' '
           << mesh.local_to_global(t.faces[size_t(f)].neighbor) << ' '
           << t.faces[size_t(f)].encoded << '\n';
    }
  }
}

/// Parse the text format; rejects malformed input and asymmetric
/// connectivity with line numbers.
inline CoarseMesh read_text(std::istream& is) {
  std::string line;
  int lineno = 0;
  const auto fail = [&](const std::string& msg) {
    detail::fail_arg("coarse mesh text, line " + std::to_string(lineno) + ": " + msg);
  };
  auto next = [&](std::istringstream& ss) -> bool {
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      ss.clear();
      ss.str(line);
      return true;
    }
    return false;
  };
  std::istringstream ss;
  if (!next(ss)) detail::fail_arg("coarse mesh text: empty input");
  std::string word;
  int version = 0, dim = 0;
  int64_t ntrees = 0;
  ss >> word >> version >> dim >> ntrees;
  if (word != "t8txt" || version != 1) fail("expected header 't8txt 1 <dim> <K>'");
  if (dim < 1 || dim > 3 || ntrees < 0) fail("bad header values");

  CoarseMesh mesh;
  mesh.rank = 0;
  mesh.offsets.O = {0, ntrees};
  mesh.trees.resize(size_t(ntrees));
  std::vector<bool> seen(size_t(ntrees), false);
  struct Rec {
    int64_t tree;
    int face;
    int64_t nbr;
    int32_t encoded;
    int lineno;
  };
  std::vector<Rec> recs;
  std::vector<std::pair<int64_t, int>> boundaries;
  while (next(ss)) {
    ss >> word;
    if (word == "tree") {
      int64_t id;
      std::string cname;
      ss >> id >> cname;
      if (!ss || id < 0 || id >= ntrees) fail("bad tree id");
      if (seen[size_t(id)]) fail("duplicate tree");
      seen[size_t(id)] = true;
      Tree& t = mesh.trees[size_t(id)];
      t.global_id = id;
      t.cls = class_from_name(cname);
      if (dimension(t.cls) != dim) fail("tree dimension does not match header");
      t.faces.assign(size_t(face_count(t.cls)), FaceConnection{.neighbor = -2, .encoded = 0});
      for (int v = 0; v < corner_count(t.cls); ++v) {
        Vec3 p{0, 0, 0};
        for (int i = 0; i < dim; ++i)
          if (!(ss >> p[size_t(i)])) fail("missing vertex coordinate");
        t.vertices.push_back(p);
      }
    } else if (word == "face") {
      Rec r{};
      ss >> r.tree >> r.face >> r.nbr >> r.encoded;
      if (!ss) fail("malformed face record");
      r.lineno = lineno;
      recs.push_back(r);
    } else if (word == "boundary") {
      int64_t id;
      int f;
      ss >> id >> f;
      if (!ss) fail("malformed boundary record");
      boundaries.emplace_back(id, f);
    } else {
      fail("unknown record '" + word + "'");
    }
  }
  for (int64_t i = 0; i < ntrees; ++i)
    if (!seen[size_t(i)]) detail::fail_arg("coarse mesh text: missing tree " + std::to_string(i));
  for (const auto& [id, f] : boundaries) {
    if (id < 0 || id >= ntrees || f < 0 || f >= int(mesh.trees[size_t(id)].faces.size()))
      detail::fail_arg("coarse mesh text: boundary record out of range");
    mesh.trees[size_t(id)].faces[size_t(f)] = FaceConnection{-1, 0};
  }
  for (const auto& r : recs) {
    lineno = r.lineno;
    if (r.tree < 0 || r.tree >= ntrees || r.nbr < 0 || r.nbr >= ntrees) fail("tree id out of range");
    Tree& t = mesh.trees[size_t(r.tree)];
    if (r.face < 0 || r.face >= int(t.faces.size())) fail("face index out of range");
    const auto [o, df] = decode_connection(dim, r.encoded);
    if (df < 0 || df >= face_count(mesh.trees[size_t(r.nbr)].cls)) fail("dual face out of range");
    const ElementClass fcls = face_class(t.cls);
    if (o < 0 || o >= corner_count(fcls)) fail("orientation out of range");
    t.faces[size_t(r.face)] = FaceConnection{int32_t(r.nbr), r.encoded};
  }
  // Symmetry: each connection must be declared from both sides consistently.
  for (int64_t k = 0; k < ntrees; ++k) {
    const Tree& t = mesh.trees[size_t(k)];
    for (int f = 0; f < int(t.faces.size()); ++f) {
      const auto& fc = t.faces[size_t(f)];
      if (fc.neighbor == -2)
        detail::fail_arg("coarse mesh text: tree " + std::to_string(k) + " face " +
                         std::to_string(f) + " undeclared");
      if (fc.boundary()) continue;
      const Tree& n = mesh.trees[size_t(fc.neighbor)];
      const auto [o, df] = decode_connection(dim, fc.encoded);
      const auto& back = n.faces[size_t(df)];
      if (back.boundary() || back.neighbor != int32_t(k))
        detail::fail_arg("coarse mesh text: asymmetric connection at tree " + std::to_string(k) +
                         " face " + std::to_string(f));
      const auto [ob, dfb] = decode_connection(dim, back.encoded);
      if (ob != o || dfb != f)
        detail::fail_arg("coarse mesh text: inconsistent back connection at tree " +
                         std::to_string(k) + " face " + std::to_string(f));
    }
  }
  return mesh;
}

}  // namespace t8x::cmesh
