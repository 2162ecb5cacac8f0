// Face-connected components of SFC segments: exact enumeration over all
// segments of a uniform refinement with an incremental merge sweep, plus the
// theorem bound checks.
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "t8x/core.hpp"
#include "t8x/scheme.hpp"

namespace t8x::segments {

/// Default guard: total segment extensions N(N+1)/2 allowed without an
/// explicit budget override. Covers 2D levels through 7 and 3D level 5;
/// 2D level 8 (2.1e9 extensions) requires the override.
inline constexpr uint64_t default_budget = 600'000'000;

/// Same-level face-neighbor indices inside the root, as a flat array with
/// face_count(cls) slots per element (-1 pads).
inline std::vector<int32_t> build_adjacency(ElementClass cls, int level) {
  const int d = dimension(cls);
  const uint64_t n = uint64_t(1) << (d * level);
  const int stride = face_count(cls);
  std::vector<int32_t> adj(n * uint64_t(stride), -1);
  ElementKey e = element_from_index(LinearId{0, level}, cls);
  for (uint64_t i = 0; i < n; ++i) {
    for (int f = 0; f < stride; ++f) {
      const auto [nbr, dual] = face_neighbor_inside(e, f);
      (void)dual;
      if (inside_root(nbr)) adj[i * uint64_t(stride) + uint64_t(f)] = int32_t(detail::linear_id_unchecked(nbr));
    }
    if (i + 1 < n) e = successor(e);
  }
  return adj;
}

/// Connected components of the segment [start, end] by plain DFS (the
/// independent per-segment method; enumerate_all uses the merge sweep).
inline int components_of_segment(ElementClass cls, int level, uint64_t start, uint64_t end) {
  const int d = dimension(cls);
  const uint64_t n = uint64_t(1) << (d * level);
  if (start > end || end >= n) detail::fail_range("components_of_segment: bad range");
  const auto adj = build_adjacency(cls, level);
  const int stride = face_count(cls);
  std::vector<uint8_t> seen(end - start + 1, 0);
  std::vector<uint64_t> stack;
  int comps = 0;
  for (uint64_t i = start; i <= end; ++i) {
    if (seen[i - start]) continue;
    ++comps;
    stack.push_back(i);
    seen[i - start] = 1;
    while (!stack.empty()) {
      const uint64_t v = stack.back();
      stack.pop_back();
      for (int f = 0; f < stride; ++f) {
        const int32_t w = adj[v * uint64_t(stride) + uint64_t(f)];
        if (w < 0 || uint64_t(w) < start || uint64_t(w) > end) continue;
        if (!seen[uint64_t(w) - start]) {
          seen[uint64_t(w) - start] = 1;
          stack.push_back(uint64_t(w));
        }
      }
    }
  }
  return comps;
}

struct SegmentStats {
  ElementClass cls = ElementClass::Quad;
  int level = 0;
  uint64_t total_segments = 0;
  std::vector<uint64_t> histogram;    ///< histogram[c] = segments with c components
  std::vector<uint64_t> length_sum;   ///< summed segment lengths per component count
  double fraction_connected = 0;
  int max_components = 0;
  uint64_t witness_start = 0, witness_end = 0;

  double fraction(int comps) const {
    return double(histogram[size_t(comps)]) / double(total_segments);
  }
  double avg_length(int comps) const {
    return histogram[size_t(comps)] == 0
               ? 0.0
               : double(length_sum[size_t(comps)]) / double(histogram[size_t(comps)]);
  }
};

/// Enumerate every SFC segment of the uniform refinement and count its
/// face-connected components with an incremental union-merge sweep (element
/// additions only ever merge components).
inline SegmentStats enumerate_all(ElementClass cls, int level, uint64_t budget = default_budget) {
  const int d = dimension(cls);
  const uint64_t n = uint64_t(1) << (d * level);
  const uint64_t extensions = n * (n + 1) / 2;
  if (extensions > budget)
    detail::fail_range("enumerate_all: " + std::to_string(extensions) +
                       " segment extensions exceed the budget of " + std::to_string(budget));
  const auto adj = build_adjacency(cls, level);
  const int stride = face_count(cls);

  SegmentStats out;
  out.cls = cls;
  out.level = level;
  out.total_segments = extensions;
  const int maxc = 2 * max_level + 2;
  out.histogram.assign(size_t(maxc), 0);
  out.length_sum.assign(size_t(maxc), 0);

  std::vector<int32_t> parent(n);
  std::vector<int32_t> csize(n);
  const auto find = [&](int32_t v) {
    while (parent[uint64_t(v)] != v) {
      parent[uint64_t(v)] = parent[uint64_t(parent[uint64_t(v)])];
      v = parent[uint64_t(v)];
    }
    return v;
  };

  for (uint64_t start = 0; start < n; ++start) {
    int comps = 0;
    for (uint64_t end = start; end < n; ++end) {
      const int32_t e = int32_t(end);
      parent[end] = e;
      csize[end] = 1;
      ++comps;
      const int32_t* nb = &adj[end * uint64_t(stride)];
      for (int f = 0; f < stride; ++f) {
        const int32_t w = nb[f];
        if (w < 0 || uint64_t(w) < start || uint64_t(w) >= end) continue;
        int32_t ra = find(e), rb = find(w);
        if (ra == rb) continue;
        if (csize[uint64_t(ra)] < csize[uint64_t(rb)]) std::swap(ra, rb);
        parent[uint64_t(rb)] = ra;
        csize[uint64_t(ra)] += csize[uint64_t(rb)];
        --comps;
      }
      out.histogram[size_t(comps)] += 1;
      out.length_sum[size_t(comps)] += end - start + 1;
      if (comps > out.max_components) {
        out.max_components = comps;
        out.witness_start = start;
        out.witness_end = end;
      }
    }
  }
  out.fraction_connected = double(out.histogram[1]) / double(out.total_segments);
  return out;
}

/// Theorem bound for the class: cubical classes split into at most two
/// pieces; triangles into 2(L-1) for L >= 2; tetrahedra into 2L+1.
inline int component_bound(ElementClass cls, int level) {
  if (!is_simplex(cls)) return 2;
  if (cls == ElementClass::Triangle) return level >= 2 ? 2 * (level - 1) : 2;
  return 2 * level + 1;
}

struct BoundCheck {
  int max_observed = 0;
  int bound = 0;
  uint64_t witness_start = 0, witness_end = 0;
};

/// Enumerate and assert the theorem bound; a violation signals an
/// implementation bug and fails hard.
inline BoundCheck bound_check(ElementClass cls, int level, uint64_t budget = default_budget) {
  const SegmentStats stats = enumerate_all(cls, level, budget);
  BoundCheck out{stats.max_components, component_bound(cls, level), stats.witness_start,
                 stats.witness_end};
  if (out.max_observed > out.bound)
    detail::fail_domain("bound_check: observed " + std::to_string(out.max_observed) +
                        " components, bound " + std::to_string(out.bound));
  return out;
}

inline void write_csv(std::ostream& os, const SegmentStats& s) {
  os << "class,level,components,segment_count,avg_length,fraction\n";
  for (int c = 1; c < int(s.histogram.size()); ++c) {
    if (s.histogram[size_t(c)] == 0) continue;
    os << class_name(s.cls) << ',' << s.level << ',' << c << ',' << s.histogram[size_t(c)] << ','
       << s.avg_length(c) << ',' << s.fraction(c) << '\n';
  }
}

}  // namespace t8x::segments
