// Deterministic virtual-rank runtime: P logical ranks with per-rank state,
// explicit mailboxes and phase-based execution. Messages sent during one
// phase are delivered as the inbox of the next phase; execution of a phase
// is bitwise deterministic and independent of the rank execution order as
// long as phase functions only touch their own state and inbox.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "t8x/core.hpp"

namespace t8x::vranks {

struct Message {
  int sender = 0;
  int receiver = 0;
  uint32_t tag = 0;
  std::vector<std::byte> bytes;
};

struct TraceRow {
  uint64_t phase = 0;
  int sender = 0;
  int receiver = 0;
  uint32_t tag = 0;
  uint64_t byte_count = 0;
};

/// Byte-level serialization for message payloads.
class ByteWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const size_t n = bytes_.size();
    bytes_.resize(n + sizeof(T));
    std::memcpy(bytes_.data() + n, &v, sizeof(T));
  }
  void put_bytes(std::span<const std::byte> b) {
    put<uint64_t>(b.size());
    bytes_.insert(bytes_.end(), b.begin(), b.end());
  }
  std::vector<std::byte> take() { return std::move(bytes_); }

 private:
  std::vector<std::byte> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> b) : bytes_(b) {}
  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > bytes_.size()) detail::fail_range("ByteReader: underrun");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::vector<std::byte> get_bytes() {
    const uint64_t n = get<uint64_t>();
    if (pos_ + n > bytes_.size()) detail::fail_range("ByteReader: underrun");
    std::vector<std::byte> out(bytes_.begin() + long(pos_), bytes_.begin() + long(pos_ + n));
    pos_ += n;
    return out;
  }
  bool empty() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::byte> bytes_;
  size_t pos_ = 0;
};

enum class ExecOrder { Ascending, Descending };

template <class State>
class World {
 public:
  explicit World(int nranks) : states_(size_t(nranks)), inboxes_(size_t(nranks)) {}
  explicit World(std::vector<State> init) : states_(std::move(init)), inboxes_(states_.size()) {}

  int nranks() const { return int(states_.size()); }
  State& state(int p) { return states_[size_t(p)]; }
  const State& state(int p) const { return states_[size_t(p)]; }
  std::vector<State>& states() { return states_; }
  const std::vector<State>& states() const { return states_; }

  /// Message interface handed to a phase function.
  class Courier {
   public:
    int rank() const { return rank_; }
    int nranks() const { return world_->nranks(); }
    void send(int to, uint32_t tag, std::vector<std::byte> payload) {
      if (to < 0 || to >= world_->nranks()) detail::fail_arg("vranks: receiver out of range");
      world_->trace_.push_back({world_->phase_, rank_, to, tag, payload.size()});
      world_->pending_.push_back({rank_, to, tag, std::move(payload)});
    }
    /// Messages delivered to this rank, ordered by sender then send order.
    std::span<const Message> inbox() const { return world_->inboxes_[size_t(rank_)]; }

   private:
    friend class World;
    Courier(World* w, int r) : world_(w), rank_(r) {}
    World* world_;
    int rank_;
  };

  /// Execute one phase: every rank runs `step(rank_state, courier)` against
  /// the previous phase's outboxes, then the new messages are delivered.
  template <class Step>
  void run_phase(Step&& step, ExecOrder order = ExecOrder::Ascending) {
    pending_.clear();
    if (order == ExecOrder::Ascending) {
      for (int p = 0; p < nranks(); ++p) {
        Courier c(this, p);
        step(states_[size_t(p)], c);
      }
    } else {
      for (int p = nranks() - 1; p >= 0; --p) {
        Courier c(this, p);
        step(states_[size_t(p)], c);
      }
    }
    deliver();
    ++phase_;
  }

  uint64_t phase() const { return phase_; }
  const std::vector<TraceRow>& trace() const { return trace_; }

  void dump_trace_csv(std::ostream& os) const {
    os << "phase,sender,receiver,tag,bytes\n";
    for (const auto& r : trace_)
      os << r.phase << ',' << r.sender << ',' << r.receiver << ',' << r.tag << ','
         << r.byte_count << '\n';
  }

 private:
  void deliver() {
    for (auto& ib : inboxes_) ib.clear();
    // Stable by construction: pending_ holds ascending send order per sender;
    // a stable sort by (receiver, sender) yields the canonical inbox order.
    std::stable_sort(pending_.begin(), pending_.end(), [](const Message& a, const Message& b) {
      return a.sender < b.sender;
    });
    for (auto& m : pending_) inboxes_[size_t(m.receiver)].push_back(std::move(m));
    pending_.clear();
  }

  std::vector<State> states_;
  std::vector<std::vector<Message>> inboxes_;
  std::vector<Message> pending_;
  std::vector<TraceRow> trace_;
  uint64_t phase_ = 0;
};

/// Logical AND of one flag per rank, delivered to every rank through the
/// mailbox (the virtual counterpart of an allreduce).
template <class State>
inline bool all_reduce_and(World<State>& world, const std::vector<uint8_t>& flags) {
  if ((int)flags.size() != world.nranks()) detail::fail_arg("all_reduce_and: one flag per rank");
  world.run_phase([&](State&, typename World<State>::Courier& c) {
    ByteWriter w;
    w.put<uint8_t>(flags[size_t(c.rank())]);
    const std::vector<std::byte> payload = w.take();
    for (int q = 0; q < c.nranks(); ++q) c.send(q, /*tag=*/0xA11D, payload);
  });
  std::vector<uint8_t> results(size_t(world.nranks()), 1);
  world.run_phase([&](State&, typename World<State>::Courier& c) {
    uint8_t acc = 1;
    for (const auto& m : c.inbox()) {
      ByteReader r(m.bytes);
      acc = uint8_t(acc & r.get<uint8_t>());
    }
    results[size_t(c.rank())] = acc;
  });
  for (uint8_t r : results)
    if (r != results[0]) detail::fail_domain("all_reduce_and: ranks disagree");
  return results[0] != 0;
}

}  // namespace t8x::vranks
