#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

namespace srttt {

// Fixed-capacity store of routed tokens' post-RoPE keys/values. Priority is
// the token's reconstruction loss at routing time, frozen. Under capacity
// pressure the incoming entry competes against the current minimum-priority
// entry (ties broken by evicting the oldest insertion); with uniformly equal
// priorities the policy degenerates to FIFO. Entries are detached values:
// nothing here participates in the gradient tape.

struct CacheEntry {
  std::vector<double> key;     // n_heads * d_head, post-RoPE
  std::vector<double> value;   // n_heads * d_head
  double priority = 0.0;
  int64_t insertion_seq = -1;  // assigned by the cache on accept
  int source_position = 0;
};

struct CacheSnapshot {
  int n_heads = 0;
  int d_head = 0;
  // flattened [entry][head][dim], in insertion order
  std::vector<double> keys;
  std::vector<double> values;
  std::vector<int> positions;
  std::vector<double> priorities;
  std::vector<int64_t> insertion_seqs;

  int size() const { return static_cast<int>(positions.size()); }
  const double* key_at(int entry, int head) const {
    return keys.data() + (static_cast<size_t>(entry) * n_heads + head) * d_head;
  }
  const double* value_at(int entry, int head) const {
    return values.data() + (static_cast<size_t>(entry) * n_heads + head) * d_head;
  }
};

class ResidualCache {
 public:
  ResidualCache(int capacity, int n_heads, int d_head);

  // Returns the displaced entry: the evicted resident when the newcomer wins,
  // or the newcomer itself when it loses against the resident minimum.
  std::optional<CacheEntry> insert(CacheEntry entry);

  // Immutable view in insertion order. Cached between mutations, so repeated
  // snapshots without intervening ops are the same object.
  std::shared_ptr<const CacheSnapshot> snapshot() const;

  // Empties the cache; the insertion counter is preserved.
  void reset();

  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  int64_t next_insertion_seq() const { return next_seq_; }
  const std::vector<CacheEntry>& entries() const { return entries_; }

  // Human-readable listing (insertion_seq, source_position, priority).
  void dump(std::ostream& os) const;

 private:
  int capacity_;
  int n_heads_;
  int d_head_;
  int64_t next_seq_ = 0;
  std::vector<CacheEntry> entries_;  // insertion order
  mutable std::shared_ptr<const CacheSnapshot> snapshot_;
};

}  // namespace srttt
