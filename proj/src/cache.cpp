#include "srttt/cache.hpp"

#include <ostream>
#include <stdexcept>

namespace srttt {

ResidualCache::ResidualCache(int capacity, int n_heads, int d_head)
    : capacity_(capacity), n_heads_(n_heads), d_head_(d_head) {
  if (capacity <= 0) throw std::runtime_error("cache: capacity must be positive");
  entries_.reserve(capacity);
}

std::optional<CacheEntry> ResidualCache::insert(CacheEntry entry) {
  const size_t kv_len = static_cast<size_t>(n_heads_) * d_head_;
  if (entry.key.size() != kv_len || entry.value.size() != kv_len) {
    throw std::runtime_error("cache: entry key/value length mismatch");
  }
  if (entry.priority < 0.0) throw std::runtime_error("cache: negative priority");
  snapshot_.reset();

  if (static_cast<int>(entries_.size()) < capacity_) {
    entry.insertion_seq = next_seq_++;
    entries_.push_back(std::move(entry));
    return std::nullopt;
  }

  // victim = minimum priority, ties broken by oldest insertion
  size_t victim = 0;
  for (size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i].priority < entries_[victim].priority) victim = i;
  }
  if (entry.priority < entries_[victim].priority) {
    return entry;  // newcomer loses
  }
  CacheEntry evicted = std::move(entries_[victim]);
  entries_.erase(entries_.begin() + static_cast<long>(victim));
  entry.insertion_seq = next_seq_++;
  entries_.push_back(std::move(entry));
  return evicted;
}

std::shared_ptr<const CacheSnapshot> ResidualCache::snapshot() const {
  if (snapshot_) return snapshot_;
  auto snap = std::make_shared<CacheSnapshot>();
  snap->n_heads = n_heads_;
  snap->d_head = d_head_;
  const size_t kv_len = static_cast<size_t>(n_heads_) * d_head_;
  snap->keys.reserve(entries_.size() * kv_len);
  snap->values.reserve(entries_.size() * kv_len);
  for (const CacheEntry& e : entries_) {
    snap->keys.insert(snap->keys.end(), e.key.begin(), e.key.end());
    snap->values.insert(snap->values.end(), e.value.begin(), e.value.end());
    snap->positions.push_back(e.source_position);
    snap->priorities.push_back(e.priority);
    snap->insertion_seqs.push_back(e.insertion_seq);
  }
  snapshot_ = snap;
  return snapshot_;
}

void ResidualCache::reset() {
  entries_.clear();
  snapshot_.reset();
}

void ResidualCache::dump(std::ostream& os) const {
  os << "seq\tpos\tpriority\n";
  for (const CacheEntry& e : entries_) {
    os << e.insertion_seq << "\t" << e.source_position << "\t" << e.priority << "\n";
  }
}

}  // namespace srttt
