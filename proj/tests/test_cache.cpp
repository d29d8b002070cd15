#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <sstream>
#include <vector>

#include "srttt/cache.hpp"
#include "srttt/rng.hpp"

using namespace srttt;

namespace {

CacheEntry make_entry(double priority, int pos, int n_heads = 1, int d_head = 2) {
  CacheEntry e;
  e.key.assign(static_cast<size_t>(n_heads) * d_head, static_cast<double>(pos));
  e.value.assign(static_cast<size_t>(n_heads) * d_head, priority);
  e.priority = priority;
  e.source_position = pos;
  return e;
}

// O(n*C) reference simulator of the stated policy: resident set as a plain
// list; insert appends under capacity, otherwise compares against the
// minimum-priority resident (oldest first on ties) and displaces it iff the
// newcomer's priority is >= that minimum.
struct SimEntry {
  double priority;
  long seq;
  int pos;
};

std::vector<SimEntry> simulate(const std::vector<double>& priorities, int capacity) {
  std::vector<SimEntry> resident;
  long seq = 0;
  for (size_t i = 0; i < priorities.size(); ++i) {
    SimEntry e{priorities[i], -1, static_cast<int>(i)};
    if (static_cast<int>(resident.size()) < capacity) {
      e.seq = seq++;
      resident.push_back(e);
      continue;
    }
    size_t victim = 0;
    for (size_t j = 1; j < resident.size(); ++j) {
      if (resident[j].priority < resident[victim].priority ||
          (resident[j].priority == resident[victim].priority &&
           resident[j].seq < resident[victim].seq)) {
        victim = j;
      }
    }
    if (e.priority >= resident[victim].priority) {
      resident.erase(resident.begin() + static_cast<long>(victim));
      e.seq = seq++;
      resident.push_back(e);
    }
  }
  std::sort(resident.begin(), resident.end(),
            [](const SimEntry& a, const SimEntry& b) { return a.seq < b.seq; });
  return resident;
}

}  // namespace

TEST_CASE("insert under capacity keeps everything") {
  ResidualCache c(2, 1, 2);
  CHECK_FALSE(c.insert(make_entry(1.0, 0)).has_value());
  CHECK_FALSE(c.insert(make_entry(2.0, 1)).has_value());
  CHECK(c.size() == 2);
}

TEST_CASE("eviction rule: displace the minimum, reject weaker newcomers") {
  ResidualCache c(2, 1, 2);
  c.insert(make_entry(1.0, 0));
  c.insert(make_entry(2.0, 1));

  auto evicted = c.insert(make_entry(1.5, 2));
  REQUIRE(evicted.has_value());
  CHECK(evicted->priority == 1.0);
  CHECK(c.size() == 2);

  auto rejected = c.insert(make_entry(0.5, 3));
  REQUIRE(rejected.has_value());
  CHECK(rejected->priority == 0.5);
  CHECK(rejected->source_position == 3);
  auto snap = c.snapshot();
  CHECK(snap->priorities == std::vector<double>{2.0, 1.5});
}

TEST_CASE("equal-priority saturation degenerates to FIFO") {
  const int capacity = 10;
  ResidualCache c(capacity, 1, 2);
  for (int i = 0; i < 100; ++i) {
    auto out = c.insert(make_entry(3.0, i));
    if (i >= capacity) {
      REQUIRE(out.has_value());
      // evicted entry is always the oldest resident
      CHECK(out->source_position == i - capacity);
    }
  }
  auto snap = c.snapshot();
  for (int i = 0; i < capacity; ++i) CHECK(snap->positions[i] == 90 + i);
}

TEST_CASE("snapshot: order, emptiness, identity without mutation") {
  ResidualCache c(8, 2, 4);
  CHECK(c.snapshot()->size() == 0);
  c.insert(make_entry(1.0, 5, 2, 4));
  c.insert(make_entry(0.5, 9, 2, 4));
  c.insert(make_entry(2.5, 11, 2, 4));
  auto s1 = c.snapshot();
  CHECK(s1->positions == std::vector<int>{5, 9, 11});
  auto s2 = c.snapshot();
  CHECK(s1.get() == s2.get());  // cached object, no intervening ops
  c.insert(make_entry(1.0, 12, 2, 4));
  CHECK(c.snapshot().get() != s1.get());
  CHECK(s1->size() == 3);  // old snapshot unchanged
}

TEST_CASE("reset empties entries but preserves the insertion counter") {
  ResidualCache c(4, 1, 2);
  c.insert(make_entry(1.0, 0));
  c.insert(make_entry(1.0, 1));
  const auto seq_before = c.next_insertion_seq();
  c.reset();
  CHECK(c.size() == 0);
  CHECK(c.snapshot()->size() == 0);
  CHECK(c.next_insertion_seq() == seq_before);
  c.insert(make_entry(7.0, 2));
  CHECK(c.snapshot()->insertion_seqs[0] == seq_before);
}

TEST_CASE("no cross-sample leakage after reset") {
  ResidualCache c(16, 1, 2);
  for (int i = 0; i < 10; ++i) c.insert(make_entry(5.0, 100 + i));
  c.reset();
  for (int i = 0; i < 3; ++i) c.insert(make_entry(5.0, 200 + i));
  auto snap = c.snapshot();
  for (int pos : snap->positions) CHECK(pos >= 200);
}

TEST_CASE("random op sequences match the brute-force simulator") {
  auto rs = rng::derive(55, "cache-oracle");
  for (int rep = 0; rep < 20; ++rep) {
    const int capacity = 1 + static_cast<int>(rs.next_u64() % 12);
    const int n = 500;
    std::vector<double> priorities(n);
    for (double& p : priorities) {
      // coarse priorities make ties common
      p = static_cast<double>(rs.next_u64() % 5);
    }
    ResidualCache c(capacity, 1, 2);
    for (int i = 0; i < n; ++i) {
      c.insert(make_entry(priorities[i], i));
      CHECK(c.size() <= capacity);
    }
    auto expected = simulate(priorities, capacity);
    auto snap = c.snapshot();
    REQUIRE(snap->size() == static_cast<int>(expected.size()));
    for (size_t i = 0; i < expected.size(); ++i) {
      CHECK(snap->positions[i] == expected[i].pos);
      CHECK(snap->priorities[i] == expected[i].priority);
      CHECK(snap->insertion_seqs[i] == expected[i].seq);
    }
  }
}

TEST_CASE("10k-op property: capacity bound and oracle equality") {
  auto rs = rng::derive(56, "cache-10k");
  const int capacity = 32;
  const int n = 10000;
  std::vector<double> priorities(n);
  for (double& p : priorities) p = std::abs(rs.next_normal());
  ResidualCache c(capacity, 1, 2);
  for (int i = 0; i < n; ++i) {
    c.insert(make_entry(priorities[i], i));
    REQUIRE(c.size() <= capacity);
  }
  auto expected = simulate(priorities, capacity);
  auto snap = c.snapshot();
  REQUIRE(snap->size() == static_cast<int>(expected.size()));
  for (size_t i = 0; i < expected.size(); ++i) {
    CHECK(snap->positions[i] == expected[i].pos);
  }
}

TEST_CASE("dump lists seq, position, priority") {
  ResidualCache c(4, 1, 2);
  c.insert(make_entry(1.5, 42));
  std::ostringstream os;
  c.dump(os);
  const std::string out = os.str();
  CHECK(out.find("42") != std::string::npos);
  CHECK(out.find("1.5") != std::string::npos);
}
