#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "srttt/data.hpp"
#include "srttt/rng.hpp"

using namespace srttt;

namespace {

double empirical_byte_entropy(const std::string& text) {
  std::map<char, size_t> counts;
  for (char c : text) counts[c]++;
  double h = 0.0;
  for (const auto& [c, n] : counts) {
    const double p = static_cast<double>(n) / static_cast<double>(text.size());
    h -= p * std::log2(p);
  }
  return h;
}

size_t count_occurrences(const std::string& hay, const std::string& needle) {
  size_t n = 0, pos = 0;
  while ((pos = hay.find(needle, pos)) != std::string::npos) {
    ++n;
    ++pos;
  }
  return n;
}

}  // namespace

TEST_CASE("tokenize: bytes, empty, round trip") {
  CHECK(tokenize("").empty());
  auto ab = tokenize("AB");
  CHECK(ab == std::vector<int>{65, 66});

  auto rs = rng::derive(4, "roundtrip");
  for (int rep = 0; rep < 1000; ++rep) {
    std::string s;
    const size_t len = rs.next_u64() % 64;
    for (size_t i = 0; i < len; ++i) s.push_back(static_cast<char>(rs.next_u64() % 256));
    CHECK(detokenize(tokenize(s)) == s);
  }
  CHECK_THROWS(detokenize(std::vector<int>{300}));
}

TEST_CASE("gen_corpus: deterministic, seed-sensitive, exact length") {
  CHECK(gen_corpus(7, 500) == gen_corpus(7, 500));
  CHECK(gen_corpus(7, 512).size() == 512);

  std::set<std::string> seen;
  for (uint64_t s = 0; s < 100; ++s) seen.insert(gen_corpus(s, 300));
  CHECK(seen.size() == 100);
}

TEST_CASE("gen_corpus: lower per-byte entropy than uniform alphanumerics") {
  const std::string text = gen_corpus(3, 100000);
  auto rs = rng::derive(3, "alnum");
  static const char alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::string uniform(100000, '?');
  for (char& c : uniform) c = alphabet[rs.next_u64() % 36];
  CHECK(empirical_byte_entropy(text) < empirical_byte_entropy(uniform));
}

TEST_CASE("gen_needle: length, alphabet, no collisions over 1000 seeds") {
  std::set<std::string> seen;
  for (uint64_t s = 0; s < 1000; ++s) {
    const std::string code = gen_needle(s);
    CHECK(code.size() == 8);
    for (char c : code) {
      const bool ok = (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
      CHECK(ok);
    }
    seen.insert(code);
  }
  CHECK(seen.size() == 1000);
}

TEST_CASE("inject: depth boundaries") {
  const int seq_len = 256;
  auto s0 = make_niah_sample(11, 0.0, seq_len);
  CHECK(s0.needle_begin == 0);  // first sentence

  auto s1 = make_niah_sample(11, 1.0, seq_len);
  // maximal aligned placement: no later sentence boundary fits the mapping
  const std::string bg = gen_corpus(rng::mix(11, "niah-bg"), seq_len);
  int max_start = 0;
  for (size_t i = 0; i + 2 < bg.size(); ++i) {
    if (bg[i] == '.' && bg[i + 1] == ' ' &&
        static_cast<int>(i) + 2 <= seq_len - kReservedTail) {
      max_start = static_cast<int>(i) + 2;
    }
  }
  CHECK(s1.needle_begin == max_start);
  CHECK(s1.needle_begin > s0.needle_begin);
  // needle sits inside the final stretch just before the query
  CHECK(s1.needle_end > seq_len - kReservedTail - 40);
  CHECK(s1.needle_end <= s1.query_begin);
}

TEST_CASE("inject: seq_len too small errors") {
  CHECK_THROWS(make_niah_sample(1, 0.5, 64));
}

TEST_CASE("sample invariants over 500 random draws") {
  auto rs = rng::derive(17, "samples");
  double prev_begin = -1;
  (void)prev_begin;
  for (int rep = 0; rep < 500; ++rep) {
    const uint64_t seed = rs.next_u64();
    const double depth = rs.next_double();
    const int seq_len = 160 + static_cast<int>(rs.next_u64() % 256);
    auto s = make_niah_sample(seed, depth, seq_len);

    CHECK(static_cast<int>(s.tokens.size()) == seq_len);
    CHECK(s.query_begin < s.answer_begin);
    CHECK(s.answer_end - s.answer_begin == 8);
    CHECK(s.answer_end == seq_len);

    const std::string text = detokenize(s.tokens);
    const std::string span = text.substr(s.needle_begin, s.needle_end - s.needle_begin);
    CHECK(count_occurrences(span, s.needle_code) == 1);
    // exactly once in the context before the query; the answer repeats it
    CHECK(count_occurrences(text.substr(0, s.query_begin), s.needle_code) == 1);
    CHECK(text.substr(s.query_begin, 17) == needle_query_prefix());
    CHECK(text.substr(s.answer_begin) == s.needle_code);

    const std::string bg = gen_corpus(rng::mix(seed, "niah-bg"), seq_len);
    CHECK(count_occurrences(bg, s.needle_code) == 0);
  }
}

TEST_CASE("depth monotonicity at fixed seed and length") {
  const int seq_len = 320;
  int prev = -1;
  for (double d : {0.0, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0}) {
    auto s = make_niah_sample(23, d, seq_len);
    CHECK(s.needle_begin >= prev);
    prev = s.needle_begin;
  }
}

TEST_CASE("determinism: (seed, depth, seq_len) fully determines the sample") {
  auto a = make_niah_sample(99, 0.37, 256);
  auto b = make_niah_sample(99, 0.37, 256);
  CHECK(a.tokens == b.tokens);
  CHECK(a.needle_code == b.needle_code);
  CHECK(a.needle_begin == b.needle_begin);
}

TEST_CASE("sample dump line contains the schema fields") {
  auto s = make_niah_sample(5, 0.5, 256);
  std::ostringstream os;
  dump_sample(os, s, 5);
  const std::string line = os.str();
  CHECK(line.find("seed=5") != std::string::npos);
  CHECK(line.find("depth=0.5") != std::string::npos);
  CHECK(line.find(s.needle_code) != std::string::npos);
}
