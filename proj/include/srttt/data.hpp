#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace srttt {

inline constexpr int kVocabSize = 256;     // byte-level tokenizer
inline constexpr int kNeedleCodeLen = 8;
inline constexpr int kReservedTail = 64;   // query+answer live inside this tail

// "The magic key is "
std::string needle_query_prefix();
// "The magic key is {CODE}."
std::string needle_sentence(const std::string& code);

std::vector<int> tokenize(std::string_view text);
std::string detokenize(std::span<const int> tokens);

// Deterministic low-entropy template-grammar story text, exactly n_bytes long.
std::string gen_corpus(uint64_t seed, size_t n_bytes);

// 8 chars uniform over [A-Z0-9].
std::string gen_needle(uint64_t seed);

struct NiahSample {
  std::vector<int> tokens;        // full sequence incl. ground-truth answer
  std::string needle_code;
  double depth = 0.0;
  int needle_begin = 0, needle_end = 0;   // [begin, end) token spans
  int query_begin = 0, query_end = 0;
  int answer_begin = 0, answer_end = 0;
};

// Splices the needle sentence into background text at the sentence boundary
// at or below floor(depth * (seq_len - kReservedTail)), then appends the
// query prefix and the ground-truth code as the final tokens. Throws when
// seq_len cannot accommodate the layout.
NiahSample inject(const std::string& background, const std::string& code, double depth,
                  int seq_len);

// Deterministic sample from (seed, depth, seq_len) with generated background.
NiahSample make_niah_sample(uint64_t seed, double depth, int seq_len);

// Optional plain-text background source (UTF-8, newline-delimited); newlines
// become spaces so sentence splicing still applies.
std::string load_text_corpus(const std::string& path);

// Line record: seed, depth, code, spans.
void dump_sample(std::ostream& os, const NiahSample& s, uint64_t seed);

}  // namespace srttt
