#include "srttt/data.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include "srttt/rng.hpp"

namespace srttt {

namespace {

const char* kNames[] = {"Tom", "Mia", "Sam", "Ben", "Ana", "Leo",
                        "Eva", "Max", "Sue", "Kim", "Ned", "Ada"};
const char* kObjects[] = {"ball", "book", "kite", "cake", "frog", "star",
                          "boat", "drum", "shell", "rope", "lamp", "leaf"};
const char* kVerbs[] = {"found", "liked", "took", "saw",    "made",
                        "lost",  "held",  "drew", "washed", "carried"};
const char* kPlaces[] = {"park", "house", "garden", "river", "school", "yard", "barn", "shop"};

template <size_t N>
const char* pick(rng::Stream& rs, const char* (&arr)[N]) {
  return arr[rs.next_u64() % N];
}

std::string make_sentence(rng::Stream& rs) {
  std::string s;
  switch (rs.next_u64() % 5) {
    case 0:
      s = std::string(pick(rs, kNames)) + " " + pick(rs, kVerbs) + " the " + pick(rs, kObjects) + ". ";
      break;
    case 1:
      s = std::string(pick(rs, kNames)) + " went to the " + pick(rs, kPlaces) + ". ";
      break;
    case 2:
      s = std::string("The ") + pick(rs, kObjects) + " was in the " + pick(rs, kPlaces) + ". ";
      break;
    case 3:
      s = std::string(pick(rs, kNames)) + " and " + pick(rs, kNames) + " played with the " +
          pick(rs, kObjects) + ". ";
      break;
    default:
      s = std::string(pick(rs, kNames)) + " said the " + pick(rs, kObjects) + " was fun. ";
      break;
  }
  return s;
}

// positions where a sentence starts: 0 plus every index right after ". "
std::vector<int> sentence_starts(const std::string& text) {
  std::vector<int> starts = {0};
  for (size_t i = 0; i + 2 < text.size(); ++i) {
    if (text[i] == '.' && text[i + 1] == ' ') starts.push_back(static_cast<int>(i) + 2);
  }
  return starts;
}

}  // namespace

std::string needle_query_prefix() { return "The magic key is "; }

std::string needle_sentence(const std::string& code) {
  return "The magic key is " + code + ".";
}

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> tokens;
  tokens.reserve(text.size());
  for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
  return tokens;
}

std::string detokenize(std::span<const int> tokens) {
  std::string text;
  text.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t >= kVocabSize) {
      throw std::runtime_error("detokenize: token " + std::to_string(t) + " outside byte range");
    }
    text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return text;
}

std::string gen_corpus(uint64_t seed, size_t n_bytes) {
  if (n_bytes == 0) throw std::runtime_error("gen_corpus: n_bytes must be positive");
  auto rs = rng::derive(seed, "corpus");
  std::string text;
  text.reserve(n_bytes + 48);
  while (text.size() < n_bytes) text += make_sentence(rs);
  text.resize(n_bytes);
  return text;
}

std::string gen_needle(uint64_t seed) {
  static const char alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  auto rs = rng::derive(seed, "needle");
  std::string code(kNeedleCodeLen, '?');
  for (char& c : code) c = alphabet[rs.next_u64() % 36];
  return code;
}

NiahSample inject(const std::string& background, const std::string& code, double depth,
                  int seq_len) {
  if (depth < 0.0 || depth > 1.0) throw std::runtime_error("inject: depth outside [0,1]");
  const std::string needle = needle_sentence(code);       // 26 bytes for an 8-char code
  const std::string query = needle_query_prefix();        // 17 bytes
  const int needle_len = static_cast<int>(needle.size());
  const int tail_len = static_cast<int>(query.size()) + kNeedleCodeLen;  // 25
  if (seq_len < 2 * kReservedTail) {
    throw std::runtime_error("inject: seq_len " + std::to_string(seq_len) +
                             " too small; need at least " + std::to_string(2 * kReservedTail));
  }
  const int body_len = seq_len - tail_len;                // background + needle
  if (static_cast<int>(background.size()) < body_len) {
    throw std::runtime_error("inject: background shorter than required body");
  }
  if (background.find(code) != std::string::npos) {
    throw std::runtime_error("inject: code collides with background text");
  }

  const int raw_offset =
      static_cast<int>(depth * static_cast<double>(seq_len - kReservedTail));
  const auto starts = sentence_starts(background);
  int offset = 0;
  for (int s : starts) {
    if (s <= raw_offset) offset = s;
    else break;
  }

  std::string text;
  text.reserve(seq_len);
  text.append(background, 0, static_cast<size_t>(offset));
  text += needle;
  text += ' ';
  const int fill = body_len - static_cast<int>(text.size());
  text.append(background, static_cast<size_t>(offset), static_cast<size_t>(fill));
  text += query;
  text += code;

  NiahSample s;
  s.tokens = tokenize(text);
  s.needle_code = code;
  s.depth = depth;
  s.needle_begin = offset;
  s.needle_end = offset + needle_len;
  s.query_begin = seq_len - tail_len;
  s.query_end = seq_len - kNeedleCodeLen;
  s.answer_begin = seq_len - kNeedleCodeLen;
  s.answer_end = seq_len;
  return s;
}

NiahSample make_niah_sample(uint64_t seed, double depth, int seq_len) {
  const std::string background = gen_corpus(rng::mix(seed, "niah-bg"), static_cast<size_t>(seq_len));
  const std::string code = gen_needle(rng::mix(seed, "niah-code"));
  return inject(background, code, depth, seq_len);
}

std::string load_text_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open text corpus: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::replace(text.begin(), text.end(), '\n', ' ');
  std::replace(text.begin(), text.end(), '\r', ' ');
  if (text.empty()) throw std::runtime_error("text corpus is empty: " + path);
  return text;
}

void dump_sample(std::ostream& os, const NiahSample& s, uint64_t seed) {
  os << "seed=" << seed << " depth=" << s.depth << " code=" << s.needle_code << " needle=["
     << s.needle_begin << "," << s.needle_end << ") query=[" << s.query_begin << ","
     << s.query_end << ") answer=[" << s.answer_begin << "," << s.answer_end << ")\n";
}

}  // namespace srttt
