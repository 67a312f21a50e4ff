#pragma once

// Word tokenization and sliding sub-phrase windows. A hashing encoder
// dilutes a short concept name inside a long prompt, so similarity is taken
// as the max over every contiguous run of 1..kMaxWindowWords words as well
// as over the whole prompt.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gog/embed.hpp"

namespace gog {

inline constexpr std::size_t kMaxWindowWords = 5;

struct Word {
  std::size_t raw_begin = 0;  // span of the whitespace-delimited token
  std::size_t raw_end = 0;
  std::string text;           // token with edge punctuation stripped
};

struct Window {
  std::size_t first_word = 0;
  std::size_t word_count = 0;
  std::string text;
};

namespace detail {

inline bool is_edge_punct(unsigned char c) {
  switch (c) {
    case '.': case ',': case ';': case ':': case '!': case '?': case '"':
    case '(': case ')': case '[': case ']': case '{': case '}':
      return true;
    default:
      return false;
  }
}

}  // namespace detail

inline std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (i == text.size()) break;
    const std::size_t begin = i;
    while (i < text.size() && !detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t lo = begin;
    std::size_t hi = i;
    while (lo < hi && detail::is_edge_punct(static_cast<unsigned char>(text[lo]))) ++lo;
    while (hi > lo && detail::is_edge_punct(static_cast<unsigned char>(text[hi - 1]))) --hi;
    if (lo == hi) continue;
    words.push_back(Word{begin, i, std::string(text.substr(lo, hi - lo))});
  }
  return words;
}

inline std::vector<Window> word_windows(std::span<const Word> words,
                                        std::size_t max_words = kMaxWindowWords) {
  std::vector<Window> windows;
  for (std::size_t start = 0; start < words.size(); ++start) {
    std::string text;
    for (std::size_t len = 1; len <= max_words && start + len <= words.size(); ++len) {
      if (len > 1) text.push_back(' ');
      text += words[start + len - 1].text;
      windows.push_back(Window{start, len, text});
    }
  }
  return windows;
}

// Max cosine between `text` (whole, and each of its windows) and any of
// `targets`.
inline double windowed_similarity(std::string_view text, std::span<const Embedding> targets,
                                  const EncoderConfig& cfg) {
  double best = 0.0;
  bool any = false;
  auto consider = [&](const Embedding& probe) {
    for (const Embedding& target : targets) {
      const double s = cosine(probe, target);
      if (!any || s > best) best = s;
      any = true;
    }
  };
  consider(encode(text, cfg));
  const auto words = split_words(text);
  for (const Window& w : word_windows(words)) consider(encode(w.text, cfg));
  return best;
}

}  // namespace gog
