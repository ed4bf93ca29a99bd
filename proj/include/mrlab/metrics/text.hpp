// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace mrlab::metrics {

inline constexpr std::string_view kChunkSeparator = ",";
inline constexpr std::string_view kEmptyFiller = "<none>";

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(std::move(w));
  return words;
}

inline std::string join_words(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (!out.empty()) out += ' ';
    out += words[i];
  }
  return out;
}

/// A comma-delimited clause of a caption, as a word range.
struct Chunk {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::string> words;
};

/// Splits on "," and drops filler words and empty clauses.
inline std::vector<Chunk> split_chunks(const std::vector<std::string>& words) {
  std::vector<Chunk> chunks;
  Chunk cur;
  auto flush = [&](std::size_t at) {
    if (!cur.words.empty()) {
      cur.end = at;
      chunks.push_back(std::move(cur));
    }
    cur = Chunk{};
  };
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == kChunkSeparator) {
      flush(i);
      continue;
    }
    if (words[i] == kEmptyFiller) continue;
    if (cur.words.empty()) cur.begin = i;
    cur.words.push_back(words[i]);
  }
  flush(words.size());
  return chunks;
}

}  // namespace mrlab::metrics
