// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mrlab/common/errors.hpp"

namespace mrlab::tinylm {

using TokenSequence = std::vector<int>;

/// Dense token-id <-> symbol table. Ids 0, 1, 2 are PAD, BOS, EOS.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// `symbols` are appended after the reserved ids.
  explicit Vocab(const std::vector<std::string>& symbols) {
    add("<pad>");
    add("<bos>");
    add("<eos>");
    for (const auto& s : symbols) add(s);
  }

  int size() const { return static_cast<int>(symbols_.size()); }

  const std::string& symbol(int id) const {
    if (id < 0 || id >= size()) throw ArgumentError("token id out of range: " + std::to_string(id));
    return symbols_[static_cast<std::size_t>(id)];
  }

  int id(std::string_view symbol) const {
    auto it = ids_.find(std::string(symbol));
    if (it == ids_.end()) throw ArgumentError("unknown symbol: " + std::string(symbol));
    return it->second;
  }

  bool contains(std::string_view symbol) const { return ids_.count(std::string(symbol)) != 0; }

  bool is_control(int id) const { return id == kPad || id == kBos || id == kEos || control_.count(id); }

  /// Marks an extra id as non-textual (skipped by `to_text`).
  void mark_control(int id) { control_.emplace(id, true); }

  /// Space-joined symbols, control tokens dropped.
  std::string to_text(const TokenSequence& tokens) const {
    std::string out;
    for (int t : tokens) {
      if (is_control(t)) continue;
      if (!out.empty()) out += ' ';
      out += symbol(t);
    }
    return out;
  }

  TokenSequence from_text(std::string_view text) const {
    TokenSequence tokens;
    std::istringstream in{std::string(text)};
    std::string word;
    while (in >> word) tokens.push_back(id(word));
    return tokens;
  }

  const std::vector<std::string>& symbols() const { return symbols_; }

 private:
  void add(const std::string& s) {
    if (ids_.count(s)) throw ArgumentError("duplicate symbol: " + s);
    ids_.emplace(s, size());
    symbols_.push_back(s);
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
  std::unordered_map<int, bool> control_;
};

}  // namespace mrlab::tinylm
