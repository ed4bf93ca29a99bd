// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "mrlab/metrics/types.hpp"
#include "mrlab/tinylm/vocab.hpp"

namespace mrlab::corpus {

using metrics::Category;

inline constexpr int kMaxEvents = 10;
inline constexpr const char* kSep = "<sep>";

inline const std::vector<std::string>& visual_entities() {
  static const std::vector<std::string> v{"dog",  "cat",  "car",  "bird", "horse", "boat",  "tree",
                                          "door", "ball", "lamp", "train", "cup",  "kite", "bike"};
  return v;
}
inline const std::vector<std::string>& speech_entities() {
  static const std::vector<std::string> v{"narrator", "woman", "man", "crowd"};
  return v;
}
inline const std::vector<std::string>& sound_entities() {
  static const std::vector<std::string> v{"music", "engine", "bell", "rain"};
  return v;
}
inline const std::vector<std::string>& entities_of(Category c) {
  switch (c) {
    case Category::kSpeech: return speech_entities();
    case Category::kSound: return sound_entities();
    case Category::kVisual: break;
  }
  return visual_entities();
}
inline const std::vector<std::string>& actions() {
  static const std::vector<std::string> v{"starts", "stops", "moves", "turns", "rises", "falls", "fades", "repeats"};
  return v;
}
inline const std::vector<std::string>& modifiers() {
  static const std::vector<std::string> v{"slowly", "quickly", "loudly", "softly", "left", "right"};
  return v;
}

inline std::string time_token(int k) { return "@" + std::to_string(k); }

inline constexpr int kDistractors = 12;
inline std::string distractor_token(int k) { return "~" + std::to_string(k); }

/// The 64-symbol vocabulary shared by every corpus item.
inline const tinylm::Vocab& vocab() {
  static const tinylm::Vocab v = [] {
    std::vector<std::string> s{kSep, ",", "<none>"};
    for (int k = 0; k < kMaxEvents; ++k) s.push_back(time_token(k));
    for (auto* list : {&visual_entities(), &speech_entities(), &sound_entities(), &actions(), &modifiers()})
      s.insert(s.end(), list->begin(), list->end());
    for (int k = 0; k < kDistractors; ++k) s.push_back(distractor_token(k));
    return tinylm::Vocab(s);
  }();
  return v;
}

}  // namespace mrlab::corpus
