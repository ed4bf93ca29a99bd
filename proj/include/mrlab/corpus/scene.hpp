// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/hash.hpp"
#include "mrlab/common/io.hpp"
#include "mrlab/common/rng.hpp"
#include "mrlab/corpus/grammar.hpp"
#include "mrlab/metrics/files.hpp"
#include "mrlab/metrics/text.hpp"
#include "mrlab/tinylm/model.hpp"

namespace mrlab::corpus {

using metrics::AtomicEvent;
using tinylm::SftExample;
using tinylm::TokenSequence;

struct CorpusConfig {
  int min_events = 8;
  int max_events = 8;
  /// Relative category weights, visual : speech : sound.
  double weight_visual = 28.0;
  double weight_speech = 4.6;
  double weight_sound = 1.5;
  /// Minimum number of speech/sound events (capped at the event count).
  int min_audio = 2;
  int n_distractors = 4;

  void validate() const {
    if (min_events < 1 || max_events < min_events || max_events > kMaxEvents)
      throw ArgumentError(fmt::format("corpus event range must satisfy 1 <= min <= max <= {}", kMaxEvents));
    if (!(weight_visual >= 0 && weight_speech >= 0 && weight_sound >= 0) ||
        weight_visual + weight_speech + weight_sound <= 0)
      throw ArgumentError("corpus category weights must be non-negative with a positive sum");
    if (min_audio < 0 || min_audio > static_cast<int>(speech_entities().size() + sound_entities().size()))
      throw ArgumentError("corpus.min_audio out of range");
    if (n_distractors < 0) throw ArgumentError("corpus.n_distractors must be non-negative");
  }
};

struct Scene {
  std::string item_id;
  /// Chronological; ids are "e0", "e1", ...
  std::vector<AtomicEvent> events;
  /// What the policy sees: BOS, shuffled "@k entity action modifier" groups
  /// mixed with distractor tokens, then the separator.
  TokenSequence observation;
};

namespace detail {

inline Category draw_category(Rng& rng, const std::array<double, 3>& w) {
  const double u = rng.uniform() * (w[0] + w[1] + w[2]);
  if (u < w[0]) return Category::kVisual;
  if (u < w[0] + w[1]) return Category::kSpeech;
  return Category::kSound;
}

inline std::size_t slot(Category c) {
  switch (c) {
    case Category::kVisual: return 0;
    case Category::kSpeech: return 1;
    case Category::kSound: return 2;
  }
  return 0;
}

inline std::string event_text(const metrics::EventAttributes& a) { return a.entity + " " + a.action + " " + a.modifier; }

}  // namespace detail

/// Deterministic in (item_id, seed, cfg).
inline Scene generate_scene(std::string item_id, std::uint64_t seed, const CorpusConfig& cfg = {}) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x5ce));
  const int n = cfg.min_events + static_cast<int>(rng.below(static_cast<std::size_t>(cfg.max_events - cfg.min_events + 1)));

  const std::array<double, 3> weights{cfg.weight_visual, cfg.weight_speech, cfg.weight_sound};
  std::array<std::size_t, 3> capacity{visual_entities().size(), speech_entities().size(), sound_entities().size()};
  std::vector<Category> cats;
  for (int i = 0; i < n; ++i) {
    auto w = weights;
    for (std::size_t s = 0; s < 3; ++s)
      if (capacity[s] == 0) w[s] = 0.0;
    if (w[0] + w[1] + w[2] <= 0.0)
      for (std::size_t s = 0; s < 3; ++s) w[s] = capacity[s] > 0 ? 1.0 : 0.0;
    const Category c = detail::draw_category(rng, w);
    --capacity[detail::slot(c)];
    cats.push_back(c);
  }
  // Promote visual events until the audio minimum holds.
  const int min_audio = std::min(cfg.min_audio, n);
  auto audio_count = [&] { return std::count_if(cats.begin(), cats.end(), metrics::is_audio); };
  while (audio_count() < min_audio) {
    std::vector<std::size_t> visual;
    for (std::size_t i = 0; i < cats.size(); ++i)
      if (cats[i] == Category::kVisual) visual.push_back(i);
    const std::size_t pick = visual[rng.below(visual.size())];
    const double ws = cfg.weight_speech + cfg.weight_sound > 0 ? cfg.weight_speech : 1.0;
    const double wn = cfg.weight_speech + cfg.weight_sound > 0 ? cfg.weight_sound : 1.0;
    Category c = rng.uniform() * (ws + wn) < ws ? Category::kSpeech : Category::kSound;
    if (capacity[detail::slot(c)] == 0) c = c == Category::kSpeech ? Category::kSound : Category::kSpeech;
    --capacity[detail::slot(c)];
    ++capacity[0];
    cats[pick] = c;
  }

  std::array<std::vector<std::string>, 3> pools{visual_entities(), speech_entities(), sound_entities()};
  for (auto& p : pools) rng.shuffle(p);
  std::array<std::size_t, 3> used{0, 0, 0};

  Scene scene;
  scene.item_id = std::move(item_id);
  for (int i = 0; i < n; ++i) {
    const std::size_t s = detail::slot(cats[static_cast<std::size_t>(i)]);
    metrics::EventAttributes attr{pools[s][used[s]++], actions()[rng.below(actions().size())],
                                  modifiers()[rng.below(modifiers().size())]};
    scene.events.push_back({"e" + std::to_string(i), detail::event_text(attr), cats[static_cast<std::size_t>(i)], attr});
  }

  const auto& v = vocab();
  std::vector<TokenSequence> units;
  for (int i = 0; i < n; ++i) {
    const auto& a = *scene.events[static_cast<std::size_t>(i)].attributes;
    units.push_back({v.id(time_token(i)), v.id(a.entity), v.id(a.action), v.id(a.modifier)});
  }
  for (int k = 0; k < cfg.n_distractors; ++k)
    units.push_back({v.id(distractor_token(static_cast<int>(rng.below(kDistractors))))});
  rng.shuffle(units);
  scene.observation.push_back(tinylm::Vocab::kBos);
  for (const auto& u : units) scene.observation.insert(scene.observation.end(), u.begin(), u.end());
  scene.observation.push_back(v.id(kSep));
  return scene;
}

inline TokenSequence make_prompt(const Scene& scene) { return scene.observation; }

namespace detail {

inline TokenSequence render_clauses(const std::vector<std::string>& clauses) {
  const auto& v = vocab();
  TokenSequence out;
  if (clauses.empty()) {
    out.push_back(v.id(metrics::kEmptyFiller));
  } else {
    for (std::size_t i = 0; i < clauses.size(); ++i) {
      if (i > 0) out.push_back(v.id(","));
      auto words = v.from_text(clauses[i]);
      out.insert(out.end(), words.begin(), words.end());
    }
  }
  out.push_back(tinylm::Vocab::kEos);
  return out;
}

}  // namespace detail

/// Canonical caption: "entity action modifier" clauses in event order joined
/// by ",", terminated by EOS.
inline TokenSequence render_caption(const Scene& scene) {
  std::vector<std::string> clauses;
  for (const auto& e : scene.events) clauses.push_back(e.text);
  return detail::render_clauses(clauses);
}

inline std::string caption_text(const TokenSequence& tokens) { return vocab().to_text(tokens); }

struct AlteredEvent {
  std::string id;
  std::string attribute;
  std::string from;
  std::string to;
  bool operator==(const AlteredEvent&) const = default;
};

struct CorruptionRecord {
  std::string item_id;
  std::vector<std::string> dropped;
  std::vector<AlteredEvent> altered;
  /// Phantom clauses in caption order, with their word spans.
  std::vector<metrics::ExtraEvent> injected;

  /// The judgment this corruption must produce.
  metrics::EventJudgment expected_judgment(const Scene& scene) const {
    metrics::EventJudgment j;
    for (const auto& e : scene.events) {
      j.event_ids.push_back(e.id);
      if (std::find(dropped.begin(), dropped.end(), e.id) != dropped.end()) {
        j.statuses.push_back(metrics::EventStatus::kMissing);
      } else if (std::any_of(altered.begin(), altered.end(), [&](const AlteredEvent& a) { return a.id == e.id; })) {
        j.statuses.push_back(metrics::EventStatus::kIncorrect);
      } else {
        j.statuses.push_back(metrics::EventStatus::kCovered);
      }
    }
    j.extras = injected;
    return j;
  }
};

/// Largest extra_k supported for a scene (phantoms use unused entities).
inline int max_extra(const Scene& scene) {
  return static_cast<int>(visual_entities().size() + speech_entities().size() + sound_entities().size() -
                          scene.events.size());
}

/// Drops miss_k events, changes one attribute of incorrect_k others, and
/// inserts extra_k clauses about entities absent from the scene.
inline std::pair<TokenSequence, CorruptionRecord> corrupt_caption(const Scene& scene, int miss_k, int incorrect_k,
                                                                  int extra_k, std::uint64_t seed) {
  const int n = static_cast<int>(scene.events.size());
  if (miss_k < 0 || incorrect_k < 0 || extra_k < 0 || miss_k + incorrect_k > n || extra_k > max_extra(scene))
    throw ArgumentError(fmt::format("corruption counts ({}, {}, {}) out of range for {} events", miss_k, incorrect_k,
                                    extra_k, n));
  Rng rng(derive_seed(seed, 0xc0de));
  std::vector<std::size_t> order(scene.events.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  CorruptionRecord rec;
  rec.item_id = scene.item_id;
  std::vector<int> fate(scene.events.size(), 0);  // 0 keep, 1 drop, 2 alter
  for (int k = 0; k < miss_k; ++k) fate[order[static_cast<std::size_t>(k)]] = 1;
  for (int k = miss_k; k < miss_k + incorrect_k; ++k) fate[order[static_cast<std::size_t>(k)]] = 2;

  std::vector<std::string> clauses;
  std::vector<bool> phantom;
  for (std::size_t i = 0; i < scene.events.size(); ++i) {
    const auto& e = scene.events[i];
    if (fate[i] == 1) {
      rec.dropped.push_back(e.id);
      continue;
    }
    auto words = metrics::split_words(e.text);
    if (fate[i] == 2) {
      const bool action = rng.below(2) == 0;
      const auto& pool = action ? actions() : modifiers();
      std::string& slot = words[action ? 1 : 2];
      std::string to = slot;
      while (to == slot) to = pool[rng.below(pool.size())];
      rec.altered.push_back({e.id, action ? "action" : "modifier", slot, to});
      slot = to;
    }
    clauses.push_back(metrics::join_words(words, 0, words.size()));
    phantom.push_back(false);
  }

  std::vector<std::string> unused;
  for (auto* list : {&visual_entities(), &speech_entities(), &sound_entities()})
    for (const auto& ent : *list)
      if (std::none_of(scene.events.begin(), scene.events.end(),
                       [&](const AtomicEvent& e) { return metrics::split_words(e.text).front() == ent; }))
        unused.push_back(ent);
  rng.shuffle(unused);
  for (int k = 0; k < extra_k; ++k) {
    const std::string text = unused[static_cast<std::size_t>(k)] + " " + actions()[rng.below(actions().size())] + " " +
                             modifiers()[rng.below(modifiers().size())];
    const auto at = static_cast<std::ptrdiff_t>(rng.below(clauses.size() + 1));
    clauses.insert(clauses.begin() + at, text);
    phantom.insert(phantom.begin() + at, true);
  }

  // Word spans follow the rendered layout: 3 words per clause plus one comma.
  std::size_t word = 0;
  for (std::size_t c = 0; c < clauses.size(); ++c) {
    const std::size_t len = metrics::split_words(clauses[c]).size();
    if (phantom[c]) rec.injected.push_back({clauses[c], word, word + len});
    word += len + 1;
  }
  return {detail::render_clauses(clauses), std::move(rec)};
}

inline std::string item_id_for(std::uint64_t seed, std::size_t index) {
  return fmt::format("item-{:x}-{:05d}", seed, index);
}

inline std::vector<Scene> make_scenes(std::size_t n_items, std::uint64_t seed, const CorpusConfig& cfg = {}) {
  std::vector<Scene> out;
  out.reserve(n_items);
  for (std::size_t i = 0; i < n_items; ++i) out.push_back(generate_scene(item_id_for(seed, i), derive_seed(seed, i), cfg));
  return out;
}

inline SftExample to_sft_example(const Scene& scene) { return {scene.item_id, make_prompt(scene), render_caption(scene)}; }

inline std::vector<SftExample> make_sft_dataset(std::size_t n_items, std::uint64_t seed, const CorpusConfig& cfg = {}) {
  std::vector<SftExample> out;
  for (const auto& s : make_scenes(n_items, seed, cfg)) out.push_back(to_sft_example(s));
  return out;
}

/// Held-out membership is a pure function of the item id.
inline bool is_held_out(std::string_view item_id, double held_out_fraction) {
  return static_cast<double>(fnv1a64(item_id) % 10000) < held_out_fraction * 10000.0;
}

struct Split {
  std::vector<Scene> train;
  std::vector<Scene> held_out;
};

inline Split split_scenes(std::vector<Scene> scenes, double held_out_fraction) {
  if (!(held_out_fraction >= 0.0 && held_out_fraction <= 1.0)) throw ArgumentError("held-out fraction must be in [0, 1]");
  Split s;
  for (auto& sc : scenes) (is_held_out(sc.item_id, held_out_fraction) ? s.held_out : s.train).push_back(std::move(sc));
  return s;
}

inline metrics::EventsRecord events_record(const Scene& scene) {
  return {scene.item_id, caption_text(render_caption(scene)), scene.events};
}

inline json sft_record(const SftExample& ex) {
  return {{"item_id", ex.item_id}, {"prompt_tokens", ex.prompt}, {"target_tokens", ex.target}};
}

inline SftExample sft_example_from_json(const json& j) {
  try {
    return {j.at("item_id").get<std::string>(), j.at("prompt_tokens").get<TokenSequence>(),
            j.at("target_tokens").get<TokenSequence>()};
  } catch (const json::exception& ex) {
    throw FormatError(std::string("bad SFT record: ") + ex.what());
  }
}

}  // namespace mrlab::corpus
