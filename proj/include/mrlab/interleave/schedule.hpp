// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "mrlab/common/errors.hpp"
#include "mrlab/common/io.hpp"
#include "mrlab/common/tensor.hpp"

namespace mrlab::interleave {

/// 110-frame cap and 2 audio tokens per second (60 per 30 s window).
inline constexpr int kDefaultMaxFrames = 110;
inline constexpr double kDefaultTokensPerSecond = 2.0;
inline constexpr double kDefaultSegmentSeconds = 30.0;

namespace detail {
// Ceiling that ignores representation noise just above an integer.
inline std::int64_t ceil_tol(double x) { return static_cast<std::int64_t>(std::ceil(x - 1e-9)); }
}  // namespace detail

struct FrameSamplingPlan {
  double duration = 0.0;
  double fps = 0.0;
  int max_frames = 0;
  /// Frames on the fps grid, ceil(fps * T).
  std::int64_t grid_frames = 0;
  /// Indices into the fps grid, strictly increasing.
  std::vector<std::int64_t> indices;

  std::size_t n() const { return indices.size(); }
  /// Frame rate actually realized after capping.
  double effective_fps() const { return static_cast<double>(indices.size()) / duration; }
};

/// Every grid frame when ceil(fps*T) <= m, otherwise m frames spread
/// uniformly over the grid (index floor(i * N / m)).
inline FrameSamplingPlan plan_frames(double duration, double fps, int max_frames) {
  if (!(duration > 0.0) || !(fps > 0.0) || max_frames < 1 || !std::isfinite(duration) || !std::isfinite(fps))
    throw ArgumentError("plan_frames: T and fps must be positive and m >= 1");
  FrameSamplingPlan p{duration, fps, max_frames, std::max<std::int64_t>(1, detail::ceil_tol(fps * duration)), {}};
  const std::int64_t n = std::min<std::int64_t>(p.grid_frames, max_frames);
  p.indices.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) p.indices.push_back(i * p.grid_frames / n);
  return p;
}

struct AudioSegmentPlan {
  double duration = 0.0;
  double segment_seconds = 0.0;
  double tokens_per_second = 0.0;
  /// Tokens contributed by each segment, in order; sums to total_tokens.
  std::vector<std::int64_t> segment_tokens;
  std::int64_t total_tokens = 0;

  std::size_t segments() const { return segment_tokens.size(); }

  /// 1-based segment id for every audio token.
  std::vector<int> token_segments() const {
    std::vector<int> out;
    for (std::size_t j = 0; j < segment_tokens.size(); ++j)
      out.insert(out.end(), static_cast<std::size_t>(segment_tokens[j]), static_cast<int>(j + 1));
    return out;
  }
};

/// l = ceil(T / t_max) segments; the last may be short. Token counts are
/// differences of ceil(t * tps) at segment boundaries, so they sum to
/// ceil(T * tps).
inline AudioSegmentPlan plan_audio(double duration, double segment_seconds, double tokens_per_second) {
  if (!(duration > 0.0) || !(segment_seconds > 0.0) || !(tokens_per_second >= 0.0) || !std::isfinite(duration))
    throw ArgumentError("plan_audio: T and t_max must be positive, tokens per second non-negative");
  AudioSegmentPlan p{duration, segment_seconds, tokens_per_second, {}, 0};
  const std::int64_t l = std::max<std::int64_t>(1, detail::ceil_tol(duration / segment_seconds));
  std::int64_t prev = 0;
  for (std::int64_t j = 1; j <= l; ++j) {
    const double end = std::min(duration, static_cast<double>(j) * segment_seconds);
    const std::int64_t cum = detail::ceil_tol(end * tokens_per_second);
    p.segment_tokens.push_back(std::max<std::int64_t>(0, cum - prev));
    prev = std::max(prev, cum);
  }
  p.total_tokens = prev;
  return p;
}

/// Adds row j-1 of `table` to every row of segment j and concatenates the
/// segments in order.
inline Matrix add_segment_positions(const std::vector<Matrix>& segments, const Matrix& table) {
  if (segments.empty()) return Matrix(0, table.cols());
  if (static_cast<Eigen::Index>(segments.size()) > table.rows())
    throw ArgumentError("segment position table has fewer rows than segments");
  Eigen::Index rows = 0;
  for (const auto& s : segments) {
    if (s.cols() != table.cols()) throw ArgumentError("segment feature width differs from position table");
    rows += s.rows();
  }
  Matrix out(rows, table.cols());
  Eigen::Index r = 0;
  for (std::size_t j = 0; j < segments.size(); ++j) {
    const auto& s = segments[j];
    out.middleRows(r, s.rows()) = s.rowwise() + table.row(static_cast<Eigen::Index>(j));
    r += s.rows();
  }
  return out;
}

struct Block {
  /// 1-based visual group and the grid frame it comes from.
  std::size_t group = 0;
  std::int64_t frame = 0;
  std::int64_t audio_begin = 0;
  std::int64_t audio_end = 0;
};

struct InterleaveSchedule {
  std::vector<std::int64_t> boundaries;  // alpha_0 .. alpha_n
  std::vector<Block> blocks;
  std::int64_t total_audio = 0;
};

/// alpha_i = round-half-up(L * i / n) in audio-token units; block i holds
/// visual group i followed by audio tokens [alpha_{i-1}, alpha_i).
inline InterleaveSchedule build_schedule(const FrameSamplingPlan& frames, const AudioSegmentPlan& audio) {
  const auto n = static_cast<std::int64_t>(frames.n());
  if (n == 0) throw ArgumentError("build_schedule: no visual groups");
  if (std::abs(frames.duration - audio.duration) > 1e-9)
    throw ArgumentError("build_schedule: frame and audio plans disagree on duration");
  InterleaveSchedule s;
  s.total_audio = audio.total_tokens;
  const std::int64_t L = audio.total_tokens;
  for (std::int64_t i = 0; i <= n; ++i) s.boundaries.push_back((2 * L * i + n) / (2 * n));
  for (std::int64_t i = 1; i <= n; ++i)
    s.blocks.push_back({static_cast<std::size_t>(i), frames.indices[static_cast<std::size_t>(i - 1)],
                        s.boundaries[static_cast<std::size_t>(i - 1)], s.boundaries[static_cast<std::size_t>(i)]});
  return s;
}

/// Partition, chronology and budget checks; returns a list of violations.
inline std::vector<std::string> check_schedule(const InterleaveSchedule& s, const FrameSamplingPlan& frames) {
  std::vector<std::string> problems;
  if (frames.n() > static_cast<std::size_t>(frames.max_frames)) problems.push_back("frame budget exceeded");
  if (s.blocks.size() != frames.n()) problems.push_back("block count differs from sampled frame count");
  if (s.boundaries.empty() || s.boundaries.front() != 0) problems.push_back("alpha_0 is not 0");
  if (s.boundaries.empty() || s.boundaries.back() != s.total_audio) problems.push_back("alpha_n is not the audio total");
  for (std::size_t i = 1; i < s.boundaries.size(); ++i)
    if (s.boundaries[i] < s.boundaries[i - 1]) problems.push_back(fmt::format("alpha decreases at {}", i));
  std::int64_t next_audio = 0;
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    const auto& b = s.blocks[i];
    if (b.group != i + 1) problems.push_back(fmt::format("block {} holds group {}", i + 1, b.group));
    if (i > 0 && b.frame <= s.blocks[i - 1].frame) problems.push_back(fmt::format("frames out of order at {}", i + 1));
    if (b.frame < 0 || b.frame >= frames.grid_frames) problems.push_back(fmt::format("frame off grid at {}", i + 1));
    if (b.audio_begin != next_audio) problems.push_back(fmt::format("audio gap or overlap at block {}", i + 1));
    if (b.audio_end < b.audio_begin) problems.push_back(fmt::format("negative audio slice at block {}", i + 1));
    next_audio = b.audio_end;
  }
  if (next_audio != s.total_audio) problems.push_back("audio tokens not fully covered");
  return problems;
}

inline std::vector<json> schedule_records(const InterleaveSchedule& s) {
  std::vector<json> out;
  for (const auto& b : s.blocks)
    out.push_back({{"block", b.group}, {"frame", b.frame}, {"audio", {b.audio_begin, b.audio_end}},
                   {"audio_tokens", b.audio_end - b.audio_begin}});
  return out;
}

}  // namespace mrlab::interleave
