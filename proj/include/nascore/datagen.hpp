#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "nascore/nas_table.hpp"
#include "nascore/tvf.hpp"

namespace nascore {

inline constexpr std::uint32_t kMinFrames = 676;
inline constexpr std::uint32_t kMaxFrames = 820;
inline constexpr std::size_t kCorpusSize = 882;

using LabelFlags = std::array<bool, kNasActivityCount>;

struct PlanEntry {
  std::string video_id;
  LabelFlags labels{};
  std::uint32_t frame_count = 0;
  std::uint64_t seed = 0;

  std::size_t label_count() const;
};

struct CorpusPlan {
  std::vector<PlanEntry> entries;

  /// Per-column totals of true flags.
  std::array<std::size_t, kNasActivityCount> occurrences() const;
};

/// Pairs up occurrences so every pair joins two different activities,
/// repeatedly taking the two largest remaining counts (lower index on ties).
/// Throws kPairingInfeasible when the total is odd or one count exceeds the
/// sum of all the others.
std::vector<std::pair<std::size_t, std::size_t>> greedy_pairing(std::span<const std::size_t> counts);

/// The Table-1-faithful 882-video plan: 458 single-label videos in the retained
/// classes, two-label videos carrying the remaining occurrences, and
/// zero-label padding.
CorpusPlan plan_corpus(std::uint64_t seed);

/// Small separable corpus: `per_class` single-label videos for every class.
CorpusPlan plan_smoke_corpus(std::uint64_t seed, std::size_t per_class = 10);

enum class Trajectory {
  kBedsideDwell,
  kApproachRetreat,
  kCornerStation,
  kTwoAgent,
  kPatientRoll,
  kBedsideSweep,
  kBriefVisit,
  kArmReach,
};

/// Visual signature standing in for one activity class. Coordinates are
/// normalized to [0, 1] across the frame (x along width, y along height).
struct MotionPattern {
  std::size_t class_id;
  Trajectory trajectory;
  std::size_t agent_count;
  std::array<double, 2> dwell_region;  // (x, y) where the agents spend most time
  double mean_speed;                   // normalized distance per clip, approximate
};

const MotionPattern& motion_pattern(std::size_t class_id);

struct Geometry {
  std::uint32_t height = 72;
  std::uint32_t width = 96;
};

/// Parses "HxW".
Geometry parse_geometry(const std::string& text);

/// Thermal counts used by the renderer.
inline constexpr std::uint16_t kBackgroundLevel = 18000;
inline constexpr std::uint16_t kPatientLevel = 30000;
inline constexpr std::uint16_t kAgentLevel = 36000;
inline constexpr int kNoiseAmplitude = 1311;  // 2% of the u16 range

VideoClip render_clip(const PlanEntry& entry, Geometry geometry, std::uint64_t seed);

inline constexpr const char* kLabelManifestName = "labels.csv";

/// Writes `<video_id>.tvf` per entry plus `labels.csv`; returns the manifest
/// path. Clips are rendered on `jobs` threads; output does not depend on it.
std::filesystem::path write_corpus(const CorpusPlan& plan, const std::filesystem::path& directory,
                                   Geometry geometry, std::uint64_t seed, std::size_t jobs = 1);

void write_label_manifest(const CorpusPlan& plan, const std::filesystem::path& path);

}  // namespace nascore
