#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nascore/datagen.hpp"
#include "nascore/nas_table.hpp"
#include "nascore/tensor.hpp"
#include "nascore/tvf.hpp"

namespace nascore {

struct LabelRecord {
  std::string video_id;
  LabelFlags flags{};
  std::filesystem::path clip_path;

  std::size_t flag_count() const;
};

/// Reads a label manifest (`video_id,a01,...,a23`). Clip paths resolve to
/// `<manifest dir>/<video_id>.tvf`.
std::vector<LabelRecord> load_labels(const std::filesystem::path& manifest);

/// Order of the two reduction steps.
enum class ReductionRule {
  /// "Exactly one" counts every flag, including dropped activities.
  kExactlyOneBeforeDrop,
  /// "Exactly one" counts only flags of retained activities.
  kExactlyOneAfterDrop,
};

inline constexpr std::size_t kMinOccurrences = 50;

struct ReductionOptions {
  ReductionRule rule = ReductionRule::kExactlyOneBeforeDrop;
  std::size_t min_occurrences = kMinOccurrences;
  /// Replaces the occurrence threshold with a fixed set of retained columns.
  std::optional<std::vector<std::size_t>> retained_columns;
};

struct ManifestEntry {
  std::string video_id;
  std::size_t class_index = 0;
  std::filesystem::path clip_path;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::size_t total_before = 0;
  std::size_t total_after = 0;
  std::array<std::size_t, kClassCount> class_counts{};
  std::vector<std::size_t> retained_columns;
};

/// Keeps videos whose single activity is one of the retained activities.
/// An activity is retained when it occurs at least `min_occurrences` times and
/// has an Average NAS entry. Throws kEmptyResult when nothing is kept.
Manifest reduce_labels(std::span<const LabelRecord> records, const ReductionOptions& options = {});

/// `video_id,class_index,avg_nas,clip_path`
void write_prepared_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest read_prepared_manifest(const std::filesystem::path& path);
/// Digest over (video_id, class_index) rows; independent of clip locations.
std::string manifest_digest(const Manifest& manifest);

inline constexpr std::size_t kSampledFrames = 16;
inline constexpr std::size_t kFrameSkip = 42;
inline constexpr std::size_t kCentralWindow = 672;

struct SampledClip {
  Tensor frames;  // (16, H, W), values in [0, 1]
  std::string video_id;
  std::array<std::size_t, kSampledFrames> indices{};
};

/// Frame indices taken from the central 672-frame window with step 42.
std::array<std::size_t, kSampledFrames> sample_indices(std::size_t frame_count);
SampledClip sample_frames(const VideoClip& clip, std::string video_id = {});

}  // namespace nascore
