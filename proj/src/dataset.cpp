#include "nascore/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace nascore {

Scalar avg_nas(std::size_t class_index) {
  if (class_index >= kClassCount) {
    throw Error(ErrorCode::kIndexOutOfRange, "class index " + std::to_string(class_index));
  }
  return kActivityTable[class_index].average_nas;
}

std::optional<std::size_t> class_for_column(std::size_t column) {
  for (const auto& a : kActivityTable) {
    if (a.column == column) return a.class_index;
  }
  return std::nullopt;
}

std::string_view class_name(std::size_t class_index) {
  if (class_index >= kClassCount) {
    throw Error(ErrorCode::kIndexOutOfRange, "class index " + std::to_string(class_index));
  }
  return kActivityTable[class_index].name;
}

std::size_t LabelRecord::flag_count() const {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::vector<LabelRecord> load_labels(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + manifest.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kFormat, manifest.string() + ": missing header");
  const auto header = split_csv(strip_cr(line));
  if (header.size() != kNasActivityCount + 1 || header[0] != "video_id") {
    throw Error(ErrorCode::kWrongColumnCount, manifest.string() + ": header must be video_id,a01..a23");
  }
  const auto dir = manifest.parent_path();
  std::vector<LabelRecord> records;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != kNasActivityCount + 1) {
      throw Error(ErrorCode::kWrongColumnCount, manifest.string() + ":" + std::to_string(line_no) + ": " +
                                                    std::to_string(fields.size()) + " columns");
    }
    LabelRecord r;
    r.video_id = fields[0];
    if (r.video_id.empty()) throw Error(ErrorCode::kMalformedRow, manifest.string() + ":" + std::to_string(line_no) + ": empty video_id");
    for (std::size_t i = 0; i < kNasActivityCount; ++i) {
      const auto& f = fields[i + 1];
      if (f != "0" && f != "1") {
        throw Error(ErrorCode::kMalformedRow, manifest.string() + ":" + std::to_string(line_no) + ": flag '" + f + "'");
      }
      r.flags[i] = f == "1";
    }
    if (!seen.insert(r.video_id).second) {
      throw Error(ErrorCode::kDuplicateVideo, manifest.string() + ":" + std::to_string(line_no) + ": " + r.video_id);
    }
    r.clip_path = dir / (r.video_id + ".tvf");
    records.push_back(std::move(r));
  }
  return records;
}

Manifest reduce_labels(std::span<const LabelRecord> records, const ReductionOptions& options) {
  std::array<std::size_t, kNasActivityCount> occurrences{};
  for (const auto& r : records) {
    for (std::size_t i = 0; i < kNasActivityCount; ++i) occurrences[i] += r.flags[i] ? 1 : 0;
  }
  std::array<bool, kNasActivityCount> retained{};
  if (options.retained_columns) {
    for (auto col : *options.retained_columns) {
      if (col >= kNasActivityCount || !class_for_column(col)) {
        throw Error(ErrorCode::kIndexOutOfRange, "column " + std::to_string(col) + " has no activity class");
      }
      retained[col] = true;
    }
  } else {
    for (std::size_t i = 0; i < kNasActivityCount; ++i) {
      retained[i] = occurrences[i] >= options.min_occurrences && class_for_column(i).has_value();
    }
  }

  Manifest m;
  m.total_before = records.size();
  for (std::size_t i = 0; i < kNasActivityCount; ++i) {
    if (retained[i]) m.retained_columns.push_back(i);
  }
  for (const auto& r : records) {
    std::size_t counted = 0;
    std::size_t column = 0;
    for (std::size_t i = 0; i < kNasActivityCount; ++i) {
      if (!r.flags[i]) continue;
      if (options.rule == ReductionRule::kExactlyOneAfterDrop && !retained[i]) continue;
      ++counted;
      column = i;
    }
    if (counted != 1 || !retained[column]) continue;
    const std::size_t cls = *class_for_column(column);
    m.entries.push_back({r.video_id, cls, r.clip_path});
    ++m.class_counts[cls];
  }
  m.total_after = m.entries.size();
  if (m.entries.empty()) {
    throw Error(ErrorCode::kEmptyResult, "no video has exactly one retained activity (threshold " +
                                             std::to_string(options.min_occurrences) + ")");
  }
  return m;
}

void write_prepared_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "video_id,class_index,avg_nas,clip_path\n";
  // Clip paths are stored relative to the manifest so the pair can move together.
  const auto base = std::filesystem::absolute(path).lexically_normal().parent_path();
  char nas[32];
  for (const auto& e : manifest.entries) {
    std::snprintf(nas, sizeof(nas), "%.2f", avg_nas(e.class_index));
    const auto clip = std::filesystem::absolute(e.clip_path).lexically_normal().lexically_proximate(base);
    out << e.video_id << ',' << e.class_index << ',' << nas << ',' << clip.generic_string() << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

Manifest read_prepared_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "video_id,class_index,avg_nas,clip_path") {
    throw Error(ErrorCode::kFormat, path.string() + ": bad header");
  }
  Manifest m;
  std::set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto first = line.find(',');
    const auto second = first == std::string::npos ? first : line.find(',', first + 1);
    const auto third = second == std::string::npos ? second : line.find(',', second + 1);
    if (third == std::string::npos) {
      throw Error(ErrorCode::kWrongColumnCount, path.string() + ":" + std::to_string(line_no));
    }
    ManifestEntry e;
    e.video_id = line.substr(0, first);
    const std::string cls = line.substr(first + 1, second - first - 1);
    auto [ptr, ec] = std::from_chars(cls.data(), cls.data() + cls.size(), e.class_index);
    if (ec != std::errc() || ptr != cls.data() + cls.size() || e.class_index >= kClassCount) {
      throw Error(ErrorCode::kMalformedRow, path.string() + ":" + std::to_string(line_no) + ": class '" + cls + "'");
    }
    if (!seen.insert(e.video_id).second) {
      throw Error(ErrorCode::kDuplicateVideo, path.string() + ":" + std::to_string(line_no) + ": " + e.video_id);
    }
    std::filesystem::path clip = line.substr(third + 1);
    e.clip_path = clip.is_absolute() ? clip : path.parent_path() / clip;
    ++m.class_counts[e.class_index];
    m.entries.push_back(std::move(e));
  }
  m.total_after = m.entries.size();
  m.total_before = m.total_after;
  return m;
}

std::string manifest_digest(const Manifest& manifest) {
  std::string rows;
  for (const auto& e : manifest.entries) {
    rows += e.video_id;
    rows += ',';
    rows += std::to_string(e.class_index);
    rows += '\n';
  }
  return sha256_hex(rows);
}

std::array<std::size_t, kSampledFrames> sample_indices(std::size_t frame_count) {
  if (frame_count < kCentralWindow) {
    throw Error(ErrorCode::kTooShortClip, std::to_string(frame_count) + " frames, need " + std::to_string(kCentralWindow));
  }
  const std::size_t start = (frame_count - kCentralWindow) / 2;
  std::array<std::size_t, kSampledFrames> idx{};
  for (std::size_t k = 0; k < kSampledFrames; ++k) idx[k] = start + kFrameSkip * k;
  return idx;
}

SampledClip sample_frames(const VideoClip& clip, std::string video_id) {
  SampledClip out;
  out.indices = sample_indices(clip.frames);
  out.video_id = std::move(video_id);
  const std::size_t fs = clip.frame_size();
  std::vector<Scalar> values(kSampledFrames * fs);
  for (std::size_t k = 0; k < kSampledFrames; ++k) {
    const std::uint16_t* src = clip.frame(out.indices[k]);
    for (std::size_t i = 0; i < fs; ++i) values[k * fs + i] = static_cast<Scalar>(src[i]) / 65535.0;
  }
  out.frames = Tensor::from_data({kSampledFrames, clip.height, clip.width}, std::move(values));
  return out;
}

}  // namespace nascore
