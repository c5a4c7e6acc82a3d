#include "nascore/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <mutex>
#include <thread>

namespace nascore {

std::size_t PlanEntry::label_count() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true)); }

std::array<std::size_t, kNasActivityCount> CorpusPlan::occurrences() const {
  std::array<std::size_t, kNasActivityCount> totals{};
  for (const auto& e : entries) {
    for (std::size_t i = 0; i < kNasActivityCount; ++i) totals[i] += e.labels[i] ? 1 : 0;
  }
  return totals;
}

std::vector<std::pair<std::size_t, std::size_t>> greedy_pairing(std::span<const std::size_t> counts) {
  std::vector<std::size_t> remaining(counts.begin(), counts.end());
  std::size_t total = 0;
  for (auto c : remaining) total += c;
  if (total % 2 != 0) throw Error(ErrorCode::kPairingInfeasible, "odd number of occurrences");
  for (auto c : remaining) {
    if (2 * c > total) throw Error(ErrorCode::kPairingInfeasible, "one activity exceeds all others combined");
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> order(remaining.size());
  for (std::size_t left = total; left > 0; left -= 2) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remaining[a] > remaining[b]; });
    const std::size_t first = order[0];
    const std::size_t second = order[1];
    if (remaining[second] == 0) throw Error(ErrorCode::kPairingInfeasible, "no partner left");
    --remaining[first];
    --remaining[second];
    pairs.emplace_back(std::min(first, second), std::max(first, second));
  }
  return pairs;
}

namespace {

std::string numbered_id(char prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%0*zu", prefix, width, i);
  return buf;
}

void finalize_plan(std::vector<LabelFlags>& labels, std::uint64_t seed, char prefix, int width, CorpusPlan& plan) {
  Rng order_rng(derive_seed(seed, "order"));
  order_rng.shuffle(labels);
  Rng frame_rng(derive_seed(seed, "frames"));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    PlanEntry e;
    e.video_id = numbered_id(prefix, i, width);
    e.labels = labels[i];
    e.frame_count = static_cast<std::uint32_t>(frame_rng.between(kMinFrames, kMaxFrames));
    e.seed = derive_seed(seed, e.video_id);
    plan.entries.push_back(std::move(e));
  }
}

}  // namespace

CorpusPlan plan_corpus(std::uint64_t seed) {
  std::vector<LabelFlags> labels;
  auto add = [&labels](std::initializer_list<std::size_t> columns) {
    LabelFlags flags{};
    for (auto c : columns) flags[c] = true;
    labels.push_back(flags);
  };

  std::vector<std::size_t> retained_columns;
  std::vector<std::size_t> retained_excess;
  std::vector<std::size_t> dropped_columns;
  std::vector<std::size_t> dropped_counts;
  for (std::size_t col = 0; col < kObservedActivityCount; ++col) {
    const auto& a = kObservedActivities[col];
    if (a.occurrences_after > 0) {
      for (std::size_t i = 0; i < a.occurrences_after; ++i) add({col});
      retained_columns.push_back(col);
      retained_excess.push_back(a.occurrences_before - a.occurrences_after);
    } else {
      dropped_columns.push_back(col);
      dropped_counts.push_back(a.occurrences_before);
    }
  }
  for (auto [i, j] : greedy_pairing(retained_excess)) add({retained_columns[i], retained_columns[j]});
  for (auto [i, j] : greedy_pairing(dropped_counts)) add({dropped_columns[i], dropped_columns[j]});
  if (labels.size() > kCorpusSize) throw Error(ErrorCode::kPairingInfeasible, "label plan exceeds corpus size");
  while (labels.size() < kCorpusSize) add({});

  CorpusPlan plan;
  finalize_plan(labels, seed, 'v', 4, plan);
  return plan;
}

CorpusPlan plan_smoke_corpus(std::uint64_t seed, std::size_t per_class) {
  std::vector<LabelFlags> labels;
  for (const auto& a : kActivityTable) {
    for (std::size_t i = 0; i < per_class; ++i) {
      LabelFlags flags{};
      flags[a.column] = true;
      labels.push_back(flags);
    }
  }
  CorpusPlan plan;
  finalize_plan(labels, derive_seed(seed, "smoke"), 's', 3, plan);
  return plan;
}

// ---------------------------------------------------------------------------
// Motion patterns

const MotionPattern& motion_pattern(std::size_t class_id) {
  static const std::array<MotionPattern, kClassCount> patterns{{
      {0, Trajectory::kBedsideDwell, 1, {0.74, 0.50}, 0.5},
      {1, Trajectory::kApproachRetreat, 1, {0.60, 0.70}, 2.9},
      {2, Trajectory::kCornerStation, 1, {0.12, 0.12}, 0.1},
      {3, Trajectory::kTwoAgent, 2, {0.50, 0.18}, 0.3},
      {4, Trajectory::kPatientRoll, 2, {0.50, 0.50}, 6.0},
      {5, Trajectory::kBedsideSweep, 1, {0.28, 0.50}, 3.6},
      {6, Trajectory::kBriefVisit, 1, {0.66, 0.32}, 0.0},
      {7, Trajectory::kArmReach, 1, {0.78, 0.68}, 1.7},
  }};
  if (class_id >= kClassCount) throw Error(ErrorCode::kIndexOutOfRange, "class " + std::to_string(class_id));
  return patterns[class_id];
}

Geometry parse_geometry(const std::string& text) {
  const auto x = text.find('x');
  Geometry g{};
  try {
    if (x == std::string::npos) throw std::invalid_argument("no separator");
    std::size_t used = 0;
    const unsigned long h = std::stoul(text.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("height");
    const std::string wpart = text.substr(x + 1);
    const unsigned long w = std::stoul(wpart, &used);
    if (used != wpart.size()) throw std::invalid_argument("width");
    g.height = static_cast<std::uint32_t>(h);
    g.width = static_cast<std::uint32_t>(w);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidGeometry, "expected HxW, got '" + text + "'");
  }
  if (g.height == 0 || g.width == 0) throw Error(ErrorCode::kInvalidGeometry, "zero extent in '" + text + "'");
  return g;
}

namespace {

struct Blob {
  double x;
  double y;
  double radius_scale;
};

struct Jitter {
  double dx;
  double dy;
  double phase;
};

constexpr double kTau = 2.0 * std::numbers::pi;

double triangle(double u) {
  const double f = u - std::floor(u);
  return f < 0.5 ? 2.0 * f : 2.0 - 2.0 * f;
}

void pattern_blobs(const MotionPattern& m, double p, const Jitter& j, std::vector<Blob>& out) {
  const double ph = j.phase;
  const double x0 = m.dwell_region[0] + j.dx;
  const double y0 = m.dwell_region[1] + j.dy;
  switch (m.trajectory) {
    case Trajectory::kBedsideDwell:
      out.push_back({x0 + 0.02 * std::sin(kTau * (2 * p + ph)), y0 + 0.03 * std::cos(kTau * (2 * p + ph)), 1.0});
      break;
    case Trajectory::kApproachRetreat: {
      const double u = triangle(2 * p + ph);
      out.push_back({0.92 + j.dx + u * (0.30 - 0.92), 0.90 + j.dy + u * (0.50 - 0.90), 1.0});
      break;
    }
    case Trajectory::kCornerStation:
      out.push_back({x0 + 0.01 * std::sin(kTau * (p + ph)), y0, 1.0});
      break;
    case Trajectory::kTwoAgent:
      out.push_back({0.30 + j.dx + 0.02 * std::sin(kTau * (p + ph)), y0, 1.0});
      out.push_back({0.70 + j.dx, y0 + 0.02 * std::cos(kTau * (p + ph)), 1.0});
      break;
    case Trajectory::kPatientRoll: {
      const double s = 0.25 * std::sin(kTau * (6 * p + ph));
      out.push_back({0.30 + j.dx, y0 + s, 1.0});
      out.push_back({0.70 + j.dx, y0 - s, 1.0});
      break;
    }
    case Trajectory::kBedsideSweep:
      out.push_back({x0, 0.50 + j.dy + 0.30 * std::sin(kTau * (3 * p + ph)), 1.0});
      break;
    case Trajectory::kBriefVisit:
      if (p >= 0.35 && p <= 0.65) out.push_back({x0, y0, 1.0});
      break;
    case Trajectory::kArmReach: {
      const double reach = 0.5 + 0.5 * std::sin(kTau * (8 * p + ph));
      out.push_back({x0, y0, 1.0});
      out.push_back({x0 + reach * (0.60 - x0), y0 + reach * (0.60 - y0), 0.6});
      break;
    }
  }
}

// Activities without a class pattern (dropped columns) appear as a stationary
// caregiver at a column-dependent spot along the bed.
void generic_blob(std::size_t column, double p, const Jitter& j, std::vector<Blob>& out) {
  const double y = 0.22 + 0.56 * static_cast<double>(column % 7) / 6.0;
  const double x = column % 2 == 0 ? 0.30 : 0.70;
  out.push_back({x + j.dx + 0.01 * std::sin(kTau * (p + j.phase)), y + j.dy, 1.0});
}

}  // namespace

VideoClip render_clip(const PlanEntry& entry, Geometry geometry, std::uint64_t seed) {
  if (geometry.height == 0 || geometry.width == 0) throw Error(ErrorCode::kInvalidGeometry, "zero extent");
  if (entry.frame_count < kMinFrames || entry.frame_count > kMaxFrames) {
    throw Error(ErrorCode::kInvalidArgument, entry.video_id + ": frame count " + std::to_string(entry.frame_count));
  }
  const std::size_t h = geometry.height, w = geometry.width;
  Rng rng(derive_seed(seed, entry.seed));

  std::vector<std::pair<std::size_t, Jitter>> actors;  // (column, jitter)
  for (std::size_t col = 0; col < kNasActivityCount; ++col) {
    if (!entry.labels[col]) continue;
    Jitter j{rng.uniform(-0.03, 0.03), rng.uniform(-0.03, 0.03), rng.uniform()};
    actors.emplace_back(col, j);
  }

  std::vector<std::uint16_t> base(h * w, kBackgroundLevel);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double nx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
      const double ny = (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 0.5;
      if ((nx / 0.14) * (nx / 0.14) + (ny / 0.30) * (ny / 0.30) <= 1.0) base[y * w + x] = kPatientLevel;
    }
  }

  VideoClip clip;
  clip.frames = entry.frame_count;
  clip.height = geometry.height;
  clip.width = geometry.width;
  clip.pixels.resize(static_cast<std::size_t>(clip.frames) * h * w);
  const double radius = std::max(1.0, 0.09 * static_cast<double>(std::min(h, w)));
  std::vector<Blob> blobs;
  std::vector<int> frame(h * w);
  for (std::size_t t = 0; t < clip.frames; ++t) {
    const double p = static_cast<double>(t) / static_cast<double>(clip.frames - 1);
    blobs.clear();
    for (const auto& [col, jit] : actors) {
      if (auto cls = class_for_column(col)) {
        pattern_blobs(motion_pattern(*cls), p, jit, blobs);
      } else {
        generic_blob(col, p, jit, blobs);
      }
    }
    std::copy(base.begin(), base.end(), frame.begin());
    for (const auto& b : blobs) {
      const double cx = b.x * static_cast<double>(w);
      const double cy = b.y * static_cast<double>(h);
      const double r = radius * b.radius_scale;
      const auto y_lo = static_cast<std::ptrdiff_t>(std::floor(cy - r));
      const auto y_hi = static_cast<std::ptrdiff_t>(std::ceil(cy + r));
      const auto x_lo = static_cast<std::ptrdiff_t>(std::floor(cx - r));
      const auto x_hi = static_cast<std::ptrdiff_t>(std::ceil(cx + r));
      for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, y_lo); y <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h) - 1, y_hi); ++y) {
        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, x_lo); x <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - 1, x_hi); ++x) {
          const double dx = static_cast<double>(x) + 0.5 - cx;
          const double dy = static_cast<double>(y) + 0.5 - cy;
          if (dx * dx + dy * dy <= r * r) {
            int& px = frame[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
            px = std::max(px, static_cast<int>(kAgentLevel));
          }
        }
      }
    }
    std::uint16_t* dst = clip.pixels.data() + t * h * w;
    for (std::size_t i = 0; i < h * w; ++i) {
      const int v = frame[i] + static_cast<int>(rng.between(-kNoiseAmplitude, kNoiseAmplitude));
      dst[i] = static_cast<std::uint16_t>(std::clamp(v, 0, 65535));
    }
  }
  return clip;
}

void write_label_manifest(const CorpusPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << "video_id";
  char col[8];
  for (std::size_t i = 0; i < kNasActivityCount; ++i) {
    std::snprintf(col, sizeof(col), ",a%02zu", i + 1);
    out << col;
  }
  out << '\n';
  for (const auto& e : plan.entries) {
    out << e.video_id;
    for (bool f : e.labels) out << ',' << (f ? '1' : '0');
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

std::filesystem::path write_corpus(const CorpusPlan& plan, const std::filesystem::path& directory, Geometry geometry,
                                   std::uint64_t seed, std::size_t jobs) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + directory.string() + ": " + ec.message());

  std::atomic<std::size_t> next{0};
  std::mutex failure_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < plan.entries.size(); i = next++) {
      try {
        const auto& e = plan.entries[i];
        write_tvf(directory / (e.video_id + ".tvf"), render_clip(e, geometry, seed));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  const auto manifest = directory / kLabelManifestName;
  write_label_manifest(plan, manifest);
  return manifest;
}

}  // namespace nascore
