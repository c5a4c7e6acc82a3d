#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "nascore/core.hpp"

namespace nascore {

/// Flags per video on the full NAS instrument.
inline constexpr std::size_t kNasActivityCount = 23;
/// Activities that occur in the corpus (label columns a01..a14, in table order).
inline constexpr std::size_t kObservedActivityCount = 14;
/// Activities kept after label reduction.
inline constexpr std::size_t kClassCount = 8;

struct ObservedActivity {
  std::string_view name;
  std::size_t occurrences_before;
  std::size_t occurrences_after;  // 0 for activities dropped by the reduction
};

inline constexpr std::array<ObservedActivity, kObservedActivityCount> kObservedActivities{{
    {"Present at bedside AND continuous observation", 88, 65},
    {"Specific ICU therapies", 63, 58},
    {"Adjusting or manipulating NG tube/feeds", 20, 0},
    {"Checking or insertion of urinary catheter", 11, 0},
    {"Intratracheal suctioning", 9, 0},
    {"Care of artificial airways", 34, 0},
    {"Respiratory Support", 49, 0},
    {"Processing of clinical data", 85, 68},
    {"Support/interaction with relatives", 57, 54},
    {"Mobilisation and positioning", 73, 60},
    {"Care of drains", 23, 0},
    {"Hygiene procedure", 54, 46},
    {"Medication", 59, 57},
    {"Blood taking", 55, 50},
}};

/// One retained activity class with its Average NAS.
struct Activity {
  std::size_t class_index;
  std::size_t column;  // 0-based label column (a01 -> 0)
  std::string_view name;
  Scalar average_nas;
};

inline constexpr std::array<Activity, kClassCount> kActivityTable{{
    {0, 0, "Present at bedside AND continuous observation", 12.07},
    {1, 1, "Specific ICU therapies", 2.80},
    {2, 7, "Processing of clinical data", 19.13},
    {3, 8, "Support/interaction with relatives", 18.00},
    {4, 9, "Mobilisation and positioning", 11.63},
    {5, 11, "Hygiene procedure", 13.53},
    {6, 12, "Medication", 5.60},
    {7, 13, "Blood taking", 4.30},
}};

/// Average NAS of a retained class; throws kIndexOutOfRange outside [0, 7].
Scalar avg_nas(std::size_t class_index);
/// Class index for a label column, if that column is a retained activity.
std::optional<std::size_t> class_for_column(std::size_t column);
std::string_view class_name(std::size_t class_index);

}  // namespace nascore
