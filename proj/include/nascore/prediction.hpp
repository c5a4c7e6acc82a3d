#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "nascore/core.hpp"

namespace nascore {

/// Indirect: classify into one of 8 activities, then look up Average NAS.
/// Direct: regress the NAS value.
enum class Method { kIndirect, kDirect };

std::string_view to_string(Method method);
Method parse_method(std::string_view text);

struct Prediction {
  std::string video_id;
  std::size_t fold = 0;
  std::size_t true_class = 0;
  std::vector<Scalar> outputs;  // 8 logits (indirect) or 1 score (direct)
};

}  // namespace nascore
