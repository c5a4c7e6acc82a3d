#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nascore {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `nascore` command. `args` excludes the program name. Results go
/// to `out`, progress and diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nascore
