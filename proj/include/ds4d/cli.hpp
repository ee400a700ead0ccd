#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ds4d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `ds4d` invocation. Reports go to `out`, usage errors and
/// diagnostics to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ds4d::cli
