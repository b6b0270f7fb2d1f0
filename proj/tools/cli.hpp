#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gshield::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kConfig = 2;
inline constexpr int kData = 3;
inline constexpr int kNumeric = 4;

/// Runs one invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace gshield::cli
