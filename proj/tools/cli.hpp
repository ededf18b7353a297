#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace defrec::cli {

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kData = 2;
inline constexpr int kNumerical = 3;

/// Run the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace defrec::cli
