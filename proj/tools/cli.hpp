#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stagecraft::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kValidationFailure = 1;
inline constexpr int kProviderFailure = 2;
inline constexpr int kUsage = 64;

/// Runs one command line (without the program name). `in` feeds `play`.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace stagecraft::cli
