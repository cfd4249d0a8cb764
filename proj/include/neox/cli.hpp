#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace neox::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kValidation = 2;
inline constexpr int kRuntime = 3;

// Runs one neoxkit invocation. args excludes the program name. Results go to
// out, diagnostics to err.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace neox::cli
