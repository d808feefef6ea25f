#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace frepa {

inline constexpr const char* kToolVersion = "0.1.0";

/// Runs one subcommand. `args` excludes the program name. Returns 0 on
/// success, 1 on usage errors and 2 on data errors or a failed check.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace frepa
