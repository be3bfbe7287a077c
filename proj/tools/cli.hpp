#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cadapter::cli {

/// Runs one CLI invocation. `args` excludes the program name. Exit codes:
/// 0 success, 1 validation/IO error, 2 audit violation.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace cadapter::cli
