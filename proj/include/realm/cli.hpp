#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "realm/error.hpp"

namespace realm::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2, kIo = 3 };

ExitCode exit_code_for(ErrorCode code);

/// Runs one subcommand; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace realm::cli
