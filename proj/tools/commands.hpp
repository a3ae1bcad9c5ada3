#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dtkd::cli {

/// Runs one subcommand. `args` excludes the program name. Failures print a
/// JSON object {"error": kind, "message": text} to `err` and return nonzero.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dtkd::cli
