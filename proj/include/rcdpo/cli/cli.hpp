#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rcdpo::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kStageFailure = 3 };

/// Runs one subcommand: sft, build-pref, train, search, prune, eval-chair,
/// eval-pope or diagnose. `args` excludes the program name. The stage summary
/// goes to `out`; on failure a {"stage","error","detail"} document goes to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rcdpo::cli
