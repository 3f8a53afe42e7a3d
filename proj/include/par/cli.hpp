#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace par::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kCheckpointError = 4 };

/// Runs the `par` command line. Messages go to `out` and `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Parses "a..b", "a,b,c" or a single integer.
std::vector<unsigned long long> parse_seed_list(const std::string& text);

}  // namespace par::cli
