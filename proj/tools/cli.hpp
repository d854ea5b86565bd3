#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace stepsteer::cli {

// Exit statuses.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;

// Runs one subcommand. Results go to `out`; failures print a single JSON
// line {"error": ..., "detail": ...} to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// "a:b:step" (end exclusive) or a comma list. Throws ConfigError.
std::vector<int> parse_int_list(const std::string& text);
std::vector<double> parse_double_list(const std::string& text);

}  // namespace stepsteer::cli
