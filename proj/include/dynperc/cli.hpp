#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dynperc::cli {

/// Exit codes of `run`.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitCheck = 3;

/// Runs the command line `args` (without the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::vector<std::string> subcommands();

/// Config keys accepted by a subcommand, in schema order.
std::vector<std::string> config_keys(const std::string& subcommand);

/// JSON Schema (draft 2020-12) of every subcommand's config, pretty-printed.
std::string config_schema();

/// Header line of every CSV a subcommand can write, keyed by file name.
std::vector<std::pair<std::string, std::string>> csv_headers(const std::string& subcommand);

}  // namespace dynperc::cli
