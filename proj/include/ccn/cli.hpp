#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ccn::cli {

// Stable process exit codes.
enum Exit : int
{
  Ok = 0,
  CheckFailed = 1,
  Usage = 2,
  Io = 3,
  EmptySplit = 4,
  CheckpointFormat = 5,
  Alignment = 6,
};

/*
 * Runs one subcommand. `args` excludes the program name. Structured output
 * (one JSON document per line) goes to `out`, diagnostics to `err`.
 */
auto run(std::vector<std::string> const &args, std::ostream &out, std::ostream &err) -> int;

} // namespace ccn::cli
