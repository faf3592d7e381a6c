#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lsnet {

/// Process exit codes of the lsnet tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitNonFiniteGradient = 4,
  kExitVersionMismatch = 5,
  kExitCheckFailed = 6,
  kExitDegenerateScene = 7,
};

/// Runs one subcommand (gen-curves, gen-scene, train, eval, gradcheck).
/// Human summaries go to `out`, diagnostics to `err`; every command writes
/// resolved_config.ini with the fully resolved options to the output directory.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lsnet
