// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace jerkrom::app {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,     ///< runtime failure (divergence, solver blow-up, failed self-test)
  kUsage = 2,       ///< unknown command or flag, malformed flag value
  kValidation = 3,  ///< invalid configuration or input; the message names the key or path
};

/// Parses `argv` and runs one subcommand. Never throws.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace jerkrom::app
