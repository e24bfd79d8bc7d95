#pragma once
// Command-line front end: synth, train, eval, predict, verify, ablate.

#include <ostream>

namespace aesth {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitVerifyFailed = 1,
  kExitIo = 2,
  kExitNumeric = 3,
  kExitConfig = 4,  // config mismatch, bad flags or config file
  kExitInput = 5,   // input constraint, e.g. image larger than the canvas
};

/// Runs one command; never throws. Reports go to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace aesth
