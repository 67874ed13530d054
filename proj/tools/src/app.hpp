#pragma once

namespace shwmpc::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericalError = 3, kCheckFailed = 4 };

/// Entry point of the `shwmpc` tool; returns the process exit code.
int run(int argc, char** argv);

}  // namespace shwmpc::cli
