#pragma once

namespace gjscc {

/// Entry point of the gjscc command. Exit codes: 0 success, 1 runtime error,
/// 2 usage error.
int run_cli(int argc, char** argv);

}  // namespace gjscc
