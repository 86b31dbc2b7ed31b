#pragma once

namespace vicc {

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 2 usage error, 3 format/consistency error, 4 numerical failure.
int run_cli(int argc, const char* const* argv);

}  // namespace vicc
