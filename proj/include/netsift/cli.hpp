#pragma once

namespace netsift {

// Full command-line entry point; returns the process exit code.
// 0 success, 1 I/O error, 2 format/config error, 3 verification failure.
int cli_main(int argc, const char* const* argv);

}  // namespace netsift
