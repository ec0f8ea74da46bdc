#pragma once

#include <stdexcept>
#include <string>

namespace netsift {

// Exit-code contract shared by the CLI and the test suites:
// 0 success, 1 I/O, 2 format/config, 3 verification failure.
enum ExitCode : int {
    kExitOk = 0,
    kExitIo = 1,
    kExitFormat = 2,
    kExitVerify = 3,
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct VerifyError : std::runtime_error {
    explicit VerifyError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace netsift
