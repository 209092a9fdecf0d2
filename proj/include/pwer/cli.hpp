#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace pwer {

inline constexpr std::string_view kToolVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3 };

/// 64-bit FNV-1a of a byte string, printed as 16 hex digits in manifests.
std::uint64_t fnv1a(std::string_view bytes);

/// Runs the command line `args` (without the program name). Results go to
/// `out` or to the --out file; errors are written to `err` as one JSON line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pwer
