#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rest::cli {

// Process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataFormat = 2;
inline constexpr int kNumerical = 3;

// Runs one command. args excludes the program name. Errors are reported as a
// single "error: code=<n> kind=<kind> message=<text>" line on err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

}  // namespace rest::cli
