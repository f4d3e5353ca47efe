#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace notehelp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command line (without the program name). Usage errors exit 2,
/// domain errors exit 1; every successful command writes a RunManifest
/// beside its primary output.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int main(int argc, char** argv);

}  // namespace notehelp::cli
