#pragma once

#include <string>
#include <vector>

namespace recbase::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Runs one command line (argv[0] is the program name) and returns the
/// process exit code: 0 success, 2 config, 3 data, 4 divergence,
/// 5 undefined metric, 6 checkpoint/vocabulary mismatch, 7 invalid state.
int main(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace recbase::cli
