#pragma once

// Command-line front end: forge, eval, parse, gradcheck and stats.
//
// Exit codes: 0 success, 1 validation failure (a parse or gradient check that
// did not pass), 2 input error, 3 provider error. Errors are reported on the
// error stream as one JSON object {"error", "message", ...}.

#include <ostream>
#include <string>
#include <vector>

namespace medground::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitProvider = 3;

// `args` excludes the program name.
int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace medground::cli
