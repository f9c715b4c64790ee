#pragma once

#include <iosfwd>
#include <span>
#include <string>

#include "ctxlstm/common.hpp"

namespace ctxlstm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitHashMismatch = 3;
inline constexpr int kExitNumerical = 4;
inline constexpr int kExitCheckFailed = 5;

int exit_code(ErrorKind kind);

// args excludes the program name. Diagnostics go to err, reports to out.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace ctxlstm::cli
