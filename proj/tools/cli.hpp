#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tpmil::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one `tpmil <subcommand> ...` invocation. args[0] is the program name.
/// Returns 0 on success, 1 on validation errors, 2 on runtime failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tpmil::cli
