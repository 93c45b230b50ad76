#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rfs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

/// Runs the lab command line. Returns 0 on success, 1 on configuration
/// errors, 2 on runtime failures. Diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rfs::cli
