#pragma once

#include <ostream>

namespace tpr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point shared by the executable and the integration tests. Errors are
/// reported on `err` as a single line: `tpr: error kind=<config|runtime> msg="..."`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tpr::cli
